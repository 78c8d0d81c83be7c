#ifndef CADAPT_GRADCHECK_HPP
#define CADAPT_GRADCHECK_HPP

#include <functional>
#include <span>
#include <vector>

#include "cadapt/tape.hpp"

namespace cadapt {

/// Builds a scalar loss on `tape` from the given parameter variables.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

/// Max over all parameter coordinates of
///   |analytic - central difference| / max(1, |analytic|).
/// The builder must be deterministic.
double finite_diff_check(const LossBuilder& loss, std::vector<Tensor> params, double h = 1e-5);

}  // namespace cadapt

#endif
