#ifndef CADAPT_SGD_HPP
#define CADAPT_SGD_HPP

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cadapt/tensor.hpp"

namespace cadapt {

/// Raised when a loss or gradient stops being finite; training halts on it.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Momentum SGD for one parameter group:  v <- mu v + g;  theta <- theta - lr v.
/// A non-zero weight decay adds wd * theta to g first.
class SgdState {
public:
    SgdState(double learning_rate, double momentum, double weight_decay = 0.0);

    double learning_rate() const noexcept { return lr_; }
    void set_learning_rate(double lr);
    double momentum() const noexcept { return momentum_; }
    const std::vector<Tensor>& velocity() const noexcept { return velocity_; }

    /// Updates params in place. Velocity buffers are created on first use and
    /// must keep matching the parameter shapes afterwards.
    void step(std::span<Tensor> params, std::span<const Tensor> grads);

private:
    double lr_;
    double momentum_;
    double weight_decay_;
    std::vector<Tensor> velocity_;
};

}  // namespace cadapt

#endif
