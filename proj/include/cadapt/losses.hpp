#ifndef CADAPT_LOSSES_HPP
#define CADAPT_LOSSES_HPP

#include <cstddef>
#include <span>
#include <string>
#include <utility>

#include "cadapt/tape.hpp"
#include "cadapt/world.hpp"

namespace cadapt {

/// Probabilities are clamped to this floor before any log.
inline constexpr double kProbFloor = 1e-12;

/// Global camera classes: source cameras occupy [0, C_s), target cameras
/// [C_s, C_s + C_t).
struct CameraLayout {
    int source_cameras = 0;
    int target_cameras = 0;

    std::size_t classes() const noexcept {
        return static_cast<std::size_t>(source_cameras + target_cameras);
    }
    std::size_t index(Domain d, int camera_id) const;
    Domain domain_of(std::size_t k) const noexcept {
        return k < static_cast<std::size_t>(source_cameras) ? Domain::Source : Domain::Target;
    }
};

enum class SchemeKind { None, Grl, Cce, Aoe, Dal };

std::string scheme_name(SchemeKind s);
SchemeKind parse_scheme(const std::string& name);

/// -(1/n) sum_ij targets_ij * log(max(p_ij, floor)). The shared core of
/// every cross-entropy style loss here.
Var soft_target_nll(Var probs, const Tensor& targets);

/// Discriminator cross-entropy over the C camera classes.
Var cal_d_loss(Var probs, std::span<const std::size_t> labels);

/// Negated discriminator loss. Its backbone gradient is realised by the
/// reversal node in forward_discriminator, not by differentiating this value.
Var grl_generator_loss(Var probs, std::span<const std::size_t> labels);

/// Cross-domain camera equiprobability: each row is pushed toward a uniform
/// posterior over the opposite domain's cameras.
Var cce_loss(Var probs, std::span<const Domain> domains, const CameraLayout& layout);

/// Uniform posterior over the C-1 classes other than the true camera.
Var aoe_loss(Var probs, std::span<const std::size_t> labels);

/// Two-class domain head: discriminator cross-entropy and its negation.
std::pair<Var, Var> dal_losses(Var probs, std::span<const Domain> domains);

Var source_cross_entropy(Var probs, std::span<const std::size_t> labels);

}  // namespace cadapt

#endif
