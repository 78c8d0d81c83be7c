#include "cadapt/sgd.hpp"

namespace cadapt {

SgdState::SgdState(double learning_rate, double momentum, double weight_decay)
    : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
    set_learning_rate(learning_rate);
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("momentum must lie in [0, 1), got " + std::to_string(momentum));
    }
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
}

void SgdState::set_learning_rate(double lr) {
    if (!(lr > 0.0)) {
        throw std::invalid_argument("learning rate must be positive, got " + std::to_string(lr));
    }
    lr_ = lr;
}

void SgdState::step(std::span<Tensor> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) {
        throw ShapeError("sgd: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].shape() != params[i].shape()) {
            throw ShapeError("sgd: gradient " + std::to_string(i) + " has shape " +
                             shape_string(grads[i].shape()) + ", parameter has " +
                             shape_string(params[i].shape()));
        }
        if (!grads[i].all_finite()) {
            throw NonFiniteError("sgd: non-finite gradient for parameter " + std::to_string(i) +
                                 " of shape " + shape_string(params[i].shape()));
        }
    }
    if (velocity_.empty()) {
        for (const auto& p : params) velocity_.emplace_back(p.shape());
    }
    if (velocity_.size() != params.size()) {
        throw ShapeError("sgd: parameter count changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto v = velocity_[i].values();
        auto g = grads[i].values();
        auto p = params[i].values();
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j] + weight_decay_ * p[j];
            p[j] -= lr_ * v[j];
        }
    }
}

}  // namespace cadapt
