#include "cadapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cadapt {

namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    return loss(tape, vars).value().item();
}

}  // namespace

double finite_diff_check(const LossBuilder& loss, std::vector<Tensor> params, double h) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    const Var root = loss(tape, vars);
    const Gradients grads = tape.backward(root);

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor analytic = grads.of(vars[k]);
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            const double saved = params[k][i];
            params[k][i] = saved + h;
            const double up = evaluate(loss, params);
            params[k][i] = saved - h;
            const double down = evaluate(loss, params);
            params[k][i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace cadapt
