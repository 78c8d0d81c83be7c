#include "cadapt/losses.hpp"

#include <stdexcept>

namespace cadapt {

std::size_t CameraLayout::index(Domain d, int camera_id) const {
    const int limit = d == Domain::Source ? source_cameras : target_cameras;
    if (camera_id < 0 || camera_id >= limit) {
        throw std::out_of_range(std::string(domain_name(d)) + " camera id " + std::to_string(camera_id) +
                                " outside [0, " + std::to_string(limit) + ")");
    }
    return static_cast<std::size_t>(camera_id + (d == Domain::Target ? source_cameras : 0));
}

std::string scheme_name(SchemeKind s) {
    switch (s) {
        case SchemeKind::None: return "none";
        case SchemeKind::Grl: return "grl";
        case SchemeKind::Cce: return "cce";
        case SchemeKind::Aoe: return "aoe";
        case SchemeKind::Dal: return "dal";
    }
    return "none";
}

SchemeKind parse_scheme(const std::string& name) {
    if (name == "none") return SchemeKind::None;
    if (name == "grl") return SchemeKind::Grl;
    if (name == "cce") return SchemeKind::Cce;
    if (name == "aoe") return SchemeKind::Aoe;
    if (name == "dal") return SchemeKind::Dal;
    throw std::invalid_argument("unknown scheme '" + name + "' (expected none, grl, cce, aoe, dal)");
}

namespace {

void check_rows(const Tensor& probs, std::size_t n) {
    if (probs.rows() != n) {
        throw ShapeError("loss: " + std::to_string(n) + " labels for probabilities of shape " +
                         shape_string(probs.shape()));
    }
}

Tensor one_hot(const Tensor& probs, std::span<const std::size_t> labels) {
    check_rows(probs, labels.size());
    Tensor t = Tensor::matrix(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= probs.cols()) {
            throw std::out_of_range("label " + std::to_string(labels[r]) + " outside [0, " +
                                    std::to_string(probs.cols()) + ")");
        }
        t.at(r, labels[r]) = 1.0;
    }
    return t;
}

}  // namespace

Var soft_target_nll(Var probs, const Tensor& targets) {
    if (targets.shape() != probs.shape()) {
        throw ShapeError("soft_target_nll: targets " + shape_string(targets.shape()) +
                         " vs probabilities " + shape_string(probs.shape()));
    }
    const auto rows = static_cast<double>(probs.value().rows());
    Var weighted = mul_const(log(clamp_min(probs, kProbFloor)), targets);
    return scale(sum(weighted), -1.0 / rows);
}

Var cal_d_loss(Var probs, std::span<const std::size_t> labels) {
    return soft_target_nll(probs, one_hot(probs.value(), labels));
}

Var grl_generator_loss(Var probs, std::span<const std::size_t> labels) {
    return scale(cal_d_loss(probs, labels), -1.0);
}

Var cce_loss(Var probs, std::span<const Domain> domains, const CameraLayout& layout) {
    const Tensor& p = probs.value();
    check_rows(p, domains.size());
    if (p.cols() != layout.classes()) {
        throw ShapeError("cce_loss: " + std::to_string(p.cols()) + " columns for " +
                         std::to_string(layout.classes()) + " camera classes");
    }
    Tensor t = Tensor::matrix(p.rows(), p.cols());
    const auto cs = static_cast<std::size_t>(layout.source_cameras);
    for (std::size_t r = 0; r < domains.size(); ++r) {
        const bool from_target = domains[r] == Domain::Target;
        const std::size_t begin = from_target ? 0 : cs;
        const std::size_t end = from_target ? cs : p.cols();
        const double w = 1.0 / static_cast<double>(end - begin);
        for (std::size_t k = begin; k < end; ++k) t.at(r, k) = w;
    }
    return soft_target_nll(probs, t);
}

Var aoe_loss(Var probs, std::span<const std::size_t> labels) {
    const Tensor& p = probs.value();
    if (p.cols() < 2) throw ShapeError("aoe_loss needs at least two classes");
    Tensor t = one_hot(p, labels);
    const double w = 1.0 / static_cast<double>(p.cols() - 1);
    for (auto& v : t.values()) v = v > 0.0 ? 0.0 : w;
    return soft_target_nll(probs, t);
}

std::pair<Var, Var> dal_losses(Var probs, std::span<const Domain> domains) {
    if (probs.value().cols() != 2) {
        throw ShapeError("dal_losses needs a two-way head, got " + shape_string(probs.shape()));
    }
    std::vector<std::size_t> labels;
    labels.reserve(domains.size());
    for (auto d : domains) labels.push_back(d == Domain::Source ? 0 : 1);
    Var disc = cal_d_loss(probs, labels);
    return {disc, scale(disc, -1.0)};
}

Var source_cross_entropy(Var probs, std::span<const std::size_t> labels) {
    return cal_d_loss(probs, labels);
}

}  // namespace cadapt
