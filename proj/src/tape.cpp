#include "cadapt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cadapt {

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw std::invalid_argument("operands recorded on different tapes");
    }
    return *a.tape;
}

Tape& tape_of(Var a) {
    if (a.tape == nullptr) {
        throw std::invalid_argument("variable is not bound to a tape");
    }
    return *a.tape;
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
}

Tensor like(const Tensor& t, double fill = 0.0) { return Tensor(t.shape(), fill); }

Tape::Node unary(OpKind op, Var x, Tensor value) {
    Tape::Node n;
    n.op = op;
    n.parents[0] = x.id;
    n.nparents = 1;
    n.value = std::move(value);
    return n;
}

Tape::Node binary(OpKind op, Var a, Var b, Tensor value) {
    Tape::Node n;
    n.op = op;
    n.parents[0] = a.id;
    n.parents[1] = b.id;
    n.nparents = 2;
    n.value = std::move(value);
    return n;
}

void accumulate(Tensor& into, const Tensor& g) {
    if (into.size() == 0) {
        into = g;
        return;
    }
    auto dst = into.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor matmul_at_b(const Tensor& a, const Tensor& g) {
    // a^T g : (k x n)(n x m) -> k x m
    const std::size_t n = a.rows(), k = a.cols(), m = g.cols();
    Tensor out = Tensor::matrix(k, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            auto orow = out.row_span(p);
            auto grow = g.row_span(i);
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * grow[j];
        }
    }
    return out;
}

Tensor matmul_a_bt(const Tensor& g, const Tensor& b) {
    // g b^T : (n x m)(m x k) -> n x k
    const std::size_t n = g.rows(), m = g.cols(), k = b.rows();
    Tensor out = Tensor::matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        auto grow = g.row_span(i);
        for (std::size_t p = 0; p < k; ++p) {
            auto brow = b.row_span(p);
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
            out.at(i, p) = s;
        }
    }
    return out;
}

const char* op_name(OpKind op) noexcept {
    switch (op) {
        case OpKind::Constant: return "constant";
        case OpKind::Parameter: return "parameter";
        case OpKind::MatMul: return "matmul";
        case OpKind::AddBias: return "add_bias";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::MulConst: return "mul_const";
        case OpKind::Relu: return "relu";
        case OpKind::SoftmaxRows: return "softmax_rows";
        case OpKind::Log: return "log";
        case OpKind::ClampMin: return "clamp_min";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Hinge: return "hinge";
        case OpKind::Mean: return "mean";
        case OpKind::Sum: return "sum";
        case OpKind::SumRows: return "sum_rows";
        case OpKind::L2NormalizeRows: return "l2_normalize_rows";
        case OpKind::PairwiseSqDist: return "pairwise_sqdist";
        case OpKind::SliceRows: return "slice_rows";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::GradReverse: return "grad_reverse";
    }
    return "?";
}

}  // namespace

const Tensor& Var::value() const { return tape_of(*this).value(*this); }

Var Tape::push(Node node) {
    if (!node.value.all_finite()) {
        throw DomainError(std::string(op_name(node.op)) + " produced non-finite values");
    }
    if (node.op == OpKind::Parameter) {
        node.needs_grad = true;
    } else {
        for (std::uint8_t i = 0; i < node.nparents; ++i) {
            node.needs_grad = node.needs_grad || nodes_[node.parents[i]].needs_grad;
        }
    }
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = OpKind::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::parameter(Tensor value) {
    Node n;
    n.op = OpKind::Parameter;
    n.value = std::move(value);
    return push(std::move(n));
}

Gradients::Gradients(const Tape& tape, std::vector<Tensor> grads)
    : tape_(&tape), grads_(std::move(grads)) {}

Tensor Gradients::of(Var v) const {
    if (v.id < grads_.size() && grads_[v.id].size() != 0) {
        return grads_[v.id];
    }
    return like(tape_->value(v));
}

Gradients Tape::backward(Var root) const {
    if (root.tape != this) {
        throw std::invalid_argument("backward root belongs to another tape");
    }
    if (value(root).size() != 1) {
        throw DomainError("backward root must be scalar, got shape " +
                          shape_string(value(root).shape()));
    }
    std::vector<Tensor> grads(root.id + 1);
    grads[root.id] = like(value(root), 1.0);

    for (std::size_t id = root.id + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (!n.needs_grad || grads[id].size() == 0 || n.nparents == 0) continue;
        const Tensor& g = grads[id];
        const Tensor& y = n.value;
        const std::size_t p0 = n.parents[0];
        const std::size_t p1 = n.parents[1];
        auto wants = [&](std::size_t p) { return nodes_[p].needs_grad; };
        const Tensor& x = nodes_[p0].value;

        switch (n.op) {
            case OpKind::Constant:
            case OpKind::Parameter:
                break;
            case OpKind::MatMul: {
                if (wants(p0)) accumulate(grads[p0], matmul_a_bt(g, nodes_[p1].value));
                if (wants(p1)) accumulate(grads[p1], matmul_at_b(x, g));
                break;
            }
            case OpKind::AddBias: {
                if (wants(p0)) accumulate(grads[p0], g);
                if (wants(p1)) {
                    Tensor gb = like(nodes_[p1].value);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
                    }
                    accumulate(grads[p1], gb);
                }
                break;
            }
            case OpKind::Add:
            case OpKind::Sub: {
                if (wants(p0)) accumulate(grads[p0], g);
                if (wants(p1)) {
                    if (n.op == OpKind::Add) {
                        accumulate(grads[p1], g);
                    } else {
                        Tensor neg = g;
                        for (auto& v : neg.values()) v = -v;
                        accumulate(grads[p1], neg);
                    }
                }
                break;
            }
            case OpKind::Scale:
            case OpKind::GradReverse: {
                const double f = n.op == OpKind::Scale ? n.scalar : -n.scalar;
                Tensor gx = g;
                for (auto& v : gx.values()) v *= f;
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::AddScalar:
                accumulate(grads[p0], g);
                break;
            case OpKind::MulConst: {
                Tensor gx = g;
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= n.saved[i];
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::Relu:
            case OpKind::Hinge: {
                Tensor gx = like(x);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > 0.0 ? g[i] : 0.0;
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::ClampMin: {
                Tensor gx = like(x);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > n.scalar ? g[i] : 0.0;
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::SoftmaxRows: {
                Tensor gx = like(x);
                for (std::size_t r = 0; r < y.rows(); ++r) {
                    auto yr = y.row_span(r);
                    auto gr = g.row_span(r);
                    double dot = 0.0;
                    for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
                    auto out = gx.row_span(r);
                    for (std::size_t c = 0; c < yr.size(); ++c) out[c] = yr[c] * (gr[c] - dot);
                }
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::Log: {
                Tensor gx = like(x);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] / x[i];
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::Sqrt: {
                Tensor gx = like(x);
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    gx[i] = y[i] > 0.0 ? g[i] / (2.0 * y[i]) : 0.0;
                }
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::Mean:
            case OpKind::Sum: {
                const double f = n.op == OpKind::Mean ? g[0] / static_cast<double>(x.size()) : g[0];
                accumulate(grads[p0], like(x, f));
                break;
            }
            case OpKind::SumRows: {
                Tensor gx = like(x);
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    for (auto& v : gx.row_span(r)) v = g[r];
                }
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::L2NormalizeRows: {
                Tensor gx = like(x);
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    const double norm = n.saved[r];
                    if (norm == 0.0) continue;
                    auto yr = y.row_span(r);
                    auto gr = g.row_span(r);
                    double dot = 0.0;
                    for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
                    auto out = gx.row_span(r);
                    for (std::size_t c = 0; c < yr.size(); ++c) {
                        out[c] = (gr[c] - yr[c] * dot) / norm;
                    }
                }
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::PairwiseSqDist: {
                const std::size_t rows = x.rows(), d = x.cols();
                Tensor gx = like(x);
                for (std::size_t i = 0; i < rows; ++i) {
                    auto xi = x.row_span(i);
                    auto out = gx.row_span(i);
                    for (std::size_t j = 0; j < rows; ++j) {
                        if (i == j) continue;
                        const double w = 2.0 * (g.at(i, j) + g.at(j, i));
                        if (w == 0.0) continue;
                        auto xj = x.row_span(j);
                        for (std::size_t c = 0; c < d; ++c) out[c] += w * (xi[c] - xj[c]);
                    }
                }
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::SliceRows: {
                Tensor gx = like(x);
                const std::size_t offset = n.index * x.cols();
                for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] = g[i];
                accumulate(grads[p0], gx);
                break;
            }
            case OpKind::ConcatRows: {
                const std::size_t split = x.size();
                if (wants(p0)) {
                    Tensor ga = like(x);
                    for (std::size_t i = 0; i < split; ++i) ga[i] = g[i];
                    accumulate(grads[p0], ga);
                }
                if (wants(p1)) {
                    Tensor gb = like(nodes_[p1].value);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = g[split + i];
                    accumulate(grads[p1], gb);
                }
                break;
            }
        }
    }
    return Gradients(*this, std::move(grads));
}

// ---------------------------------------------------------------------------
// Forward kernels

Tensor matmul_values(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        auto orow = out.row_span(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            auto brow = b.row_span(p);
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor softmax_rows_values(const Tensor& x) {
    Tensor y = Tensor::matrix(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row_span(r);
        auto yr = y.row_span(r);
        const double mx = *std::max_element(xr.begin(), xr.end());
        double total = 0.0;
        for (std::size_t c = 0; c < xr.size(); ++c) {
            yr[c] = std::exp(xr[c] - mx);
            total += yr[c];
        }
        for (auto& v : yr) v /= total;
    }
    return y;
}

Tensor pairwise_sqdist_values(const Tensor& x) {
    const std::size_t n = x.rows();
    Tensor out = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row_span(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            auto xj = x.row_span(j);
            double s = 0.0;
            for (std::size_t c = 0; c < xi.size(); ++c) {
                const double d = xi[c] - xj[c];
                s += d * d;
            }
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    }
    return out;
}

Tensor l2_normalize_rows_values(const Tensor& x) {
    Tensor y = Tensor::matrix(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row_span(r);
        double s = 0.0;
        for (double v : xr) s += v * v;
        const double norm = std::sqrt(s);
        if (norm == 0.0) continue;
        auto yr = y.row_span(r);
        for (std::size_t c = 0; c < xr.size(); ++c) yr[c] = xr[c] / norm;
    }
    return y;
}

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    return t.push(binary(OpKind::MatMul, a, b, matmul_values(a.value(), b.value())));
}

Var add_bias(Var x, Var bias) {
    Tape& t = same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (bv.size() != xv.cols() || bv.rows() != 1) shape_mismatch("add_bias", xv, bv);
    Tensor y = xv;
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row_span(r);
        for (std::size_t c = 0; c < yr.size(); ++c) yr[c] += bv[c];
    }
    return t.push(binary(OpKind::AddBias, x, bias, std::move(y)));
}

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b);
    if (a.shape() != b.shape()) shape_mismatch("add", a.value(), b.value());
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
    return t.push(binary(OpKind::Add, a, b, std::move(y)));
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b);
    if (a.shape() != b.shape()) shape_mismatch("sub", a.value(), b.value());
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
    return t.push(binary(OpKind::Sub, a, b, std::move(y)));
}

Var scale(Var x, double factor) {
    Tensor y = x.value();
    for (auto& v : y.values()) v *= factor;
    auto n = unary(OpKind::Scale, x, std::move(y));
    n.scalar = factor;
    return tape_of(x).push(std::move(n));
}

Var add_scalar(Var x, double shift) {
    Tensor y = x.value();
    for (auto& v : y.values()) v += shift;
    auto n = unary(OpKind::AddScalar, x, std::move(y));
    n.scalar = shift;
    return tape_of(x).push(std::move(n));
}

Var mul_const(Var x, Tensor weights) {
    if (weights.shape() != x.shape()) shape_mismatch("mul_const", x.value(), weights);
    Tensor y = x.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= weights[i];
    auto n = unary(OpKind::MulConst, x, std::move(y));
    n.saved = std::move(weights);
    return tape_of(x).push(std::move(n));
}

Var relu(Var x) {
    Tensor y = x.value();
    for (auto& v : y.values()) v = std::max(v, 0.0);
    return tape_of(x).push(unary(OpKind::Relu, x, std::move(y)));
}

Var hinge(Var x) {
    Tensor y = x.value();
    for (auto& v : y.values()) v = std::max(v, 0.0);
    return tape_of(x).push(unary(OpKind::Hinge, x, std::move(y)));
}

Var softmax_rows(Var x) {
    return tape_of(x).push(unary(OpKind::SoftmaxRows, x, softmax_rows_values(x.value())));
}

Var log(Var x) {
    Tensor y = x.value();
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(y[i] > 0.0)) {
            throw DomainError("log of non-positive value " + std::to_string(y[i]) +
                              " at flat index " + std::to_string(i));
        }
        y[i] = std::log(y[i]);
    }
    return tape_of(x).push(unary(OpKind::Log, x, std::move(y)));
}

Var clamp_min(Var x, double floor) {
    Tensor y = x.value();
    for (auto& v : y.values()) v = std::max(v, floor);
    auto n = unary(OpKind::ClampMin, x, std::move(y));
    n.scalar = floor;
    return tape_of(x).push(std::move(n));
}

Var sqrt(Var x) {
    Tensor y = x.value();
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0.0) {
            throw DomainError("sqrt of negative value at flat index " + std::to_string(i));
        }
        y[i] = std::sqrt(y[i]);
    }
    return tape_of(x).push(unary(OpKind::Sqrt, x, std::move(y)));
}

Var mean(Var x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.values()) s += v;
    return tape_of(x).push(
        unary(OpKind::Mean, x, Tensor::scalar(s / static_cast<double>(xv.size()))));
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return tape_of(x).push(unary(OpKind::Sum, x, Tensor::scalar(s)));
}

Var sum_rows(Var x) {
    const Tensor& xv = x.value();
    Tensor y = Tensor::matrix(xv.rows(), 1);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double s = 0.0;
        for (double v : xv.row_span(r)) s += v;
        y[r] = s;
    }
    return tape_of(x).push(unary(OpKind::SumRows, x, std::move(y)));
}

Var l2_normalize_rows(Var x) {
    const Tensor& xv = x.value();
    Tensor norms = Tensor::matrix(xv.rows(), 1);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double s = 0.0;
        for (double v : xv.row_span(r)) s += v * v;
        norms[r] = std::sqrt(s);
    }
    auto n = unary(OpKind::L2NormalizeRows, x, l2_normalize_rows_values(xv));
    n.saved = std::move(norms);
    return tape_of(x).push(std::move(n));
}

Var pairwise_sqdist(Var x) {
    return tape_of(x).push(unary(OpKind::PairwiseSqDist, x, pairwise_sqdist_values(x.value())));
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
    const Tensor& xv = x.value();
    if (begin >= end || end > xv.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for shape " +
                         shape_string(xv.shape()));
    }
    const std::size_t cols = xv.cols();
    std::vector<double> vals(xv.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                             xv.values().begin() + static_cast<std::ptrdiff_t>(end * cols));
    auto n = unary(OpKind::SliceRows, x, Tensor({end - begin, cols}, std::move(vals)));
    n.index = begin;
    return tape_of(x).push(std::move(n));
}

Var concat_rows(Var a, Var b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.cols()) shape_mismatch("concat_rows", av, bv);
    std::vector<double> vals(av.values().begin(), av.values().end());
    vals.insert(vals.end(), bv.values().begin(), bv.values().end());
    return t.push(
        binary(OpKind::ConcatRows, a, b, Tensor({av.rows() + bv.rows(), av.cols()}, std::move(vals))));
}

Var grad_reverse(Var x, double lambda) {
    if (!(lambda > 0.0)) {
        throw std::invalid_argument("gradient reversal coefficient must be positive");
    }
    auto n = unary(OpKind::GradReverse, x, x.value());
    n.scalar = lambda;
    return tape_of(x).push(std::move(n));
}

}  // namespace cadapt
