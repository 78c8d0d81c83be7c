#ifndef CADAPT_TAPE_HPP
#define CADAPT_TAPE_HPP

#include <cstddef>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "cadapt/tensor.hpp"

namespace cadapt {

/// Raised when a kernel receives values outside its domain (log of a
/// non-positive entry, sqrt of a negative one, non-scalar backward root).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

enum class OpKind : std::uint8_t {
    Constant,
    Parameter,
    MatMul,
    AddBias,
    Add,
    Sub,
    Scale,
    AddScalar,
    MulConst,
    Relu,
    SoftmaxRows,
    Log,
    ClampMin,
    Sqrt,
    Hinge,
    Mean,
    Sum,
    SumRows,
    L2NormalizeRows,
    PairwiseSqDist,
    SliceRows,
    ConcatRows,
    GradReverse,
};

class Gradients;

/// Define-by-run record of a computation. Nodes are appended in evaluation
/// order, so parents always precede children and a single reverse sweep is
/// a valid topological traversal.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool is_parameter(Var v) const { return nodes_.at(v.id).op == OpKind::Parameter; }
    OpKind op(Var v) const { return nodes_.at(v.id).op; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse sweep from a scalar root. Does not mutate the tape, so repeated
    /// calls return identical gradients.
    Gradients backward(Var root) const;

    // Used by the kernel functions below; not intended for direct use.
    struct Node {
        OpKind op = OpKind::Constant;
        std::size_t parents[2] = {0, 0};
        std::uint8_t nparents = 0;
        bool needs_grad = false;
        double scalar = 0.0;
        std::size_t index = 0;
        Tensor value;
        Tensor saved;
    };
    Var push(Node node);
    const Node& node(std::size_t id) const { return nodes_[id]; }

private:
    std::deque<Node> nodes_;  // stable addresses: values stay valid as the tape grows
};

/// Gradient of a backward root with respect to every node on the tape.
class Gradients {
public:
    Gradients(const Tape& tape, std::vector<Tensor> grads);

    /// Gradient for v; zeros of v's shape when no path reached it.
    Tensor of(Var v) const;

private:
    const Tape* tape_;
    std::vector<Tensor> grads_;
};

// Differentiable kernels. All take operands recorded on the same tape.
Var matmul(Var a, Var b);
/// x (n x m) plus bias (1 x m or m) broadcast over rows.
Var add_bias(Var x, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double shift);
/// Elementwise product with a constant tensor of the same shape.
Var mul_const(Var x, Tensor weights);
Var relu(Var x);
/// Numerically stabilized softmax over each row.
Var softmax_rows(Var x);
/// Natural log; every entry must be strictly positive.
Var log(Var x);
/// max(x, floor); the gradient is zero wherever the floor is active.
Var clamp_min(Var x, double floor);
Var sqrt(Var x);
/// [x]_+ elementwise.
Var hinge(Var x);
Var mean(Var x);
Var sum(Var x);
/// n x m -> n x 1 row sums.
Var sum_rows(Var x);
/// Each row divided by its Euclidean norm; zero rows stay zero.
Var l2_normalize_rows(Var x);
/// n x d -> n x n matrix of squared Euclidean distances between rows.
Var pairwise_sqdist(Var x);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var concat_rows(Var a, Var b);
/// Identity forward; multiplies the incoming gradient by -lambda.
Var grad_reverse(Var x, double lambda);

// Plain (untaped) helpers shared by kernels and callers.
Tensor matmul_values(const Tensor& a, const Tensor& b);
Tensor softmax_rows_values(const Tensor& x);
Tensor pairwise_sqdist_values(const Tensor& x);
Tensor l2_normalize_rows_values(const Tensor& x);

}  // namespace cadapt

#endif
