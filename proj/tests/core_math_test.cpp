#include <doctest.h>

#include <cmath>

#include "cadapt/gradcheck.hpp"
#include "cadapt/parallel.hpp"
#include "cadapt/rng.hpp"
#include "cadapt/sgd.hpp"
#include "cadapt/tape.hpp"
#include "oracles.hpp"

using namespace cadapt;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

Var two_layer(Tape&, std::span<const Var> p) {
    Var h = relu(add_bias(matmul(p[0], p[1]), p[2]));
    Var logits = matmul(h, p[3]);
    return mean(log(clamp_min(softmax_rows(logits), 1e-12)));
}

}  // namespace

TEST_SUITE("core-math") {

TEST_CASE("relu zeroes negatives") {
    Tape t;
    Var x = t.constant(Tensor::row({-1, 2, 0}));
    CHECK(relu(x).value() == Tensor::row({0, 2, 0}));
}

TEST_CASE("softmax of zeros is uniform and rows sum to one") {
    Tape t;
    Var s = softmax_rows(t.constant(Tensor::row({0, 0, 0})));
    for (double v : s.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Rng rng(4);
    const Tensor p = softmax_rows_values(random_tensor(rng, 20, 7));
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double total = 0.0;
        for (double v : p.row_span(r)) total += v;
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax is stable for large logits") {
    const Tensor p = softmax_rows_values(Tensor::row({1000.0, 1000.0}));
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p.all_finite());
}

TEST_CASE("pairwise squared distance of two points") {
    Tape t;
    Var d = pairwise_sqdist(t.constant(Tensor::from_rows({{0, 0}, {3, 4}})));
    CHECK(d.value() == Tensor::from_rows({{0, 25}, {25, 0}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape t;
    Var a = t.constant(Tensor::matrix(2, 3));
    Var b = t.constant(Tensor::matrix(2, 3));
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("log of a non-positive value is a domain error") {
    Tape t;
    CHECK_THROWS_AS(log(t.constant(Tensor::row({1.0, 0.0}))), DomainError);
    CHECK_THROWS_AS(cadapt::sqrt(t.constant(Tensor::row({-1.0}))), DomainError);
}

TEST_CASE("backward rejects a non-scalar root") {
    Tape t;
    Var x = t.parameter(Tensor::row({1, 2}));
    CHECK_THROWS_AS(t.backward(scale(x, 2.0)), DomainError);
}

TEST_CASE("constants only give zero parameter gradients") {
    Tape t;
    Var w = t.parameter(Tensor::row({1, 2, 3}));
    Var c = t.constant(Tensor::row({4, 5, 6}));
    const auto g = t.backward(mean(c));
    const Tensor gw = g.of(w);
    for (double v : gw.values()) CHECK(v == 0.0);
}

TEST_CASE("backward twice gives identical gradients") {
    Rng rng(9);
    Tape t;
    std::vector<Var> p{t.constant(random_tensor(rng, 5, 4)), t.parameter(random_tensor(rng, 4, 6)),
                       t.parameter(random_tensor(rng, 1, 6)), t.parameter(random_tensor(rng, 6, 3))};
    Var root = two_layer(t, p);
    const auto g1 = t.backward(root);
    const auto g2 = t.backward(root);
    for (std::size_t i = 1; i < p.size(); ++i) CHECK(g1.of(p[i]) == g2.of(p[i]));
}

TEST_CASE("two-layer network passes the finite difference check") {
    Rng rng(11);
    std::vector<Tensor> params{random_tensor(rng, 5, 4), random_tensor(rng, 4, 6), random_tensor(rng, 1, 6),
                               random_tensor(rng, 6, 3)};
    CHECK(finite_diff_check(two_layer, params) <= 1e-4);
}

TEST_CASE("finite_diff_check on half theta squared") {
    // sum of the pairwise squared distances of {theta, 0} is 2 theta^2
    LossBuilder half_sq = [](Tape& t, std::span<const Var> p) {
        Var both = concat_rows(p[0], t.constant(Tensor::row({0.0})));
        return scale(sum(pairwise_sqdist(both)), 0.25);
    };
    CHECK(finite_diff_check(half_sq, {Tensor::row({3.0})}) <= 1e-8);
}

TEST_CASE("composite of every kernel agrees with oracle differences") {
    Rng rng(21);
    const Tensor x0 = random_tensor(rng, 4, 3);
    const Tensor w = random_tensor(rng, 4, 3);
    auto build = [&](Tape& t, Var x) {
        Var n = l2_normalize_rows(x);
        Var d = cadapt::sqrt(clamp_min(pairwise_sqdist(n), 1e-12));
        Var h = hinge(add_scalar(sub(slice_rows(d, 0, 2), slice_rows(d, 2, 4)), 0.1));
        Var s = sum_rows(mul_const(x, w));
        Var e = add_bias(matmul(x, t.constant(Tensor::matrix(3, 2, 0.5))), t.constant(Tensor::row({1.0, 2.0})));
        Var lp = log(softmax_rows(relu(e)));
        return add(add(sum(h), mean(concat_rows(s, s))), mean(lp));
    };
    auto value = [&](const std::vector<double>& v) {
        Tape t;
        return build(t, t.parameter(Tensor({4, 3}, v))).value().item();
    };
    Tape t;
    Var x = t.parameter(x0);
    const Tensor g = t.backward(build(t, x)).of(x);
    const auto numeric = oracle::central_gradient(value, {x0.values().begin(), x0.values().end()});
    CHECK(oracle::relative_error({g.values().begin(), g.values().end()}, numeric) <= 1e-5);
}

TEST_CASE("gradient reversal negates and scales") {
    Tape t;
    Var x = t.parameter(Tensor::row({1.0, -2.0}));
    Var y = grad_reverse(x, 0.5);
    CHECK(y.value() == x.value());
    const Tensor g = t.backward(sum(y)).of(x);
    CHECK(g == Tensor::row({-0.5, -0.5}));
    CHECK_THROWS(grad_reverse(x, 0.0));
}

TEST_CASE("sgd without momentum") {
    SgdState opt(0.1, 0.0);
    std::vector<Tensor> p{Tensor::row({1.0})};
    std::vector<Tensor> g{Tensor::row({2.0})};
    opt.step(p, g);
    CHECK(p[0][0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("sgd with zero gradient leaves parameters") {
    SgdState opt(0.1, 0.9);
    std::vector<Tensor> p{Tensor::row({1.5, -2.0})};
    std::vector<Tensor> g{Tensor::row({0.0, 0.0})};
    opt.step(p, g);
    opt.step(p, g);
    CHECK(p[0] == Tensor::row({1.5, -2.0}));
}

TEST_CASE("sgd momentum accumulates") {
    SgdState opt(0.1, 0.9);
    std::vector<Tensor> p{Tensor::row({0.0})};
    std::vector<Tensor> g{Tensor::row({1.0})};
    opt.step(p, g);
    CHECK(p[0][0] == doctest::Approx(-0.1).epsilon(1e-15));
    opt.step(p, g);
    CHECK(p[0][0] == doctest::Approx(-0.1 - 0.19).epsilon(1e-14));
}

TEST_CASE("sgd rejects non-finite and mismatched gradients") {
    SgdState opt(0.1, 0.9);
    std::vector<Tensor> p{Tensor::row({0.0})};
    std::vector<Tensor> bad{Tensor::row({NAN})};
    CHECK_THROWS_AS(opt.step(p, bad), NonFiniteError);
    std::vector<Tensor> wrong{Tensor::row({1.0, 2.0})};
    CHECK_THROWS_AS(opt.step(p, wrong), ShapeError);
}

TEST_CASE("rng streams are reproducible and distinct") {
    Rng a = Rng::stream(5, "cal-batch"), b = Rng::stream(5, "cal-batch"), c = Rng::stream(5, "camera");
    bool differs = false;
    for (int i = 0; i < 16; ++i) {
        const auto x = a.next();
        CHECK(x == b.next());
        differs |= x != c.next();
    }
    CHECK(differs);
}

TEST_CASE("sample_sorted draws distinct sorted values") {
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
        const auto s = rng.sample_sorted(10, 4);
        REQUIRE(s.size() == 4);
        for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i - 1] < s[i]);
        CHECK(s.back() < 10);
    }
}

TEST_CASE("normal draws have unit variance") {
    Rng rng(17);
    double m = 0.0, v = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        m += x;
        v += x * x;
    }
    m /= n;
    v = v / n - m * m;
    CHECK(std::abs(m) < 0.01);
    CHECK(std::abs(v - 1.0) < 0.02);
}

TEST_CASE("parallel_for covers every index for any thread count") {
    for (std::size_t threads : {1u, 2u, 7u}) {
        set_thread_count(threads);
        std::vector<int> hit(1000, 0);
        parallel_for(hit.size(), [&](std::size_t i) { hit[i] += 1; });
        for (int h : hit) CHECK(h == 1);
    }
    set_thread_count(1);
}

}
