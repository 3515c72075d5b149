#include <cmath>

#include "doctest.h"
#include "tep/autograd.hpp"
#include "tep/error.hpp"
#include "tep/gradcheck.hpp"
#include "tep/layers.hpp"
#include "tep/optim.hpp"
#include "tep/rng.hpp"

using namespace tep;

TEST_CASE("tensor shape invariant") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), InvalidArgument);
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
}

TEST_CASE("gradient of x^2 at 3 is 6") {
    Tape tape;
    Tensor x = Tensor::scalar(3.0);
    Var xv = tape.parameter("x", x);
    auto grads = forward_backward(tape, ops::sum(ops::mul(xv, xv)));
    CHECK(grads.at("x").item() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("gradient of sum(sigmoid(x)) at 0 is 0.25") {
    Tape tape;
    Tensor x = Tensor::matrix(1, 4, 0.0);
    auto grads = forward_backward(tape, ops::sum(ops::sigmoid(tape.parameter("x", x))));
    for (double g : grads.at("x").data()) CHECK(g == 0.25);
}

TEST_CASE("matmul gradients match central finite differences") {
    Rng rng(11);
    Tensor a = Tensor::matrix(3, 4), b = Tensor::matrix(4, 2);
    for (double& v : a.storage()) v = rng.normal();
    for (double& v : b.storage()) v = rng.normal();

    // Oracle: plain loops, independent of the Eigen-backed op.
    auto loss = [](const Tensor& a, const Tensor& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
        return s;
    };
    Tape tape;
    auto grads = forward_backward(tape, ops::sum(ops::matmul(tape.parameter("a", a), tape.parameter("b", b))));
    const double h = 1e-5;
    for (auto* p : {&a, &b}) {
        const Tensor& g = grads.at(p == &a ? "a" : "b");
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double orig = (*p)[i];
            (*p)[i] = orig + h;
            const double up = loss(a, b);
            (*p)[i] = orig - h;
            const double down = loss(a, b);
            (*p)[i] = orig;
            const double fd = (up - down) / (2 * h);
            CHECK(std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-12) < 1e-6);
        }
    }
}

TEST_CASE("non-scalar loss is rejected; disconnected parameters get zero gradient") {
    Tape tape;
    Tensor x = Tensor::matrix(2, 2, 1.0), unused = Tensor::matrix(3, 1, 7.0);
    Var xv = tape.parameter("x", x);
    tape.parameter("unused", unused);
    CHECK_THROWS_AS(tape.backward(ops::relu(xv)), InvalidArgument);
    auto grads = tape.backward(ops::sum(xv));
    REQUIRE(grads.contains("unused"));
    for (double g : grads.at("unused").data()) CHECK(g == 0.0);
    // Backward of sum is a broadcast of ones, exactly.
    for (double g : grads.at("x").data()) CHECK(g == 1.0);
}

TEST_CASE("backward leaves the tape unchanged and can be replayed") {
    Tape tape;
    Tensor x = Tensor::row({0.3, -1.2, 2.0});
    Var y = ops::sum(ops::tanh(tape.parameter("x", x)));
    const auto n = tape.size();
    auto g1 = tape.backward(y);
    auto g2 = tape.backward(y);
    CHECK(tape.size() == n);
    CHECK(g1.at("x") == g2.at("x"));
}

TEST_CASE("frozen parameters receive no gradient entry") {
    Tape tape;
    Tensor a = Tensor::row({1.0, 2.0}), b = Tensor::row({3.0, 4.0});
    Var loss = ops::sum(ops::mul(tape.parameter("a", a), tape.parameter("b", b, false)));
    auto grads = tape.backward(loss);
    CHECK(grads.contains("a"));
    CHECK_FALSE(grads.contains("b"));
}

TEST_CASE("overflow raises a numeric error") {
    Tape tape;
    Var x = tape.constant(Tensor::row({1e308}));
    CHECK_THROWS_AS(ops::scale(x, 10.0), NumericError);
}

TEST_CASE("max pool breaks ties toward the earliest row") {
    Tape tape;
    Tensor x = Tensor::from_rows({{1.0, 5.0}, {3.0, 5.0}, {3.0, 2.0}});
    Var m = ops::max_rows(tape.parameter("x", x));
    CHECK(m.value()(0, 0) == 3.0);
    CHECK(m.value()(0, 1) == 5.0);
    auto g = tape.backward(ops::sum(m)).at("x");
    CHECK(g(1, 0) == 1.0);
    CHECK(g(2, 0) == 0.0);
    CHECK(g(0, 1) == 1.0);
    CHECK(g(1, 1) == 0.0);
}

TEST_CASE("causal convolution never reads the future") {
    Tape tape;
    Rng rng(3);
    Tensor w = init::glorot(6, 2, rng, 3 * 2, 2), b = Tensor::matrix(1, 2);
    Tensor x = Tensor::matrix(8, 2);
    for (double& v : x.storage()) v = rng.normal();
    Tensor y0 = ops::conv1d(tape.constant(x), tape.constant(w), tape.constant(b), 3, 2, ops::Padding::Causal).value();
    x(5, 0) += 1.0;
    Tensor y1 = ops::conv1d(tape.constant(x), tape.constant(w), tape.constant(b), 3, 2, ops::Padding::Causal).value();
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t j = 0; j < 2; ++j) CHECK(y0(t, j) == y1(t, j));
    CHECK(y0(5, 0) != y1(5, 0));
}

TEST_CASE("optimizer: zero gradients leave parameters unchanged but advance the step") {
    ParamMap params{{"w", Tensor::row({1.0, -2.0})}};
    OptimizerState st;
    GradMap grads{{"w", Tensor::row({0.0, 0.0})}};
    optimizer_step(params, grads, st);
    CHECK(params.at("w") == Tensor::row({1.0, -2.0}));
    CHECK(st.step == 1);
    optimizer_step(params, grads, st);
    CHECK(st.step == 2);
}

TEST_CASE("optimizer: Adam first step equals the bias-corrected closed form") {
    ParamMap params{{"w", Tensor::scalar(0.0)}};
    OptimizerState st;
    st.hyper.learning_rate = 0.01;
    st.hyper.epsilon = 1e-8;
    optimizer_step(params, GradMap{{"w", Tensor::scalar(0.5)}}, st);
    // t = 1: mhat = g, vhat = g^2, so delta = -lr * g / (|g| + eps).
    const double expected = -0.01 * 0.5 / (0.5 + 1e-8);
    CHECK(params.at("w").item() == doctest::Approx(expected).epsilon(1e-15));
    CHECK(params.at("w").item() == doctest::Approx(-0.0099999998).epsilon(1e-12));
}

TEST_CASE("optimizer: SGD rule and error paths") {
    ParamMap params{{"w", Tensor::row({1.0, 1.0})}};
    OptimizerState st;
    st.hyper.kind = OptimizerKind::Sgd;
    st.hyper.learning_rate = 0.1;
    optimizer_step(params, GradMap{{"w", Tensor::row({1.0, -2.0})}}, st);
    CHECK(params.at("w")[0] == doctest::Approx(0.9));
    CHECK(params.at("w")[1] == doctest::Approx(1.2));
    CHECK_THROWS_AS(optimizer_step(params, GradMap{{"w", Tensor::row({1.0})}}, st), InvalidArgument);
    st.hyper.learning_rate = 0.0;
    CHECK_THROWS_AS(optimizer_step(params, GradMap{{"w", Tensor::row({1.0, 1.0})}}, st), InvalidArgument);
}

TEST_CASE("optimizer updates are pure functions of their inputs") {
    Rng rng(5);
    ParamMap p0{{"a", Tensor::matrix(3, 3)}};
    for (double& v : p0.at("a").storage()) v = rng.normal();
    GradMap g{{"a", Tensor::matrix(3, 3, 0.1)}};
    ParamMap p1 = p0, p2 = p0;
    OptimizerState s1, s2;
    for (int i = 0; i < 5; ++i) {
        optimizer_step(p1, g, s1);
        optimizer_step(p2, g, s2);
    }
    CHECK(p1.at("a") == p2.at("a"));
    CHECK(s1.first_moment.at("a") == s2.first_moment.at("a"));
}

TEST_CASE("grad_check: dense (2,5)") {
    auto r = grad_check(LayerKind::Dense, {2, 5}, 1e-4);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: max-pool (4,3) with distinct values matches exactly") {
    auto r = grad_check(LayerKind::MaxPool, {4, 3}, 1e-4);
    CHECK(r.passed);
    CHECK(r.max_rel_error == 0.0);
}

TEST_CASE("grad_check: attention w=4 M=8 h=2") {
    GradCheckOptions o;
    o.heads = 2;
    auto r = grad_check(LayerKind::Attention, {4, 8}, 1e-4, o);
    CHECK(r.passed);
    CHECK(r.entries.size() == 9);  // input + 4 dense layers
}

TEST_CASE("grad_check: every layer kind over 20 seeds") {
    const std::pair<LayerKind, Shape> cases[] = {
        {LayerKind::Dense, {3, 5}},     {LayerKind::Conv1d, {6, 3}},   {LayerKind::Attention, {4, 8}},
        {LayerKind::LayerNorm, {3, 6}}, {LayerKind::LstmCell, {4, 3}}, {LayerKind::TcnBlock, {7, 2}},
        {LayerKind::MaxPool, {4, 3}},
    };
    for (const auto& [kind, shape] : cases) {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            GradCheckOptions o;
            o.seed = seed;
            auto r = grad_check(kind, shape, 1e-4, o);
            INFO(to_string(kind), " seed ", seed, " max rel ", r.max_rel_error);
            CHECK(r.passed);
        }
    }
}

TEST_CASE("grad_check reports bad input shapes instead of throwing") {
    auto r = grad_check(LayerKind::Dense, {5}, 1e-4);
    CHECK_FALSE(r.passed);
}

TEST_CASE("rng streams are reproducible and independent") {
    Rng a(42, "dropout"), b(42, "dropout"), c(42, "init");
    CHECK(a.next_u64() == b.next_u64());
    CHECK(Rng(42, "dropout").next_u64() != c.next_u64());
    Rng u(9);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.uniform();
        CHECK((x >= 0.0 && x < 1.0));
    }
}
