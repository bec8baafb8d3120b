#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ccam/autodiff.hpp"
#include "ccam/resize.hpp"
#include "ccam/rng.hpp"
#include "ccam/tensor.hpp"

using namespace ccam;

namespace {

// central finite differences of a scalar-valued tape program w.r.t. one leaf
Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                   double step = 1e-5) {
    Tensor g(x.shape);
    Tensor probe = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        probe.data[i] = x.data[i] + step;
        const double up = f(probe);
        probe.data[i] = x.data[i] - step;
        const double dn = f(probe);
        probe.data[i] = x.data[i];
        g.data[i] = (up - dn) / (2.0 * step);
    }
    return g;
}

void check_close(const Tensor& a, const Tensor& b, double rel_tol) {
    REQUIRE(a.numel() == b.numel());
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double scale = std::max({1.0, std::fabs(a.data[i]), std::fabs(b.data[i])});
        CHECK(std::fabs(a.data[i] - b.data[i]) / scale < rel_tol);
    }
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("rng is deterministic and fork gives independent streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
    Rng f1 = Rng(42).fork(1), f2 = Rng(42).fork(2);
    CHECK(f1.uniform() != f2.uniform());
}

TEST_CASE("rng shuffle is a permutation") {
    Rng rng(3);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(7);
    Tensor x = random_tensor({2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);

    auto run = [&](const Tensor& xv, const Tensor& wv, const Tensor& bv) {
        Tape t;
        Var out = t.conv2d(t.constant(xv), t.constant(wv), t.constant(bv), 1, 1);
        // fixed projection to a scalar
        const Tensor& o = t.val(out);
        double s = 0.0;
        for (std::int64_t i = 0; i < o.numel(); ++i) s += o.data[i] * std::sin(0.1 * i + 0.3);
        return s;
    };

    Tape t;
    Var vx = t.leaf(x), vw = t.leaf(w), vb = t.leaf(b);
    Var out = t.conv2d(vx, vw, vb, 1, 1);
    Tensor proj(t.val(out).shape);
    for (std::int64_t i = 0; i < proj.numel(); ++i) proj.data[i] = std::sin(0.1 * i + 0.3);
    Var s = t.dot(out, t.constant(proj));
    t.backward(s);

    check_close(t.grad(vx), fd_gradient([&](const Tensor& p) { return run(p, w, b); }, x), 1e-6);
    check_close(t.grad(vw), fd_gradient([&](const Tensor& p) { return run(x, p, b); }, w), 1e-6);
    check_close(t.grad(vb), fd_gradient([&](const Tensor& p) { return run(x, w, p); }, b), 1e-6);
}

TEST_CASE("pooling, tanh, linear, softmax, normalize gradients match finite differences") {
    Rng rng(11);
    Tensor x = random_tensor({2, 4, 4}, rng, 0.1, 1.0);
    Tensor w = random_tensor({3, 2}, rng);
    Tensor b = random_tensor({3}, rng);

    auto scalar_of = [&](const Tensor& xv) {
        Tape t;
        Var h = t.avg_pool2x2(t.constant(xv));
        Var g = t.global_avg_pool(h);
        Var l = t.linear(t.tanh_op(g), t.constant(w), t.constant(b));
        Var p = t.softmax(l);
        Var n = t.l2_normalize(p);
        return t.val(t.pick(n, 1)).data[0];
    };

    Tape t;
    Var vx = t.leaf(x);
    Var h = t.avg_pool2x2(vx);
    Var g = t.global_avg_pool(h);
    Var l = t.linear(t.tanh_op(g), t.constant(w), t.constant(b));
    Var p = t.softmax(l);
    Var n = t.l2_normalize(p);
    Var s = t.pick(n, 1);
    t.backward(s);
    check_close(t.grad(vx), fd_gradient(scalar_of, x), 1e-5);
}

TEST_CASE("mse, square, scale, add_scalars gradients match finite differences") {
    Rng rng(13);
    Tensor x = random_tensor({6}, rng);
    Tensor target = random_tensor({6}, rng);

    auto scalar_of = [&](const Tensor& xv) {
        Tape t;
        Var v = t.constant(xv);
        Var m = t.mse_to(v, target);
        Var d = t.square(t.sub_const(t.pick(v, 2), 0.25));
        Var sum = t.add_scalars({m, t.scale(d, 0.5)});
        return t.val(sum).data[0];
    };

    Tape t;
    Var v = t.leaf(x);
    Var m = t.mse_to(v, target);
    Var d = t.square(t.sub_const(t.pick(v, 2), 0.25));
    Var sum = t.add_scalars({m, t.scale(d, 0.5)});
    t.backward(sum);
    check_close(t.grad(v), fd_gradient(scalar_of, x), 1e-6);
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    Rng rng(17);
    Tensor logits = random_tensor({4}, rng);
    Tape t;
    Var v = t.leaf(logits);
    Var loss = t.cross_entropy(v, 2);
    t.backward(loss);
    Tensor probs({4});
    double mx = *std::max_element(logits.data.begin(), logits.data.end());
    double z = 0.0;
    for (int i = 0; i < 4; ++i) z += std::exp(logits.data[i] - mx);
    for (int i = 0; i < 4; ++i) probs.data[i] = std::exp(logits.data[i] - mx) / z;
    const Tensor g = t.grad(v);
    for (int i = 0; i < 4; ++i)
        CHECK(g.data[i] == doctest::Approx(probs.data[i] - (i == 2 ? 1.0 : 0.0)).epsilon(1e-12));
}

TEST_CASE("token ops: grid round trip and gradient flow") {
    Rng rng(19);
    Tensor tokens = random_tensor({9, 4}, rng);
    Tape t;
    Var v = t.leaf(tokens);
    Var grid = t.grid_from_tokens(v, 3);
    Var back = t.tokens_from_grid(grid);
    const Tensor& r = t.val(back);
    for (std::int64_t i = 0; i < tokens.numel(); ++i) CHECK(r.data[i] == tokens.data[i]);

    Var mean = t.token_mean(back);
    Var s = t.pick(mean, 1);
    t.backward(s);
    const Tensor g = t.grad(v);
    for (int tk = 0; tk < 9; ++tk)
        for (int d = 0; d < 4; ++d)
            CHECK(g.at2(tk, d) == doctest::Approx(d == 1 ? 1.0 / 9 : 0.0).epsilon(1e-12));
}

TEST_CASE("backward on a constant scalar yields all-zero gradients") {
    Tape t;
    Var x = t.leaf(Tensor::vec({1.0, 2.0}));
    Var c = t.constant(Tensor::vec({5.0}));
    t.backward(c);
    const Tensor g = t.grad(x);
    CHECK(g.data[0] == 0.0);
    CHECK(g.data[1] == 0.0);
}

TEST_CASE("bilinear resize: constant maps stay constant, values and corners behave") {
    Tensor m({2, 2});
    m.data = {1.0, 1.0, 1.0, 1.0};
    Tensor up = bilinear_resize(m, 8, 8);
    for (double v : up.data) CHECK(v == doctest::Approx(1.0));

    Tensor ramp({1, 2});
    ramp.data = {0.0, 1.0};
    Tensor wide = bilinear_resize(ramp, 1, 4);
    CHECK(wide.data[0] == doctest::Approx(0.0));
    CHECK(wide.data[3] == doctest::Approx(1.0));
    CHECK(wide.data[1] < wide.data[2]);
}
