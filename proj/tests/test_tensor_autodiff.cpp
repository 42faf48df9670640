#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tsformer/autodiff.hpp"
#include "tsformer/gradcheck.hpp"
#include "tsformer/nn_ops.hpp"
#include "tsformer/optimizer.hpp"
#include "support/oracles.hpp"

using namespace tsf;

TEST_CASE("tensor guards its shape/data invariants") {
    REQUIRE_THROWS_AS(Tensor(Shape4{0, 1, 1, 1}), std::invalid_argument);
    REQUIRE_THROWS_AS(Tensor(Shape4{1, 1, 2, 2}, std::vector<float>{1.0f}), std::invalid_argument);
    Tensor t(Shape4{1, 2, 3, 4});
    REQUIRE(t.numel() == 24);
    REQUIRE(t.all_finite());
}

TEST_CASE("conv2d standard same-padding sums") {
    Tape t;
    Tensor x(Shape4{1, 1, 3, 3}, std::vector<float>(9, 1.0f));
    Tensor w(Shape4{1, 1, 3, 3}, std::vector<float>(9, 1.0f));
    Tensor b(Shape4{1, 1, 1, 1});
    const NodeId out = conv2d(t, t.constant(x), t.constant(w), t.constant(b), ConvMode::Standard3x3);
    REQUIRE(t.value(out).at(0, 0, 1, 1) == Catch::Approx(9.0f));
    REQUIRE(t.value(out).at(0, 0, 0, 0) == Catch::Approx(4.0f));
    REQUIRE(t.value(out).at(0, 0, 2, 2) == Catch::Approx(4.0f));
}

TEST_CASE("identity pointwise kernel passes the input through") {
    Tape t;
    std::mt19937 rng(3);
    Tensor x(Shape4{1, 2, 4, 4});
    fill_uniform(x, rng, -1.0f, 1.0f);
    Tensor w(Shape4{2, 2, 1, 1});
    w.at(0, 0, 0, 0) = 1.0f;
    w.at(1, 1, 0, 0) = 1.0f;
    Tensor b(Shape4{1, 2, 1, 1});
    const NodeId out = conv2d(t, t.constant(x), t.constant(w), t.constant(b), ConvMode::Pointwise1x1);
    for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t.value(out)[i] == x[i]);
}

TEST_CASE("depthwise conv matches the nested-loop oracle") {
    std::mt19937 rng(11);
    Tensor x(Shape4{1, 2, 5, 5});
    fill_uniform(x, rng, -1.0f, 1.0f);
    Tensor w(Shape4{2, 1, 3, 3});
    fill_uniform(w, rng, -1.0f, 1.0f);
    Tensor b(Shape4{1, 2, 1, 1});
    fill_uniform(b, rng, -0.5f, 0.5f);

    Tape t;
    const NodeId out = conv2d(t, t.constant(x), t.constant(w), t.constant(b), ConvMode::Depthwise3x3);

    std::vector<double> xd(x.data(), x.data() + x.numel());
    std::vector<double> wd(w.data(), w.data() + w.numel());
    std::vector<double> bd(b.data(), b.data() + b.numel());
    const auto ref = oracles::naive_conv2d(xd, 1, 2, 5, 5, wd, bd, 2, 3, 2);
    for (int64_t i = 0; i < t.value(out).numel(); ++i)
        REQUIRE(t.value(out)[i] == Catch::Approx(ref[static_cast<size_t>(i)]).margin(1e-5));
}

TEST_CASE("conv2d names the offending dimension on mismatch") {
    Tape t;
    Tensor x(Shape4{1, 5, 4, 4});
    Tensor w(Shape4{2, 4, 3, 3});
    Tensor b(Shape4{1, 2, 1, 1});
    REQUIRE_THROWS_WITH(conv2d(t, t.constant(x), t.constant(w), t.constant(b), ConvMode::Standard3x3),
                        Catch::Matchers::ContainsSubstring("in-channels") &&
                            Catch::Matchers::ContainsSubstring("4") && Catch::Matchers::ContainsSubstring("5"));
}

TEST_CASE("layer_norm normalizes the channel group") {
    SECTION("constant input maps to zero") {
        Tape t;
        Tensor x(Shape4{1, 4, 2, 2}, std::vector<float>(16, 3.5f));
        Tensor gamma(Shape4{1, 4, 1, 1}, std::vector<float>(4, 1.0f));
        Tensor beta(Shape4{1, 4, 1, 1});
        const NodeId out = layer_norm(t, t.constant(x), t.constant(gamma), t.constant(beta));
        for (int64_t i = 0; i < 16; ++i) REQUIRE(t.value(out)[i] == Catch::Approx(0.0f).margin(1e-5));
    }

    SECTION("group [1,2,3,4] is standardized") {
        Tape t;
        Tensor x(Shape4{1, 4, 1, 1}, std::vector<float>{1, 2, 3, 4});
        Tensor gamma(Shape4{1, 4, 1, 1}, std::vector<float>(4, 1.0f));
        Tensor beta(Shape4{1, 4, 1, 1});
        const NodeId out = layer_norm(t, t.constant(x), t.constant(gamma), t.constant(beta));
        double mean = 0.0, var = 0.0;
        for (int64_t c = 0; c < 4; ++c) mean += t.value(out).at(0, c, 0, 0);
        mean /= 4.0;
        for (int64_t c = 0; c < 4; ++c) {
            const double d = t.value(out).at(0, c, 0, 0) - mean;
            var += d * d;
        }
        var /= 4.0;
        REQUIRE(mean == Catch::Approx(0.0).margin(1e-6));
        REQUIRE(var == Catch::Approx(1.0).epsilon(1e-3));
    }

    SECTION("matches the scalar reference formula") {
        std::mt19937 rng(4);
        Tensor x(Shape4{2, 3, 2, 2});
        fill_uniform(x, rng, -2.0f, 2.0f);
        Tensor gamma(Shape4{1, 3, 1, 1});
        fill_uniform(gamma, rng, 0.5f, 1.5f);
        Tensor beta(Shape4{1, 3, 1, 1});
        fill_uniform(beta, rng, -0.5f, 0.5f);
        Tape t;
        const NodeId out = layer_norm(t, t.constant(x), t.constant(gamma), t.constant(beta), 1e-6f);
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t y = 0; y < 2; ++y)
                for (int64_t xx = 0; xx < 2; ++xx) {
                    double mu = 0.0;
                    for (int64_t c = 0; c < 3; ++c) mu += x.at(n, c, y, xx);
                    mu /= 3.0;
                    double var = 0.0;
                    for (int64_t c = 0; c < 3; ++c) var += (x.at(n, c, y, xx) - mu) * (x.at(n, c, y, xx) - mu);
                    var /= 3.0;
                    for (int64_t c = 0; c < 3; ++c) {
                        const double ref = (x.at(n, c, y, xx) - mu) / std::sqrt(var + 1e-6) * gamma[c] + beta[c];
                        REQUIRE(t.value(out).at(n, c, y, xx) == Catch::Approx(ref).margin(1e-5));
                    }
                }
    }
}

TEST_CASE("pointwise nonlinearities") {
    Tape t;
    SECTION("sigmoid(0) = 0.5 and range (0,1)") {
        Tensor x(Shape4{1, 1, 1, 3}, std::vector<float>{0.0f, 30.0f, -30.0f});
        const NodeId out = sigmoid(t, t.constant(x));
        REQUIRE(t.value(out)[0] == Catch::Approx(0.5f));
        REQUIRE(t.value(out)[1] > 0.0f);
        REQUIRE(t.value(out)[1] <= 1.0f);
        REQUIRE(t.value(out)[2] > 0.0f);
    }
    SECTION("prelu(-2, 0.25) = -0.5 and passes positives") {
        Tensor x(Shape4{1, 1, 1, 2}, std::vector<float>{-2.0f, 3.0f});
        const NodeId out = prelu(t, t.constant(x), t.constant(Tensor::scalar(0.25f)));
        REQUIRE(t.value(out)[0] == Catch::Approx(-0.5f));
        REQUIRE(t.value(out)[1] == Catch::Approx(3.0f));
    }
    SECTION("softmax over equal logits splits evenly and slices sum to one") {
        Tensor x(Shape4{1, 2, 1, 1}, std::vector<float>{0.0f, 0.0f});
        const NodeId out = softmax(t, t.constant(x), 1);
        REQUIRE(t.value(out)[0] == Catch::Approx(0.5f));
        REQUIRE(t.value(out)[1] == Catch::Approx(0.5f));

        std::mt19937 rng(8);
        Tensor y(Shape4{2, 5, 3, 3});
        fill_uniform(y, rng, -3.0f, 3.0f);
        const NodeId sm = softmax(t, t.constant(y), 1);
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t yy = 0; yy < 3; ++yy)
                for (int64_t xx = 0; xx < 3; ++xx) {
                    double sum = 0.0;
                    for (int64_t c = 0; c < 5; ++c) sum += t.value(sm).at(n, c, yy, xx);
                    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
                }
    }
    SECTION("gelu fixed points") {
        Tensor x(Shape4{1, 1, 1, 2}, std::vector<float>{0.0f, 10.0f});
        const NodeId out = gelu(t, t.constant(x));
        REQUIRE(t.value(out)[0] == Catch::Approx(0.0f));
        REQUIRE(t.value(out)[1] == Catch::Approx(10.0f).margin(1e-4));
    }
}

TEST_CASE("bilinear_resize corner-aligned behaviour") {
    Tape t;
    SECTION("constant stays constant when shrinking") {
        Tensor x(Shape4{1, 1, 4, 4}, std::vector<float>(16, 7.0f));
        const NodeId out = bilinear_resize(t, t.constant(x), 2, 2);
        for (int64_t i = 0; i < 4; ++i) REQUIRE(t.value(out)[i] == Catch::Approx(7.0f));
    }
    SECTION("identity resize is exact") {
        std::mt19937 rng(6);
        Tensor x(Shape4{1, 2, 5, 7});
        fill_uniform(x, rng, -1.0f, 1.0f);
        const NodeId out = bilinear_resize(t, t.constant(x), 5, 7);
        for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t.value(out)[i] == x[i]);
    }
    SECTION("2x2 to 3x3 center is the four-point average") {
        Tensor x(Shape4{1, 1, 2, 2}, std::vector<float>{0.0f, 1.0f, 1.0f, 2.0f});
        const NodeId out = bilinear_resize(t, t.constant(x), 3, 3);
        REQUIRE(t.value(out).at(0, 0, 1, 1) == Catch::Approx(1.0f));
        REQUIRE(t.value(out).at(0, 0, 0, 0) == Catch::Approx(0.0f));
        REQUIRE(t.value(out).at(0, 0, 2, 2) == Catch::Approx(2.0f));
    }
}

TEST_CASE("l1_loss is the mean absolute difference") {
    Tape t;
    Tensor a(Shape4{1, 1, 1, 2}, std::vector<float>{0.0f, 2.0f});
    Tensor b(Shape4{1, 1, 1, 2}, std::vector<float>{1.0f, 0.0f});
    REQUIRE(t.value(l1_loss(t, t.constant(a), t.constant(b)))[0] == Catch::Approx(1.5f));
    REQUIRE(t.value(l1_loss(t, t.constant(a), t.constant(a)))[0] == 0.0f);
    Tensor c(Shape4{1, 1, 1, 2}, std::vector<float>{1.0f, 3.0f});
    REQUIRE(t.value(l1_loss(t, t.constant(c), t.constant(a)))[0] == Catch::Approx(1.0f));
    Tensor bad(Shape4{1, 1, 2, 2});
    REQUIRE_THROWS_AS(l1_loss(t, t.constant(a), t.constant(bad)), std::invalid_argument);
}

TEST_CASE("backward writes gradients into participating parameters only") {
    Parameter w("w", Tensor(Shape4{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4}));
    Parameter unused("unused", Tensor(Shape4{1, 1, 1, 1}, std::vector<float>{5}));
    Tensor x(Shape4{1, 1, 2, 2}, std::vector<float>{0.5f, -1.0f, 2.0f, 0.25f});

    Tape t;
    const NodeId loss = reduce_sum(t, mul(t, t.param(w), t.constant(x)));
    t.param(unused);
    t.backward(loss);

    for (int64_t i = 0; i < 4; ++i) REQUIRE(w.grad[i] == Catch::Approx(x[i]));
    REQUIRE(unused.grad[0] == 0.0f);
}

TEST_CASE("backward rejects non-scalar losses") {
    Tape t;
    Tensor x(Shape4{1, 1, 2, 2});
    const NodeId node = t.constant(x);
    REQUIRE_THROWS_AS(t.backward(node), std::invalid_argument);
}

TEST_CASE("finite differences confirm every backward rule over 5 seeds") {
    const auto results = run_standard_grad_checks({1, 2, 3, 4, 5});
    for (const auto& r : results) {
        INFO(r.name << " max_rel_err " << r.max_rel_err);
        REQUIRE(r.pass);
    }
}

TEST_CASE("forward passes are deterministic") {
    std::mt19937 rng(17);
    Tensor x(Shape4{1, 3, 6, 6});
    fill_uniform(x, rng, -1.0f, 1.0f);
    Tensor w(Shape4{4, 3, 3, 3});
    fill_uniform(w, rng, -0.4f, 0.4f);
    Tensor b(Shape4{1, 4, 1, 1});
    auto run = [&]() {
        Tape t;
        return t.value(gelu(t, conv2d(t, t.constant(x), t.constant(w), t.constant(b), ConvMode::Standard3x3)));
    };
    const Tensor r1 = run(), r2 = run();
    for (int64_t i = 0; i < r1.numel(); ++i) REQUIRE(r1[i] == r2[i]);
}

TEST_CASE("adamw updates") {
    SECTION("zero gradients with zero decay leave parameters unchanged") {
        Parameter w("w", Tensor(Shape4{1, 1, 1, 3}, std::vector<float>{1.0f, -2.0f, 0.5f}));
        std::vector<Parameter*> ps{&w};
        OptimizerState st;
        st.weight_decay = 0.0;
        adamw_step(ps, st);
        REQUIRE(w.value[0] == 1.0f);
        REQUIRE(w.value[1] == -2.0f);
        REQUIRE(st.step_count == 1);
    }

    SECTION("first step moves by roughly -lr * sign(g)") {
        Parameter w("w", Tensor(Shape4{1, 1, 1, 2}, std::vector<float>{0.0f, 0.0f}));
        w.grad[0] = 0.37f;
        w.grad[1] = -1.4f;
        std::vector<Parameter*> ps{&w};
        OptimizerState st;
        st.lr = 0.01;
        st.weight_decay = 0.0;
        adamw_step(ps, st);
        REQUIRE(w.value[0] == Catch::Approx(-0.01).epsilon(1e-3));
        REQUIRE(w.value[1] == Catch::Approx(0.01).epsilon(1e-3));
    }

    SECTION("loss decreases monotonically on a scalar quadratic") {
        Parameter w("w", Tensor::scalar(0.0f));
        std::vector<Parameter*> ps{&w};
        OptimizerState st;
        st.lr = 0.1;
        st.weight_decay = 0.0;
        double prev = 9.0;
        for (int i = 0; i < 10; ++i) {
            w.zero_grad();
            Tape t;
            const NodeId diff = affine(t, t.param(w), 1.0f, -3.0f);
            const NodeId loss = reduce_sum(t, mul(t, diff, diff));
            const double val = t.value(loss)[0];
            if (i > 0) REQUIRE(val < prev);
            prev = val;
            t.backward(loss);
            adamw_step(ps, st);
        }
    }
}
