#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <random>

#include "tsformer/checkpoint.hpp"
#include "tsformer/model.hpp"
#include "support/oracles.hpp"

using namespace tsf;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.block_counts = {1, 1};
    cfg.expansion = 2.0;
    cfg.patch_size = 8;
    return cfg;
}

Tensor random_image(Shape4 s, uint32_t seed, float lo = 0.0f, float hi = 1.0f) {
    std::mt19937 rng(seed);
    Tensor t(s);
    fill_uniform(t, rng, lo, hi);
    return t;
}

// Builders mirroring the model's parameter layout, for block-level tests.
struct BlockParams {
    std::vector<std::unique_ptr<Parameter>> owned;

    ConvLayerT<float> conv(std::mt19937& rng, const std::string& n, int64_t ci, int64_t co, ConvMode m) {
        ConvLayerT<float> l;
        l.mode = m;
        const int64_t k = m == ConvMode::Pointwise1x1 ? 1 : 3;
        owned.push_back(std::make_unique<Parameter>(
            n + ".w", Tensor(m == ConvMode::Depthwise3x3 ? Shape4{ci, 1, k, k} : Shape4{co, ci, k, k})));
        l.w = owned.back().get();
        fill_uniform(l.w->value, rng, -0.4f, 0.4f);
        owned.push_back(std::make_unique<Parameter>(n + ".b", Tensor(Shape4{1, m == ConvMode::Depthwise3x3 ? ci : co, 1, 1})));
        l.b = owned.back().get();
        return l;
    }

    Parameter* scalar(const std::string& n, float v) {
        owned.push_back(std::make_unique<Parameter>(n, Tensor::scalar(v)));
        return owned.back().get();
    }

    Parameter* channel(const std::string& n, int64_t c, float v) {
        owned.push_back(std::make_unique<Parameter>(n, Tensor(Shape4{1, c, 1, 1}, std::vector<float>(static_cast<size_t>(c), v))));
        return owned.back().get();
    }

    FfnWeightsT<float> ffn(std::mt19937& rng, int64_t c, int64_t hidden) {
        FfnWeightsT<float> f;
        f.expand = conv(rng, "expand", c, hidden, ConvMode::Pointwise1x1);
        f.gate_dw = conv(rng, "gate", hidden, hidden, ConvMode::Depthwise3x3);
        f.value_pw = conv(rng, "value", hidden, hidden, ConvMode::Pointwise1x1);
        f.project = conv(rng, "project", hidden, c, ConvMode::Pointwise1x1);
        return f;
    }

    TsbWeightsT<float> tsb(std::mt19937& rng, int64_t c) {
        TsbWeightsT<float> b;
        b.ln1.gamma = channel("ln1.g", c, 1.0f);
        b.ln1.beta = channel("ln1.b", c, 0.0f);
        auto q = conv(rng, "q", c, c, ConvMode::Depthwise3x3);
        auto k = conv(rng, "k", c, c, ConvMode::Depthwise3x3);
        auto v = conv(rng, "v", c, c, ConvMode::Depthwise3x3);
        b.msa = {q.w, q.b, k.w, k.b, v.w, v.b};
        b.ln2.gamma = channel("ln2.g", c, 1.0f);
        b.ln2.beta = channel("ln2.b", c, 0.0f);
        b.ffn = ffn(rng, c, 2 * c);
        return b;
    }
};

} // namespace

TEST_CASE("ffn_forward") {
    std::mt19937 rng(3);
    BlockParams bp;
    const auto w = bp.ffn(rng, 3, 6);

    SECTION("zero input with zero biases gives zero output") {
        Tape t;
        Tensor x(Shape4{1, 3, 6, 6});
        const NodeId out = ffn_forward(t, t.constant(x), w);
        for (int64_t i = 0; i < t.value(out).numel(); ++i) REQUIRE(t.value(out)[i] == 0.0f);
    }

    SECTION("forcing the gate to one reduces to the value projection") {
        // GELU(x) = 1 at the root of x*Phi(x) = 1; bisect for it
        double lo = 1.0, hi = 2.0;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            const double g = mid * 0.5 * (1.0 + std::erf(mid / std::sqrt(2.0)));
            (g < 1.0 ? lo : hi) = mid;
        }
        const float root = static_cast<float>(0.5 * (lo + hi));

        BlockParams forced;
        std::mt19937 rng2(4);
        auto w2 = forced.ffn(rng2, 3, 6);
        w2.gate_dw.w->value.fill(0.0f);
        w2.gate_dw.b->value.fill(root);  // gate output = GELU(root) = 1

        Tensor x = random_image(Shape4{1, 3, 6, 6}, 9, -1.0f, 1.0f);
        Tape t;
        const NodeId out = ffn_forward(t, t.constant(x), w2);

        Tape t2;
        const NodeId e = conv_apply(t2, t2.constant(x), w2.expand);
        const NodeId val = conv_apply(t2, e, w2.value_pw);
        const NodeId ref = conv_apply(t2, val, w2.project);
        for (int64_t i = 0; i < t.value(out).numel(); ++i)
            REQUIRE(t.value(out)[i] == Catch::Approx(t2.value(ref)[i]).margin(1e-5));
    }

    SECTION("matches a straight-line oracle") {
        Tensor x = random_image(Shape4{1, 3, 5, 5}, 10, -1.0f, 1.0f);
        Tape t;
        const NodeId out = ffn_forward(t, t.constant(x), w);

        auto conv_ref = [&](const std::vector<double>& in, int cin, const ConvLayerT<float>& l, int cout, int k,
                            int groups) {
            std::vector<double> wd(l.w->value.data(), l.w->value.data() + l.w->value.numel());
            std::vector<double> bd(l.b->value.data(), l.b->value.data() + l.b->value.numel());
            return oracles::naive_conv2d(in, 1, cin, 5, 5, wd, bd, cout, k, groups);
        };
        std::vector<double> xd(x.data(), x.data() + x.numel());
        const auto e = conv_ref(xd, 3, w.expand, 6, 1, 1);
        const auto g = conv_ref(e, 6, w.gate_dw, 6, 3, 6);
        const auto val = conv_ref(e, 6, w.value_pw, 6, 1, 1);
        std::vector<double> prod(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
            const double act = g[i] * 0.5 * (1.0 + std::erf(g[i] / std::sqrt(2.0)));
            prod[i] = act * val[i];
        }
        const auto ref = conv_ref(prod, 6, w.project, 3, 1, 1);
        for (int64_t i = 0; i < t.value(out).numel(); ++i)
            REQUIRE(t.value(out)[i] == Catch::Approx(ref[static_cast<size_t>(i)]).margin(1e-4));
    }
}

TEST_CASE("ffb_fuse") {
    std::mt19937 rng(5);
    BlockParams bp;
    FfbWeightsT<float> w;
    w.proj_x = bp.conv(rng, "px", 3, 3, ConvMode::Pointwise1x1);
    w.proj_y = bp.conv(rng, "py", 3, 3, ConvMode::Pointwise1x1);
    w.att = bp.conv(rng, "att", 6, 6, ConvMode::Pointwise1x1);
    w.alpha_x = bp.scalar("ax", 0.25f);
    w.alpha_y = bp.scalar("ay", 0.25f);

    SECTION("identical branches fuse to themselves") {
        Tensor x = random_image(Shape4{1, 3, 4, 4}, 6, -1.0f, 1.0f);
        Tape t;
        const NodeId out = ffb_fuse(t, t.constant(x), t.constant(x), w);
        for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t.value(out)[i] == Catch::Approx(x[i]).margin(1e-6));
    }

    SECTION("saturating the logits hands everything to one branch") {
        BlockParams bp2;
        std::mt19937 rng2(7);
        FfbWeightsT<float> w2;
        w2.proj_x = bp2.conv(rng2, "px", 3, 3, ConvMode::Pointwise1x1);
        w2.proj_y = bp2.conv(rng2, "py", 3, 3, ConvMode::Pointwise1x1);
        w2.att = bp2.conv(rng2, "att", 6, 6, ConvMode::Pointwise1x1);
        w2.att.w->value.fill(0.0f);
        for (int64_t c = 0; c < 6; ++c) w2.att.b->value[c] = c < 3 ? 50.0f : -50.0f;
        w2.alpha_x = bp2.scalar("ax", 0.25f);
        w2.alpha_y = bp2.scalar("ay", 0.25f);

        Tensor x = random_image(Shape4{1, 3, 4, 4}, 8, -1.0f, 1.0f);
        Tensor y = random_image(Shape4{1, 3, 4, 4}, 9, -1.0f, 1.0f);
        Tape t;
        const NodeId out = ffb_fuse(t, t.constant(x), t.constant(y), w2);
        for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t.value(out)[i] == x[i]);
    }

    SECTION("matches a straight-line oracle and weights sum to one") {
        Tensor x = random_image(Shape4{1, 3, 4, 4}, 10, -1.0f, 1.0f);
        Tensor y = random_image(Shape4{1, 3, 4, 4}, 11, -1.0f, 1.0f);
        Tape t;
        const NodeId out = ffb_fuse(t, t.constant(x), t.constant(y), w);

        auto conv_ref = [&](const std::vector<double>& in, int cin, const ConvLayerT<float>& l, int cout) {
            std::vector<double> wd(l.w->value.data(), l.w->value.data() + l.w->value.numel());
            std::vector<double> bd(l.b->value.data(), l.b->value.data() + l.b->value.numel());
            return oracles::naive_conv2d(in, 1, cin, 4, 4, wd, bd, cout, 1, 1);
        };
        auto prelu_ref = [](std::vector<double> v, double a) {
            for (auto& x2 : v)
                if (x2 < 0.0) x2 *= a;
            return v;
        };
        std::vector<double> xd(x.data(), x.data() + x.numel());
        std::vector<double> yd(y.data(), y.data() + y.numel());
        const auto xf = prelu_ref(conv_ref(xd, 3, w.proj_x, 3), w.alpha_x->value[0]);
        const auto yf = prelu_ref(conv_ref(yd, 3, w.proj_y, 3), w.alpha_y->value[0]);
        std::vector<double> cat(xf);
        cat.insert(cat.end(), yf.begin(), yf.end());
        const auto logits = conv_ref(cat, 6, w.att, 6);
        const size_t plane = 48;
        for (size_t i = 0; i < plane; ++i) {
            const double lx = logits[i], ly = logits[i + plane];
            const double ex = std::exp(lx - std::max(lx, ly)), ey = std::exp(ly - std::max(lx, ly));
            const double ax = ex / (ex + ey), ay = ey / (ex + ey);
            REQUIRE(ax + ay == Catch::Approx(1.0).margin(1e-6));
            const double ref = ax * xd[i] + ay * yd[i];
            REQUIRE(t.value(out)[static_cast<int64_t>(i)] == Catch::Approx(ref).margin(1e-5));
        }
    }
}

TEST_CASE("tsb_forward") {
    SECTION("zero weights make the block an identity") {
        std::mt19937 rng(12);
        BlockParams bp;
        auto w = bp.tsb(rng, 4);
        for (auto& p : bp.owned) p->value.fill(0.0f);
        Tensor x = random_image(Shape4{1, 4, 16, 16}, 13, -1.0f, 1.0f);
        Tape t;
        const NodeId out = tsb_forward(t, t.constant(x), w, SparsityConfig{}, 8);
        for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t.value(out)[i] == x[i]);
    }

    SECTION("shape is preserved") {
        std::mt19937 rng(14);
        BlockParams bp;
        auto w = bp.tsb(rng, 4);
        Tensor x = random_image(Shape4{1, 4, 32, 32}, 15, -1.0f, 1.0f);
        Tape t;
        const NodeId out = tsb_forward(t, t.constant(x), w, SparsityConfig{}, 8);
        REQUIRE(t.value(out).shape() == x.shape());
    }

    SECTION("equals composing the stage ops individually") {
        std::mt19937 rng(16);
        BlockParams bp;
        auto w = bp.tsb(rng, 4);
        SparsityConfig cfg;
        cfg.strategy = Strategy::MinP;
        cfg.p_base = 0.2;
        Tensor x = random_image(Shape4{1, 4, 16, 16}, 17, -1.0f, 1.0f);

        Tape t;
        const NodeId fused = tsb_forward(t, t.constant(x), w, cfg, 8);

        Tape t2;
        const NodeId xin = t2.constant(x);
        const NodeId n1 = layer_norm(t2, xin, t2.param(*w.ln1.gamma), t2.param(*w.ln1.beta));
        const NodeId x1 = add(t2, xin, msa_forward(t2, n1, w.msa, cfg, 8));
        const NodeId n2 = layer_norm(t2, x1, t2.param(*w.ln2.gamma), t2.param(*w.ln2.beta));
        const NodeId ref = add(t2, x1, ffn_forward(t2, n2, w.ffn));
        for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t.value(fused)[i] == t2.value(ref)[i]);
    }
}

TEST_CASE("zero-parameter model is the identity map") {
    TSFormer model(tiny_config());
    model.fill_all(0.0f);
    for (Shape4 s : {Shape4{1, 3, 64, 64}, Shape4{1, 3, 65, 63}, Shape4{2, 3, 16, 24}}) {
        const Tensor img = random_image(s, static_cast<uint32_t>(s.h * 100 + s.w));
        Tape t(false);
        const Tensor out = t.value(model.forward(t, t.constant(img)));
        REQUIRE(out.shape() == s);
        for (int64_t i = 0; i < img.numel(); ++i) REQUIRE(out[i] == img[i]);
    }
}

TEST_CASE("forward preserves arbitrary sizes and is deterministic") {
    TSFormer model(tiny_config(), 99);
    const Tensor img = random_image(Shape4{1, 3, 29, 37}, 21);
    Tape t1(false), t2(false);
    const Tensor a = t1.value(model.forward(t1, t1.constant(img)));
    const Tensor b = t2.value(model.forward(t2, t2.constant(img)));
    REQUIRE(a.shape() == img.shape());
    REQUIRE(a.all_finite());
    for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("too-small inputs are rejected with the minimum size") {
    TSFormer model(tiny_config());
    Tensor img(Shape4{1, 3, 1, 1});
    Tape t;
    REQUIRE_THROWS_WITH(model.forward(t, t.constant(img)), Catch::Matchers::ContainsSubstring("minimum size 2x2"));
}

TEST_CASE("parameter accounting") {
    TSFormer model(ModelConfig{});
    SECTION("tokenizer conv holds 3*32*9 + 32 entries") {
        auto* w = model.find_parameter("tokenizer.weight");
        auto* b = model.find_parameter("tokenizer.bias");
        REQUIRE(w != nullptr);
        REQUIRE(b != nullptr);
        REQUIRE(w->value.numel() + b->value.numel() == 896);
    }
    SECTION("doubling the base channel count strictly increases the total") {
        ModelConfig big;
        big.base_channels = 64;
        TSFormer bigger(big);
        REQUIRE(bigger.param_count() > 2 * model.param_count());
    }
    SECTION("default configuration lands near the reference budget") {
        const double count = static_cast<double>(model.param_count());
        REQUIRE(count > 3.38e6 * 0.7);
        REQUIRE(count < 3.38e6 * 1.3);
    }
}

TEST_CASE("encoder and decoder mirror each other") {
    TSFormer model(ModelConfig{});
    int downs = 0, ups = 0, ffbs = 0;
    for (auto* p : model.parameters()) {
        if (p->name.rfind("down.", 0) == 0 && p->name.find(".weight") != std::string::npos) ++downs;
        if (p->name.rfind("up.", 0) == 0 && p->name.find(".weight") != std::string::npos) ++ups;
        if (p->name.rfind("ffb.", 0) == 0 && p->name.find(".att.weight") != std::string::npos) ++ffbs;
    }
    REQUIRE(downs == 3);
    REQUIRE(ups == 3);
    REQUIRE(ffbs == 3);
}

TEST_CASE("every parameter receives gradient on random batches") {
    ModelConfig cfg = tiny_config();
    cfg.sparsity.p_base = 0.1;
    for (uint32_t seed : {1u, 2u, 3u, 4u, 5u}) {
        TSFormer model(cfg, seed);
        model.zero_grads();
        const Tensor img = random_image(Shape4{2, 3, 16, 16}, seed * 11);
        const Tensor target = random_image(Shape4{2, 3, 16, 16}, seed * 13);
        Tape t;
        const NodeId loss = l1_loss(t, model.forward(t, t.constant(img)), t.constant(target));
        t.backward(loss);
        for (auto* p : model.parameters()) {
            bool any = false;
            for (int64_t i = 0; i < p->grad.numel() && !any; ++i) any = p->grad[i] != 0.0f;
            INFO("seed " << seed << " parameter " << p->name);
            REQUIRE(any);
        }
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    const std::string path = "ckpt_test.tsf";
    ModelConfig cfg = tiny_config();
    cfg.sparsity.strategy = Strategy::MinPTrusted;
    TSFormer model(cfg, 1234);
    checkpoint_save(model, path);
    TSFormer loaded = checkpoint_load(path);

    auto orig = model.parameters();
    auto back = loaded.parameters();
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        REQUIRE(orig[i]->name == back[i]->name);
        REQUIRE(orig[i]->value.shape() == back[i]->value.shape());
        for (int64_t j = 0; j < orig[i]->value.numel(); ++j) REQUIRE(orig[i]->value[j] == back[i]->value[j]);
    }
    REQUIRE(loaded.config().sparsity.strategy == Strategy::MinPTrusted);
    std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoints fail the checksum") {
    const std::string path = "ckpt_corrupt.tsf";
    TSFormer model(tiny_config(), 7);
    checkpoint_save(model, path);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    const auto size = static_cast<int64_t>(f.tellg());
    f.seekp(size / 2);
    char byte;
    f.seekg(size / 2);
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x40);
    f.seekp(size / 2);
    f.write(&byte, 1);
    f.close();

    REQUIRE_THROWS_WITH(checkpoint_load(path), Catch::Matchers::ContainsSubstring("checksum"));
    std::remove(path.c_str());
}

TEST_CASE("wrong magic and config mismatches are reported") {
    const std::string path = "ckpt_magic.tsf";
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE this is not a checkpoint";
    }
    REQUIRE_THROWS_WITH(checkpoint_load(path), Catch::Matchers::ContainsSubstring("magic"));
    std::remove(path.c_str());

    ModelConfig a = tiny_config();
    ModelConfig b = tiny_config();
    b.base_channels = 16;
    REQUIRE_THROWS_WITH(check_architecture_match(a, b), Catch::Matchers::ContainsSubstring("base_channels"));
    ModelConfig c = tiny_config();
    c.block_counts = {1, 2};
    REQUIRE_THROWS_WITH(check_architecture_match(a, c), Catch::Matchers::ContainsSubstring("block_counts"));
}
