#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "attention.hpp"
#include "nn_ops.hpp"

namespace tsf {

struct ModelConfig {
    int base_channels = 32;
    std::vector<int> block_counts = {1, 2, 2, 4};
    double expansion = 2.0;
    int patch_size = 8;
    SparsityConfig sparsity;

    int levels() const { return static_cast<int>(block_counts.size()); }
    int downsample_factor() const { return 1 << (levels() - 1); }
    int channels_at(int level) const { return base_channels << level; }

    void validate() const {
        require_arg(base_channels >= 1, "model config: base_channels must be >= 1");
        require_arg(!block_counts.empty(), "model config: block_counts must be nonempty");
        for (int n : block_counts) require_arg(n >= 1, "model config: block counts must be >= 1");
        require_arg(expansion > 0.0, "model config: expansion must be positive");
        require_arg(detail::is_pow2(patch_size), "model config: patch_size must be a power of two");
        require_arg(sparsity.trust.spectral_size >= 2, "model config: spectral size must be >= 2");
    }
};

template <typename T>
struct ConvLayerT {
    ParameterT<T>* w = nullptr;
    ParameterT<T>* b = nullptr;
    ConvMode mode = ConvMode::Standard3x3;
    int stride = 1;
};

template <typename T>
struct LayerNormWeightsT {
    ParameterT<T>* gamma = nullptr;
    ParameterT<T>* beta = nullptr;
};

template <typename T>
struct FfnWeightsT {
    ConvLayerT<T> expand;    // 1x1, C -> hidden
    ConvLayerT<T> gate_dw;   // depthwise 3x3 on hidden
    ConvLayerT<T> value_pw;  // 1x1, hidden -> hidden
    ConvLayerT<T> project;   // 1x1, hidden -> C
};

template <typename T>
struct TsbWeightsT {
    LayerNormWeightsT<T> ln1;
    MsaWeightsT<T> msa;
    LayerNormWeightsT<T> ln2;
    FfnWeightsT<T> ffn;
};

template <typename T>
struct FfbWeightsT {
    ConvLayerT<T> proj_x;  // 1x1 on the encoder branch
    ConvLayerT<T> proj_y;  // 1x1 on the decoder branch
    ConvLayerT<T> att;     // 1x1, 2C -> 2C fusion logits
    ParameterT<T>* alpha_x = nullptr;
    ParameterT<T>* alpha_y = nullptr;
};

template <typename T>
NodeId conv_apply(TapeT<T>& t, NodeId x, const ConvLayerT<T>& c, FlopLedger* ledger = nullptr) {
    return conv2d(t, x, t.param(*c.w), t.param(*c.b), c.mode, c.stride, ledger);
}

// Gated feed-forward: both branches read the same 1x1 channel expansion, the
// gate goes through a depthwise 3x3 and a GELU, and the product is projected
// back down to C channels.
template <typename T>
NodeId ffn_forward(TapeT<T>& t, NodeId x, const FfnWeightsT<T>& w, FlopLedger* ledger = nullptr) {
    NodeId e = conv_apply(t, x, w.expand, ledger);
    NodeId gate = gelu(t, conv_apply(t, e, w.gate_dw, ledger));
    NodeId val = conv_apply(t, e, w.value_pw, ledger);
    return conv_apply(t, mul(t, gate, val), w.project, ledger);
}

// Trusted sparse block: x' = x + MSA(LN(x)); out = x' + FFN(LN(x')).
template <typename T>
NodeId tsb_forward(TapeT<T>& t, NodeId x, const TsbWeightsT<T>& w, const SparsityConfig& cfg, int patch_size,
                   FlopLedger* ledger = nullptr, AttnStats* stats = nullptr) {
    NodeId n1 = layer_norm(t, x, t.param(*w.ln1.gamma), t.param(*w.ln1.beta));
    NodeId x1 = add(t, x, msa_forward(t, n1, w.msa, cfg, patch_size, ledger, stats));
    NodeId n2 = layer_norm(t, x1, t.param(*w.ln2.gamma), t.param(*w.ln2.beta));
    return add(t, x1, ffn_forward(t, n2, w.ffn, ledger));
}

// Feature fusion of an encoder skip with the upsampled decoder feature. The
// two fusion weights come from a per-position, per-channel softmax over the
// pair of logit branches, so they always sum to one.
template <typename T>
NodeId ffb_fuse(TapeT<T>& t, NodeId x_enc, NodeId y_dec, const FfbWeightsT<T>& w, FlopLedger* ledger = nullptr) {
    check_same_shape("ffb_fuse", t.value(x_enc).shape(), t.value(y_dec).shape());
    NodeId xf = prelu(t, conv_apply(t, x_enc, w.proj_x, ledger), t.param(*w.alpha_x));
    NodeId yf = prelu(t, conv_apply(t, y_dec, w.proj_y, ledger), t.param(*w.alpha_y));
    NodeId logits = conv_apply(t, concat_channels(t, xf, yf), w.att, ledger);
    const int64_t c = t.value(x_enc).shape().c;
    NodeId lx = slice_channels(t, logits, 0, c);
    NodeId ly = slice_channels(t, logits, c, c);
    // two-way softmax written as a sigmoid of the logit difference
    NodeId ax = sigmoid(t, sub(t, lx, ly));
    NodeId ay = affine(t, ax, T(-1), T(1));
    return add(t, mul(t, ax, x_enc), mul(t, ay, y_dec));
}

// Encoder-decoder restoration transformer. Levels below the deepest one end
// with a stride-2 downsampler; the deepest level is the shared bottleneck.
// The decoder mirrors the remaining levels with nearest-neighbor upsampling,
// a channel-halving 1x1 conv and a feature fusion block per skip.
template <typename T>
class TSFormerT {
public:
    static constexpr double kBranchGain = 0.1;

    explicit TSFormerT(ModelConfig cfg, uint64_t seed = 612271717) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& mutable_config() { return cfg_; }

    std::vector<ParameterT<T>*> parameters() {
        std::vector<ParameterT<T>*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    ParameterT<T>* find_parameter(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

    void fill_all(T v) {
        for (auto& p : params_) p->value.fill(v);
    }

    // Restored image: F(img) + img, with internal padding to a multiple of the
    // downsample factor and a crop back to the caller's size.
    NodeId forward(TapeT<T>& t, NodeId img, FlopLedger* ledger = nullptr, AttnStats* stats = nullptr) {
        const Shape4 s = t.value(img).shape();
        require_arg(s.c == 3, "model forward: expected 3 input channels, got " + std::to_string(s.c));
        require_arg(s.h >= 2 && s.w >= 2, "model forward: input " + std::to_string(s.h) + "x" +
                                              std::to_string(s.w) + " below the minimum size 2x2");
        const int f = cfg_.downsample_factor();
        const int64_t pad_h = (f - s.h % f) % f;
        const int64_t pad_w = (f - s.w % f) % f;
        NodeId x = (pad_h || pad_w) ? reflect_pad(t, img, pad_h, pad_w) : img;

        NodeId cur = conv_apply(t, x, tokenizer_, ledger);
        std::vector<NodeId> skips;
        const int levels = cfg_.levels();
        for (int i = 0; i < levels; ++i) {
            for (auto& blk : enc_blocks_[static_cast<size_t>(i)])
                cur = tsb_forward(t, cur, blk, cfg_.sparsity, cfg_.patch_size, ledger, stats);
            if (i + 1 < levels) {
                skips.push_back(cur);
                cur = conv_apply(t, cur, downs_[static_cast<size_t>(i)], ledger);
            }
        }
        for (int i = levels - 2; i >= 0; --i) {
            cur = nearest_upsample2x(t, cur);
            cur = conv_apply(t, cur, ups_[static_cast<size_t>(i)], ledger);
            cur = ffb_fuse(t, skips[static_cast<size_t>(i)], cur, ffbs_[static_cast<size_t>(i)], ledger);
            for (auto& blk : dec_blocks_[static_cast<size_t>(i)])
                cur = tsb_forward(t, cur, blk, cfg_.sparsity, cfg_.patch_size, ledger, stats);
        }
        NodeId restored = add(t, conv_apply(t, cur, output_, ledger), x);
        return crop(t, restored, s.h, s.w);
    }

private:
    ParameterT<T>* make_param(const std::string& name, Shape4 shape) {
        params_.push_back(std::make_unique<ParameterT<T>>(name, TensorT<T>::zeros(shape)));
        return params_.back().get();
    }

    // Fan-in-scaled uniform init; layers that end a residual branch get a
    // small extra gain so a fresh model starts close to the identity map
    // (the unnormalized correlation scores would otherwise blow the branch
    // magnitudes up by the patch area).
    ConvLayerT<T> make_conv(std::mt19937& rng, const std::string& name, int64_t cin, int64_t cout, ConvMode mode,
                            int stride = 1, double gain = 1.0) {
        ConvLayerT<T> c;
        c.mode = mode;
        c.stride = stride;
        const int64_t k = mode == ConvMode::Pointwise1x1 ? 1 : 3;
        const Shape4 ws = mode == ConvMode::Depthwise3x3 ? Shape4{cin, 1, k, k} : Shape4{cout, cin, k, k};
        c.w = make_param(name + ".weight", ws);
        const int64_t fan_in = ws.c * k * k;
        const T bound = static_cast<T>(gain / std::sqrt(static_cast<double>(fan_in)));
        fill_uniform(c.w->value, rng, -bound, bound);
        c.b = make_param(name + ".bias", Shape4{1, mode == ConvMode::Depthwise3x3 ? cin : cout, 1, 1});
        return c;
    }

    LayerNormWeightsT<T> make_ln(const std::string& name, int64_t c) {
        LayerNormWeightsT<T> ln;
        ln.gamma = make_param(name + ".gamma", Shape4{1, c, 1, 1});
        ln.gamma->value.fill(T(1));
        ln.beta = make_param(name + ".beta", Shape4{1, c, 1, 1});
        return ln;
    }

    TsbWeightsT<T> make_tsb(std::mt19937& rng, const std::string& name, int64_t c) {
        TsbWeightsT<T> b;
        b.ln1 = make_ln(name + ".ln1", c);
        const auto q = make_conv(rng, name + ".msa.q", c, c, ConvMode::Depthwise3x3);
        const auto k = make_conv(rng, name + ".msa.k", c, c, ConvMode::Depthwise3x3);
        const auto v = make_conv(rng, name + ".msa.v", c, c, ConvMode::Depthwise3x3, 1, kBranchGain);
        b.msa.q_w = q.w;
        b.msa.q_b = q.b;
        b.msa.k_w = k.w;
        b.msa.k_b = k.b;
        b.msa.v_w = v.w;
        b.msa.v_b = v.b;
        b.ln2 = make_ln(name + ".ln2", c);
        const int64_t hidden = std::max<int64_t>(1, static_cast<int64_t>(cfg_.expansion * static_cast<double>(c)));
        b.ffn.expand = make_conv(rng, name + ".ffn.expand", c, hidden, ConvMode::Pointwise1x1);
        b.ffn.gate_dw = make_conv(rng, name + ".ffn.gate", hidden, hidden, ConvMode::Depthwise3x3);
        b.ffn.value_pw = make_conv(rng, name + ".ffn.value", hidden, hidden, ConvMode::Pointwise1x1);
        b.ffn.project = make_conv(rng, name + ".ffn.project", hidden, c, ConvMode::Pointwise1x1, 1, kBranchGain);
        return b;
    }

    FfbWeightsT<T> make_ffb(std::mt19937& rng, const std::string& name, int64_t c) {
        FfbWeightsT<T> f;
        f.proj_x = make_conv(rng, name + ".proj_x", c, c, ConvMode::Pointwise1x1);
        f.proj_y = make_conv(rng, name + ".proj_y", c, c, ConvMode::Pointwise1x1);
        f.att = make_conv(rng, name + ".att", 2 * c, 2 * c, ConvMode::Pointwise1x1);
        f.alpha_x = make_param(name + ".alpha_x", Shape4{1, 1, 1, 1});
        f.alpha_x->value.fill(T(0.25));
        f.alpha_y = make_param(name + ".alpha_y", Shape4{1, 1, 1, 1});
        f.alpha_y->value.fill(T(0.25));
        return f;
    }

    void build(std::mt19937& rng) {
        const int levels = cfg_.levels();
        tokenizer_ = make_conv(rng, "tokenizer", 3, cfg_.base_channels, ConvMode::Standard3x3);
        enc_blocks_.resize(static_cast<size_t>(levels));
        for (int i = 0; i < levels; ++i) {
            const int64_t c = cfg_.channels_at(i);
            for (int j = 0; j < cfg_.block_counts[static_cast<size_t>(i)]; ++j)
                enc_blocks_[static_cast<size_t>(i)].push_back(
                    make_tsb(rng, "encoder." + std::to_string(i) + ".block." + std::to_string(j), c));
            if (i + 1 < levels)
                downs_.push_back(make_conv(rng, "down." + std::to_string(i), c, cfg_.channels_at(i + 1),
                                           ConvMode::Standard3x3, 2));
        }
        ups_.resize(static_cast<size_t>(levels - 1));
        ffbs_.resize(static_cast<size_t>(levels - 1));
        dec_blocks_.resize(static_cast<size_t>(levels - 1));
        for (int i = levels - 2; i >= 0; --i) {
            const int64_t c = cfg_.channels_at(i);
            ups_[static_cast<size_t>(i)] =
                make_conv(rng, "up." + std::to_string(i), cfg_.channels_at(i + 1), c, ConvMode::Pointwise1x1);
            ffbs_[static_cast<size_t>(i)] = make_ffb(rng, "ffb." + std::to_string(i), c);
            for (int j = 0; j < cfg_.block_counts[static_cast<size_t>(i)]; ++j)
                dec_blocks_[static_cast<size_t>(i)].push_back(
                    make_tsb(rng, "decoder." + std::to_string(i) + ".block." + std::to_string(j), c));
        }
        output_ = make_conv(rng, "output", cfg_.base_channels, 3, ConvMode::Standard3x3, 1, kBranchGain);
    }

    ModelConfig cfg_;
    std::vector<std::unique_ptr<ParameterT<T>>> params_;
    ConvLayerT<T> tokenizer_;
    std::vector<std::vector<TsbWeightsT<T>>> enc_blocks_;
    std::vector<ConvLayerT<T>> downs_;
    std::vector<ConvLayerT<T>> ups_;
    std::vector<FfbWeightsT<T>> ffbs_;
    std::vector<std::vector<TsbWeightsT<T>>> dec_blocks_;
    ConvLayerT<T> output_;
};

using TSFormer = TSFormerT<float>;

} // namespace tsf
