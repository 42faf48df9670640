#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "fft.hpp"
#include "flops.hpp"
#include "nn_ops.hpp"
#include "rmt.hpp"

namespace tsf {

enum class Strategy { Dense, MinP, MinPTrusted, TopK, Fed, Isa };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Dense: return "dense";
        case Strategy::MinP: return "min_p";
        case Strategy::MinPTrusted: return "min_p_trusted";
        case Strategy::TopK: return "top_k";
        case Strategy::Fed: return "fed";
        default: return "isa";
    }
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "dense") return Strategy::Dense;
    if (s == "min_p") return Strategy::MinP;
    if (s == "min_p_trusted") return Strategy::MinPTrusted;
    if (s == "top_k") return Strategy::TopK;
    if (s == "fed") return Strategy::Fed;
    if (s == "isa") return Strategy::Isa;
    throw DataError("unknown sparsity strategy '" + s +
                    "' (expected dense|min_p|min_p_trusted|top_k|fed|isa)");
}

struct SparsityConfig {
    double p_base = 0.1;
    Strategy strategy = Strategy::MinPTrusted;
    int top_k = 2;
    TrustConfig trust;
};

// Optional per-run collector for analysis output (retained score histograms).
struct AttnStats {
    std::vector<double> retained_values;
};

// Non-overlapping square tiles of a feature map, padded with zeros on the
// bottom/right so the tiles cover it exactly. Layout [b][c][row][col][p][p].
template <typename T>
struct PatchGridT {
    Shape4 origin{};
    int patch = 8;
    int64_t rows = 0, cols = 0;
    std::vector<T> data;

    int64_t patch_count() const { return origin.b * origin.c * rows * cols; }

    T* at(int64_t b, int64_t c, int64_t pr, int64_t pc) {
        return data.data() + (((b * origin.c + c) * rows + pr) * cols + pc) * patch * patch;
    }
    const T* at(int64_t b, int64_t c, int64_t pr, int64_t pc) const {
        return data.data() + (((b * origin.c + c) * rows + pr) * cols + pc) * patch * patch;
    }
};

using PatchGrid = PatchGridT<float>;

template <typename T>
PatchGridT<T> patchify(const TensorT<T>& x, int patch_size) {
    require_arg(detail::is_pow2(patch_size), "patchify: patch size " + std::to_string(patch_size) +
                                                 " is not a power of two");
    const Shape4 s = x.shape();
    PatchGridT<T> g;
    g.origin = s;
    g.patch = patch_size;
    g.rows = (s.h + patch_size - 1) / patch_size;
    g.cols = (s.w + patch_size - 1) / patch_size;
    g.data.assign(static_cast<size_t>(g.patch_count()) * patch_size * patch_size, T(0));
    for (int64_t n = 0; n < s.b; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t pr = 0; pr < g.rows; ++pr)
                for (int64_t pc = 0; pc < g.cols; ++pc) {
                    T* dst = g.at(n, c, pr, pc);
                    for (int64_t y = 0; y < patch_size; ++y) {
                        const int64_t sy = pr * patch_size + y;
                        if (sy >= s.h) break;
                        const int64_t run = std::min<int64_t>(patch_size, s.w - pc * patch_size);
                        for (int64_t xx = 0; xx < run; ++xx)
                            dst[y * patch_size + xx] = x.at(n, c, sy, pc * patch_size + xx);
                    }
                }
    return g;
}

template <typename T>
TensorT<T> unpatchify(const PatchGridT<T>& g) {
    const Shape4 s = g.origin;
    TensorT<T> out(s);
    for (int64_t n = 0; n < s.b; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t pr = 0; pr < g.rows; ++pr)
                for (int64_t pc = 0; pc < g.cols; ++pc) {
                    const T* src = g.at(n, c, pr, pc);
                    for (int64_t y = 0; y < g.patch; ++y) {
                        const int64_t dy = pr * g.patch + y;
                        if (dy >= s.h) break;
                        const int64_t run = std::min<int64_t>(g.patch, s.w - pc * g.patch);
                        for (int64_t xx = 0; xx < run; ++xx)
                            out.at(n, c, dy, pc * g.patch + xx) = src[y * g.patch + xx];
                    }
                }
    return out;
}

// Attention score map of one patch and one channel. Values live on the patch
// lattice (circular cross-correlation offsets), not on token pairs.
template <typename T>
struct AttentionMapT {
    int h = 0, w = 0;
    std::vector<T> values;
    int64_t batch = 0, channel = 0, patch_row = 0, patch_col = 0;

    T* row(int r) { return values.data() + static_cast<size_t>(r) * w; }
    const T* row(int r) const { return values.data() + static_cast<size_t>(r) * w; }
};

using AttentionMap = AttentionMapT<float>;

// Frequency-domain attention scores: elementwise spectral product with the
// conjugated key spectrum, i.e. the circular cross-correlation of q with k.
// The imaginary residue of the inverse transform must stay below 1e-4.
template <typename T>
AttentionMapT<T> freq_attention(const T* q_patch, const T* k_patch, int h, int w, FlopLedger* ledger = nullptr) {
    const Fft2PlanT<T>& plan = detail::plan_for<T>(h, w);
    ComplexPatchT<T> fq(h, w), fk(h, w);
    for (size_t i = 0; i < fq.data.size(); ++i) {
        fq.data[i] = std::complex<T>(q_patch[i], T(0));
        fk.data[i] = std::complex<T>(k_patch[i], T(0));
    }
    plan.forward(fq);
    plan.forward(fk);
    ComplexPatchT<T> prod = complex_hadamard(fq, fk, true);
    plan.inverse(prod);
    if (ledger) ledger->fft_butterflies += 3 * plan.butterflies_2d();

    AttentionMapT<T> m;
    m.h = h;
    m.w = w;
    m.values.resize(prod.data.size());
    for (size_t i = 0; i < prod.data.size(); ++i) {
        const double resid = std::abs(static_cast<double>(prod.data[i].imag()));
        if (resid > 1e-4)
            throw InternalError("freq_attention: imaginary residue " + std::to_string(resid) + " exceeds 1e-4");
        m.values[i] = prod.data[i].real();
    }
    return m;
}

// Row-wise retention mask over an attention map.
struct RowMask {
    int h = 0, w = 0;
    std::vector<uint8_t> keep;
    int64_t kept = 0;

    bool at(int r, int c) const { return keep[static_cast<size_t>(r) * w + c] != 0; }
};

// Min-p mask: per row, threshold = p_base * row max, optionally rescaled by a
// trust score in (0,1). Ties at the threshold are kept, so the row maximum
// always survives. Degenerate rows are passed through unmasked: p_base == 0
// means no filtering, and a non-positive row maximum leaves the row alone
// (a fraction of a non-positive max is not a meaningful threshold).
template <typename T>
RowMask min_p_row_mask(const AttentionMapT<T>& m, double p_base, std::optional<double> trust = std::nullopt) {
    require_arg(p_base >= 0.0 && p_base <= 1.0, "min_p: p_base must be in [0,1]");
    RowMask mask;
    mask.h = m.h;
    mask.w = m.w;
    mask.keep.assign(static_cast<size_t>(m.h) * m.w, 0);
    for (int r = 0; r < m.h; ++r) {
        const T* row = m.row(r);
        T mx = row[0];
        for (int c = 1; c < m.w; ++c) mx = std::max(mx, row[c]);
        const bool keep_all = p_base == 0.0 || mx <= T(0);
        double thr = p_base * static_cast<double>(mx);
        if (trust) thr = adjust_threshold(thr, *trust);
        for (int c = 0; c < m.w; ++c) {
            const bool keep = keep_all || static_cast<double>(row[c]) >= thr;
            mask.keep[static_cast<size_t>(r) * m.w + c] = keep ? 1 : 0;
            mask.kept += keep ? 1 : 0;
        }
    }
    return mask;
}

// Top-k mask: per row the k largest entries are kept; ties break toward the
// lower column index.
template <typename T>
RowMask top_k_row_mask(const AttentionMapT<T>& m, int k) {
    require_arg(k >= 1 && k <= m.w, "top_k: k=" + std::to_string(k) + " out of range [1," + std::to_string(m.w) + "]");
    RowMask mask;
    mask.h = m.h;
    mask.w = m.w;
    mask.keep.assign(static_cast<size_t>(m.h) * m.w, 0);
    std::vector<int> idx(static_cast<size_t>(m.w));
    for (int r = 0; r < m.h; ++r) {
        const T* row = m.row(r);
        for (int c = 0; c < m.w; ++c) idx[static_cast<size_t>(c)] = c;
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return row[a] > row[b]; });
        for (int j = 0; j < k; ++j) {
            mask.keep[static_cast<size_t>(r) * m.w + idx[static_cast<size_t>(j)]] = 1;
            ++mask.kept;
        }
    }
    return mask;
}

template <typename T>
AttentionMapT<T> apply_row_mask(const AttentionMapT<T>& m, const RowMask& mask) {
    AttentionMapT<T> out = m;
    for (size_t i = 0; i < out.values.size(); ++i)
        if (!mask.keep[i]) out.values[i] = T(0);
    return out;
}

// Spec-facing wrappers returning masked maps directly.
template <typename T>
AttentionMapT<T> min_p_mask(const AttentionMapT<T>& m, const SparsityConfig& cfg,
                            std::optional<double> trust = std::nullopt) {
    return apply_row_mask(m, min_p_row_mask(m, cfg.p_base, trust));
}

template <typename T>
AttentionMapT<T> top_k_mask(const AttentionMapT<T>& m, int k) {
    return apply_row_mask(m, top_k_row_mask(m, k));
}

// Value modulation by a masked score map. Multiplies are only spent (and only
// counted) on the retained entries.
template <typename T>
std::vector<T> apply_attention(const AttentionMapT<T>& masked, const T* v_patch, int h, int w,
                               FlopLedger* ledger = nullptr) {
    require_arg(masked.h == h && masked.w == w, "apply_attention: map and value patch shapes differ");
    std::vector<T> out(static_cast<size_t>(h) * w, T(0));
    int64_t mults = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        if (masked.values[i] != T(0)) {
            out[i] = masked.values[i] * v_patch[i];
            ++mults;
        }
    }
    if (ledger) {
        ledger->attention_multiplies += mults;
        ledger->attention_skipped += static_cast<int64_t>(out.size()) - mults;
    }
    return out;
}

// Trust score of one attention map (downsample, standardize, eigensolve).
template <typename T>
SpectralSummary map_summary(const AttentionMapT<T>& m, const TrustConfig& cfg) {
    const auto ds = downsample_map(m.values.data(), m.h, m.w, cfg.spectral_size);
    return spectral_summary(ds.data(), cfg.spectral_size, cfg);
}

namespace detail {

template <typename T>
struct AttnPatchCache {
    ComplexPatchT<T> fq, fk;
    std::vector<T> masked_m;
    std::vector<uint8_t> keep;
};

} // namespace detail

// Fused sparse frequency-domain attention over patchified Q, K, V. Forward
// computes per patch: M = real(IFFT(FFT(q) . conj(FFT(k)))), a retention mask
// per the configured strategy, and out = masked(M) . v. Masks are treated as
// constants in the backward pass; gradients flow through the correlation and
// the retained modulation entries only. Patch order is fixed (batch, channel,
// row, col), which also defines the ISA iteration order.
template <typename T>
NodeId sparse_freq_attention(TapeT<T>& t, NodeId q, NodeId k, NodeId v, const SparsityConfig& cfg, int patch,
                             FlopLedger* ledger = nullptr, AttnStats* stats = nullptr) {
    const TensorT<T>& Q = t.value(q);
    const TensorT<T>& K = t.value(k);
    const TensorT<T>& V = t.value(v);
    check_same_shape("sparse_freq_attention(q,k)", Q.shape(), K.shape());
    check_same_shape("sparse_freq_attention(q,v)", Q.shape(), V.shape());

    PatchGridT<T> gq = patchify(Q, patch);
    PatchGridT<T> gk = patchify(K, patch);
    PatchGridT<T> gv = patchify(V, patch);

    const Fft2PlanT<T>& plan = detail::plan_for<T>(patch, patch);
    auto cache = t.recording() ? std::make_shared<std::vector<detail::AttnPatchCache<T>>>() : nullptr;
    if (cache) cache->reserve(static_cast<size_t>(gq.patch_count()));

    PatchGridT<T> gout = gq;  // same geometry
    std::fill(gout.data.begin(), gout.data.end(), T(0));

    IsaState isa(cfg.trust);
    const Shape4 s = Q.shape();
    for (int64_t n = 0; n < s.b; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t pr = 0; pr < gq.rows; ++pr)
                for (int64_t pc = 0; pc < gq.cols; ++pc) {
                    const T* qp = gq.at(n, c, pr, pc);
                    const T* kp = gk.at(n, c, pr, pc);
                    const T* vp = gv.at(n, c, pr, pc);

                    ComplexPatchT<T> fq(patch, patch), fk(patch, patch);
                    for (int i = 0; i < patch * patch; ++i) {
                        fq.data[static_cast<size_t>(i)] = std::complex<T>(qp[i], T(0));
                        fk.data[static_cast<size_t>(i)] = std::complex<T>(kp[i], T(0));
                    }
                    plan.forward(fq);
                    plan.forward(fk);
                    ComplexPatchT<T> prod = complex_hadamard(fq, fk, true);
                    plan.inverse(prod);
                    if (ledger) ledger->fft_butterflies += 3 * plan.butterflies_2d();

                    AttentionMapT<T> m;
                    m.h = m.w = patch;
                    m.batch = n;
                    m.channel = c;
                    m.patch_row = pr;
                    m.patch_col = pc;
                    m.values.resize(static_cast<size_t>(patch) * patch);
                    for (size_t i = 0; i < m.values.size(); ++i) {
                        const double resid = std::abs(static_cast<double>(prod.data[i].imag()));
                        if (resid > 1e-4)
                            throw InternalError("sparse_freq_attention: imaginary residue " + std::to_string(resid) +
                                                " exceeds 1e-4");
                        m.values[i] = prod.data[i].real();
                    }

                    RowMask mask;
                    bool patch_kept = true;
                    switch (cfg.strategy) {
                        case Strategy::Dense: {
                            mask.h = mask.w = patch;
                            mask.keep.assign(m.values.size(), 1);
                            mask.kept = static_cast<int64_t>(m.values.size());
                            break;
                        }
                        case Strategy::MinP:
                            mask = min_p_row_mask(m, cfg.p_base);
                            break;
                        case Strategy::MinPTrusted: {
                            const SpectralSummary sm = map_summary(m, cfg.trust);
                            mask = min_p_row_mask(m, cfg.p_base, sm.trust);
                            break;
                        }
                        case Strategy::TopK:
                            mask = top_k_row_mask(m, cfg.top_k);
                            break;
                        case Strategy::Fed: {
                            const SpectralSummary sm = map_summary(m, cfg.trust);
                            patch_kept = sm.lambda_max < cfg.trust.fed_tau;
                            if (patch_kept) mask = min_p_row_mask(m, cfg.p_base);
                            break;
                        }
                        case Strategy::Isa: {
                            const SpectralSummary sm = map_summary(m, cfg.trust);
                            patch_kept = isa.admit(sm, cfg.trust);
                            if (patch_kept) mask = min_p_row_mask(m, cfg.p_base);
                            break;
                        }
                    }
                    if (!patch_kept) {
                        mask.h = mask.w = patch;
                        mask.keep.assign(m.values.size(), 0);
                        mask.kept = 0;
                    }

                    T* op = gout.at(n, c, pr, pc);
                    int64_t mults = 0;
                    for (size_t i = 0; i < m.values.size(); ++i) {
                        if (mask.keep[i]) {
                            op[i] = m.values[i] * vp[i];
                            ++mults;
                            if (stats) stats->retained_values.push_back(static_cast<double>(m.values[i]));
                        }
                    }
                    if (ledger) {
                        ledger->attention_multiplies += mults;
                        ledger->attention_skipped += static_cast<int64_t>(m.values.size()) - mults;
                    }

                    if (cache) {
                        detail::AttnPatchCache<T> pc_cache;
                        pc_cache.fq = std::move(fq);
                        pc_cache.fk = std::move(fk);
                        pc_cache.keep = mask.keep;
                        pc_cache.masked_m.assign(m.values.size(), T(0));
                        for (size_t i = 0; i < m.values.size(); ++i)
                            if (mask.keep[i]) pc_cache.masked_m[i] = m.values[i];
                        cache->push_back(std::move(pc_cache));
                    }
                }

    TensorT<T> out = unpatchify(gout);
    if (!t.recording()) return t.push(std::move(out), nullptr);

    return t.push(std::move(out), [q, k, v, patch, cache, s](TapeT<T>& tp, NodeId self) {
        const Fft2PlanT<T>& plan = detail::plan_for<T>(patch, patch);
        PatchGridT<T> gg = patchify(tp.grad(self), patch);
        PatchGridT<T> gv2 = patchify(tp.value(v), patch);
        PatchGridT<T> dq_grid = gg;
        PatchGridT<T> dk_grid = gg;
        PatchGridT<T> dv_grid = gg;
        std::fill(dq_grid.data.begin(), dq_grid.data.end(), T(0));
        std::fill(dk_grid.data.begin(), dk_grid.data.end(), T(0));
        std::fill(dv_grid.data.begin(), dv_grid.data.end(), T(0));

        size_t patch_idx = 0;
        const int pp = patch * patch;
        for (int64_t n = 0; n < s.b; ++n)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t pr = 0; pr < gg.rows; ++pr)
                    for (int64_t pc = 0; pc < gg.cols; ++pc, ++patch_idx) {
                        const auto& pcache = (*cache)[patch_idx];
                        const T* gp = gg.at(n, c, pr, pc);
                        const T* vp = gv2.at(n, c, pr, pc);

                        // value gradient through the retained modulation
                        T* dvp = dv_grid.at(n, c, pr, pc);
                        for (int i = 0; i < pp; ++i) dvp[i] = pcache.masked_m[static_cast<size_t>(i)] * gp[i];

                        // score gradient, masked to the retained entries
                        ComplexPatchT<T> dm(patch, patch);
                        bool any = false;
                        for (int i = 0; i < pp; ++i) {
                            const T g = pcache.keep[static_cast<size_t>(i)] ? gp[i] * vp[i] : T(0);
                            any = any || g != T(0);
                            dm.data[static_cast<size_t>(i)] = std::complex<T>(g, T(0));
                        }
                        if (!any) continue;
                        plan.forward(dm);
                        // dq = circular convolution of dM with k
                        ComplexPatchT<T> dq_spec = complex_hadamard(dm, pcache.fk, false);
                        plan.inverse(dq_spec);
                        // dk = circular cross-correlation of q with dM
                        ComplexPatchT<T> dk_spec = complex_hadamard(pcache.fq, dm, true);
                        plan.inverse(dk_spec);
                        T* dqp = dq_grid.at(n, c, pr, pc);
                        T* dkp = dk_grid.at(n, c, pr, pc);
                        for (int i = 0; i < pp; ++i) {
                            dqp[i] = dq_spec.data[static_cast<size_t>(i)].real();
                            dkp[i] = dk_spec.data[static_cast<size_t>(i)].real();
                        }
                    }

        TensorT<T> dq = unpatchify(dq_grid);
        TensorT<T> dk = unpatchify(dk_grid);
        TensorT<T> dv = unpatchify(dv_grid);
        TensorT<T>& gq = tp.grad(q);
        TensorT<T>& gk = tp.grad(k);
        TensorT<T>& gvt = tp.grad(v);
        for (int64_t i = 0; i < dq.numel(); ++i) {
            gq[i] += dq[i];
            gk[i] += dk[i];
            gvt[i] += dv[i];
        }
    });
}

// Q/K/V from three independent depthwise 3x3 projections; attention mixes
// nothing across channels, channel mixing is the FFN's job.
template <typename T>
struct MsaWeightsT {
    ParameterT<T>* q_w = nullptr;
    ParameterT<T>* q_b = nullptr;
    ParameterT<T>* k_w = nullptr;
    ParameterT<T>* k_b = nullptr;
    ParameterT<T>* v_w = nullptr;
    ParameterT<T>* v_b = nullptr;
};

template <typename T>
struct QkvNodes {
    NodeId q, k, v;
};

template <typename T>
QkvNodes<T> qkv_project(TapeT<T>& t, NodeId x, const MsaWeightsT<T>& w, FlopLedger* ledger = nullptr) {
    QkvNodes<T> out{};
    out.q = conv2d(t, x, t.param(*w.q_w), t.param(*w.q_b), ConvMode::Depthwise3x3, 1, ledger);
    out.k = conv2d(t, x, t.param(*w.k_w), t.param(*w.k_b), ConvMode::Depthwise3x3, 1, ledger);
    out.v = conv2d(t, x, t.param(*w.v_w), t.param(*w.v_b), ConvMode::Depthwise3x3, 1, ledger);
    return out;
}

template <typename T>
NodeId msa_forward(TapeT<T>& t, NodeId x, const MsaWeightsT<T>& w, const SparsityConfig& cfg, int patch_size,
                   FlopLedger* ledger = nullptr, AttnStats* stats = nullptr) {
    QkvNodes<T> qkv = qkv_project(t, x, w, ledger);
    return sparse_freq_attention(t, qkv.q, qkv.k, qkv.v, cfg, patch_size, ledger, stats);
}

} // namespace tsf
