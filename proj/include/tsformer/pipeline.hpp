#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "gradcheck.hpp"
#include "image_io.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optimizer.hpp"

namespace tsf {

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

// Smooth procedural texture (low-frequency sinusoids plus soft blobs), values
// in roughly [0.1, 0.9]. Deterministic in the seed.
inline Tensor generate_texture(uint64_t seed, int size) {
    std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 4; ++i)
        waves.push_back({1.0 + 3.0 * uni(rng), 1.0 + 3.0 * uni(rng), 2.0 * M_PI * uni(rng), 0.25 * uni(rng)});
    struct Blob {
        double cx, cy, r, amp;
    };
    std::vector<Blob> blobs;
    for (int i = 0; i < 3; ++i)
        blobs.push_back({uni(rng), uni(rng), 0.1 + 0.25 * uni(rng), 0.5 * uni(rng) - 0.25});
    const double gx = uni(rng) - 0.5, gy = uni(rng) - 0.5;
    double tint[3];
    for (double& t : tint) t = 0.12 * (uni(rng) - 0.5);

    Tensor img(Shape4{1, 3, size, size});
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
            double base = 0.5 + 0.2 * (gx * (u - 0.5) + gy * (v - 0.5));
            for (const auto& wv : waves)
                base += wv.amp * std::sin(2.0 * M_PI * (wv.fx * u + wv.fy * v) + wv.phase) / 4.0;
            for (const auto& bl : blobs) {
                const double d2 = (u - bl.cx) * (u - bl.cx) + (v - bl.cy) * (v - bl.cy);
                base += bl.amp * std::exp(-d2 / (bl.r * bl.r));
            }
            for (int64_t c = 0; c < 3; ++c) {
                const double val = std::clamp(base + tint[c] * (0.5 + u - v), 0.05, 0.95);
                img.at(0, c, y, x) = static_cast<float>(val);
            }
        }
    return img;
}

enum class DegradationKind { GaussianNoise, GammaDarken, SyntheticHaze };

inline DegradationKind parse_degradation(const std::string& s) {
    if (s == "gaussian_noise") return DegradationKind::GaussianNoise;
    if (s == "gamma_darken") return DegradationKind::GammaDarken;
    if (s == "synthetic_haze") return DegradationKind::SyntheticHaze;
    throw std::invalid_argument("config: unknown degradation '" + s +
                                "' (expected gaussian_noise|gamma_darken|synthetic_haze)");
}

struct DegradationSpec {
    DegradationKind kind = DegradationKind::GaussianNoise;
    double sigma = 0.1;
    double gamma = 2.2;
    double t = 0.6;       // haze transmission
    double airlight = 0.9;
    uint64_t seed = 0;

    static DegradationSpec from_config(const RunConfig& cfg, uint64_t seed) {
        DegradationSpec d;
        d.kind = parse_degradation(cfg.degradation);
        d.sigma = cfg.noise_sigma;
        d.gamma = cfg.gamma;
        d.t = cfg.haze_t;
        d.airlight = cfg.haze_a;
        d.seed = seed;
        return d;
    }
};

inline Tensor apply_degradation(const Tensor& clean, const DegradationSpec& spec) {
    Tensor out = clean;
    switch (spec.kind) {
        case DegradationKind::GaussianNoise: {
            std::mt19937 rng(static_cast<uint32_t>(spec.seed ^ (spec.seed >> 32)));
            std::normal_distribution<double> n(0.0, spec.sigma);
            for (int64_t i = 0; i < out.numel(); ++i)
                out[i] = static_cast<float>(std::clamp(static_cast<double>(out[i]) + n(rng), 0.0, 1.0));
            break;
        }
        case DegradationKind::GammaDarken:
            for (int64_t i = 0; i < out.numel(); ++i)
                out[i] = static_cast<float>(std::pow(static_cast<double>(out[i]), spec.gamma));
            break;
        case DegradationKind::SyntheticHaze:
            for (int64_t i = 0; i < out.numel(); ++i)
                out[i] = static_cast<float>(static_cast<double>(out[i]) * spec.t + spec.airlight * (1.0 - spec.t));
            break;
    }
    return out;
}

struct TrainPair {
    Tensor clean;
    Tensor degraded;
};

inline uint64_t mix_seed(uint64_t base, uint64_t salt) {
    uint64_t z = base + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Fixed clean/degraded pairs: procedural textures by default, or every
// PNG/PPM in data_dir. Each image is degraded once with its own derived seed.
inline std::vector<TrainPair> build_dataset(const RunConfig& cfg) {
    std::vector<Tensor> cleans;
    if (!cfg.data_dir.empty()) {
        std::vector<std::string> files;
        for (const auto& e : std::filesystem::directory_iterator(cfg.data_dir)) {
            if (!e.is_regular_file()) continue;
            const std::string ext = e.path().extension().string();
            if (ext == ".png" || ext == ".ppm") files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) cleans.push_back(load_image(f));
        if (cleans.empty()) throw DataError("dataset: no .png/.ppm images found in '" + cfg.data_dir + "'");
    } else {
        require_arg(cfg.textures >= 1, "config: textures must be >= 1");
        for (int i = 0; i < cfg.textures; ++i)
            cleans.push_back(generate_texture(mix_seed(cfg.seed, static_cast<uint64_t>(i)), cfg.texture_size));
    }
    std::vector<TrainPair> pairs;
    pairs.reserve(cleans.size());
    for (size_t i = 0; i < cleans.size(); ++i) {
        DegradationSpec spec = DegradationSpec::from_config(cfg, mix_seed(cfg.seed, 0xd09 + i));
        pairs.push_back(TrainPair{cleans[i], apply_degradation(cleans[i], spec)});
    }
    return pairs;
}

// Crop with optional horizontal/vertical flips, producing one batch entry.
inline void copy_crop(const Tensor& src, Tensor& dst, int64_t batch_idx, int64_t y0, int64_t x0, int size,
                      bool flip_h, bool flip_v) {
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                const int64_t sy = y0 + (flip_v ? size - 1 - y : y);
                const int64_t sx = x0 + (flip_h ? size - 1 - x : x);
                dst.at(batch_idx, c, y, x) = src.at(0, c, sy, sx);
            }
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

inline std::string fmt_csv(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// UTF-8, comma-separated, '.' decimal; the full echoed config rides along as
// leading comment lines.
struct CsvWriter {
    std::ofstream out;

    CsvWriter(const std::string& path, const RunConfig& cfg, const std::string& header) {
        out.open(path);
        if (!out) throw DataError("csv: cannot open '" + path + "' for writing");
        for (const auto& [k, v] : cfg.echo()) out << "# " << k << " = " << v << "\n";
        out << header << "\n";
    }

    void row(const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << "\n";
    }
};

// ---------------------------------------------------------------------------
// Toy training
// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<double> losses;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Desk-scale training on random crops of the fixed degraded pairs. Fully
// deterministic for a given config: the loss curve, the checkpoint and the
// CSV are reproducible byte for byte.
inline TSFormer train_toy(const RunConfig& cfg, TrainResult* result = nullptr, std::ostream* log = nullptr) {
    const auto pairs = build_dataset(cfg);
    require_arg(cfg.batch >= 1, "config: batch must be >= 1");
    require_arg(cfg.iterations >= 1, "config: iterations must be >= 1");
    for (const auto& p : pairs)
        require_arg(p.clean.shape().h >= cfg.crop && p.clean.shape().w >= cfg.crop,
                    "config: crop " + std::to_string(cfg.crop) + " larger than dataset image " +
                        p.clean.shape().str());

    TSFormer model(cfg.make_model_config(), mix_seed(cfg.seed, 0xabcdef));
    auto params = model.parameters();
    OptimizerState opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;

    std::mt19937_64 rng(cfg.seed);
    TrainResult tr;
    for (int64_t it = 0; it < cfg.iterations; ++it) {
        Tensor clean_batch(Shape4{cfg.batch, 3, cfg.crop, cfg.crop});
        Tensor degraded_batch(Shape4{cfg.batch, 3, cfg.crop, cfg.crop});
        for (int64_t b = 0; b < cfg.batch; ++b) {
            const auto& pair = pairs[rng() % pairs.size()];
            const int64_t max_y = pair.clean.shape().h - cfg.crop;
            const int64_t max_x = pair.clean.shape().w - cfg.crop;
            const int64_t y0 = max_y > 0 ? static_cast<int64_t>(rng() % static_cast<uint64_t>(max_y + 1)) : 0;
            const int64_t x0 = max_x > 0 ? static_cast<int64_t>(rng() % static_cast<uint64_t>(max_x + 1)) : 0;
            const bool fh = cfg.augment_flips && (rng() & 1);
            const bool fv = cfg.augment_flips && (rng() & 1);
            copy_crop(pair.clean, clean_batch, b, y0, x0, cfg.crop, fh, fv);
            copy_crop(pair.degraded, degraded_batch, b, y0, x0, cfg.crop, fh, fv);
        }

        model.zero_grads();
        Tape tape(true);
        const NodeId restored = model.forward(tape, tape.constant(degraded_batch));
        const NodeId loss = l1_loss(tape, restored, tape.constant(clean_batch));
        const double loss_val = tape.value(loss)[0];
        tape.backward(loss);
        adamw_step(params, opt);

        tr.losses.push_back(loss_val);
        if (log && (it % 25 == 0 || it + 1 == cfg.iterations))
            *log << "iter " << it << "  l1 " << fmt_csv(loss_val) << "\n";
    }
    tr.initial_loss = tr.losses.front();
    tr.final_loss = tr.losses.back();

    if (!cfg.loss_csv.empty()) {
        CsvWriter csv(cfg.loss_csv, cfg, "iteration,l1_loss");
        for (size_t i = 0; i < tr.losses.size(); ++i)
            csv.row({std::to_string(i), fmt_csv(tr.losses[i])});
    }
    if (result) *result = tr;
    return model;
}

// ---------------------------------------------------------------------------
// Tiled inference
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int64_t> tile_origins(int64_t extent, int64_t tile, int64_t step) {
    std::vector<int64_t> origins;
    if (extent <= tile) {
        origins.push_back(0);
        return origins;
    }
    for (int64_t o = 0;; o += step) {
        if (o + tile >= extent) {
            origins.push_back(extent - tile);
            break;
        }
        origins.push_back(o);
    }
    return origins;
}

// Per-tile 1D blend weight: flat inside, linear ramp across the overlap zone
// toward interior tile boundaries.
inline double tile_weight(int64_t i, int64_t tile, int64_t overlap, bool has_left, bool has_right) {
    double w = 1.0;
    if (has_left) w = std::min(w, static_cast<double>(i + 1) / static_cast<double>(overlap + 1));
    if (has_right) w = std::min(w, static_cast<double>(tile - i) / static_cast<double>(overlap + 1));
    return w;
}

} // namespace detail

// Overlap-blended tiled model evaluation. Each tile is evaluated with up to
// `overlap` pixels of real image context on every side (cropped away before
// blending), so interior pixels see the same neighbourhood as a full-frame
// pass. Ramp weights form a partition of unity after normalization, so an
// identity model reproduces the input up to blend arithmetic.
inline Tensor tile_inference(TSFormer& model, const Tensor& img, int tile, int overlap,
                             FlopLedger* ledger = nullptr, AttnStats* stats = nullptr) {
    require_arg(tile > 2 * overlap, "tile_inference: tile must exceed twice the overlap");
    require_arg(overlap >= 0, "tile_inference: overlap must be nonnegative");
    const Shape4 s = img.shape();
    if (s.h <= tile && s.w <= tile) {
        Tape t(false);
        return t.value(model.forward(t, t.constant(img), ledger, stats));
    }

    const int64_t step = tile - overlap;
    const auto ys = detail::tile_origins(s.h, tile, step);
    const auto xs = detail::tile_origins(s.w, tile, step);
    Tensor num(s);
    Tensor den(s);
    for (size_t ti = 0; ti < ys.size(); ++ti) {
        for (size_t tj = 0; tj < xs.size(); ++tj) {
            const int64_t y0 = ys[ti], x0 = xs[tj];
            const int64_t th = std::min<int64_t>(tile, s.h - y0);
            const int64_t tw = std::min<int64_t>(tile, s.w - x0);
            const int64_t cy0 = std::max<int64_t>(0, y0 - overlap);
            const int64_t cy1 = std::min<int64_t>(s.h, y0 + th + overlap);
            const int64_t cx0 = std::max<int64_t>(0, x0 - overlap);
            const int64_t cx1 = std::min<int64_t>(s.w, x0 + tw + overlap);
            Tensor ctx_in(Shape4{s.b, s.c, cy1 - cy0, cx1 - cx0});
            for (int64_t n = 0; n < s.b; ++n)
                for (int64_t c = 0; c < s.c; ++c)
                    for (int64_t y = cy0; y < cy1; ++y)
                        for (int64_t x = cx0; x < cx1; ++x)
                            ctx_in.at(n, c, y - cy0, x - cx0) = img.at(n, c, y, x);
            Tape t(false);
            const Tensor ctx_out = t.value(model.forward(t, t.constant(ctx_in), ledger, stats));
            const bool left = x0 > 0, right = x0 + tw < s.w;
            const bool top = y0 > 0, bottom = y0 + th < s.h;
            for (int64_t y = 0; y < th; ++y) {
                const double wy = detail::tile_weight(y, th, overlap, top, bottom);
                for (int64_t x = 0; x < tw; ++x) {
                    const double w = wy * detail::tile_weight(x, tw, overlap, left, right);
                    for (int64_t n = 0; n < s.b; ++n)
                        for (int64_t c = 0; c < s.c; ++c) {
                            num.at(n, c, y0 + y, x0 + x) +=
                                static_cast<float>(w) * ctx_out.at(n, c, y0 - cy0 + y, x0 - cx0 + x);
                            den.at(n, c, y0 + y, x0 + x) += static_cast<float>(w);
                        }
                }
            }
        }
    }
    for (int64_t i = 0; i < num.numel(); ++i) num[i] /= den[i];
    return num;
}

// ---------------------------------------------------------------------------
// Restore
// ---------------------------------------------------------------------------

struct RestoreResult {
    Tensor output;
    bool has_metrics = false;
    double psnr_restored = 0.0, ssim_restored = 0.0;
    double psnr_degraded = 0.0, ssim_degraded = 0.0;
};

inline RestoreResult run_restore(const RunConfig& cfg, std::ostream* log = nullptr) {
    require_arg(!cfg.checkpoint.empty(), "restore: a checkpoint path is required");
    require_arg(!cfg.input.empty(), "restore: an input image path is required");
    TSFormer model = checkpoint_load(cfg.checkpoint);
    check_architecture_match(model.config(), cfg.make_model_config());
    // Sampling settings follow the run configuration, not the checkpoint.
    model.mutable_config().sparsity = cfg.make_model_config().sparsity;

    const Tensor degraded = load_image(cfg.input);
    RestoreResult res;
    res.output = tile_inference(model, degraded, cfg.tile, cfg.overlap);
    if (!cfg.out.empty()) save_image(res.output, cfg.out);

    if (!cfg.reference.empty()) {
        const Tensor ref = load_image(cfg.reference);
        res.has_metrics = true;
        res.psnr_restored = psnr(res.output, ref);
        res.ssim_restored = ssim(res.output, ref);
        res.psnr_degraded = psnr(degraded, ref);
        res.ssim_degraded = ssim(degraded, ref);
        if (log)
            *log << "psnr " << fmt_csv(res.psnr_restored) << " dB (input " << fmt_csv(res.psnr_degraded)
                 << " dB)  ssim " << fmt_csv(res.ssim_restored) << " (input " << fmt_csv(res.ssim_degraded)
                 << ")\n";
    }
    return res;
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

struct BenchReport {
    int64_t param_count = 0;
    FlopLedger dense;
    FlopLedger sparse;
    FlopReport reduction;
    double dense_seconds = 0.0;
    double sparse_seconds = 0.0;
};

// Dense vs sparse forward on the same synthetic input and weights. Wall times
// go to the log only; the CSV carries the deterministic counters.
inline BenchReport run_bench(const RunConfig& cfg, std::ostream* log = nullptr) {
    TSFormer model(cfg.make_model_config(), mix_seed(cfg.seed, 0xbe7c4));
    const Tensor img = generate_texture(mix_seed(cfg.seed, 0x1317), cfg.bench_size);

    BenchReport rep;
    rep.param_count = model.param_count();

    const Strategy run_strategy = model.config().sparsity.strategy;
    auto timed = [&](Strategy strat, FlopLedger& ledger) {
        model.mutable_config().sparsity.strategy = strat;
        const auto t0 = std::chrono::steady_clock::now();
        tile_inference(model, img, cfg.tile, cfg.overlap, &ledger);
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    rep.dense_seconds = timed(Strategy::Dense, rep.dense);
    rep.sparse_seconds = timed(run_strategy, rep.sparse);
    model.mutable_config().sparsity.strategy = run_strategy;
    rep.reduction = flops_report(rep.sparse, rep.dense);

    if (log) {
        *log << "parameters: " << rep.param_count << "\n";
        *log << "dense:  conv_macs=" << rep.dense.conv_macs << " fft_butterflies=" << rep.dense.fft_butterflies
             << " attention_multiplies=" << rep.dense.attention_multiplies << " (" << fmt_csv(rep.dense_seconds)
             << " s)\n";
        *log << "sparse: conv_macs=" << rep.sparse.conv_macs << " fft_butterflies=" << rep.sparse.fft_butterflies
             << " attention_multiplies=" << rep.sparse.attention_multiplies << " skipped="
             << rep.sparse.attention_skipped << " (" << fmt_csv(rep.sparse_seconds) << " s)\n";
        *log << "attention flop reduction: " << fmt_csv(100.0 * rep.reduction.attention_reduction)
             << "% (masked fraction " << fmt_csv(100.0 * rep.reduction.masked_fraction) << "%)\n";
        *log << "total flop reduction: " << fmt_csv(100.0 * rep.reduction.total_reduction) << "%\n";
    }
    if (!cfg.out.empty()) {
        CsvWriter csv(cfg.out, cfg, "metric,value");
        csv.row({"param_count", std::to_string(rep.param_count)});
        csv.row({"dense_conv_macs", std::to_string(rep.dense.conv_macs)});
        csv.row({"dense_fft_butterflies", std::to_string(rep.dense.fft_butterflies)});
        csv.row({"dense_attention_multiplies", std::to_string(rep.dense.attention_multiplies)});
        csv.row({"sparse_conv_macs", std::to_string(rep.sparse.conv_macs)});
        csv.row({"sparse_fft_butterflies", std::to_string(rep.sparse.fft_butterflies)});
        csv.row({"sparse_attention_multiplies", std::to_string(rep.sparse.attention_multiplies)});
        csv.row({"sparse_attention_skipped", std::to_string(rep.sparse.attention_skipped)});
        csv.row({"attention_reduction", fmt_csv(rep.reduction.attention_reduction)});
        csv.row({"masked_fraction", fmt_csv(rep.reduction.masked_fraction)});
        csv.row({"total_reduction", fmt_csv(rep.reduction.total_reduction)});
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Sampling ablation harness
// ---------------------------------------------------------------------------

struct PlantedMap {
    AttentionMapT<float> map;
    std::vector<uint8_t> support;
    int mean_support = 1;
};

// Planted-support benchmark map: each row gets a handful of signal entries
// (optionally in pairwise distinct columns) on a Gaussian noise floor.
inline PlantedMap gen_planted_map(std::mt19937& rng, const RunConfig& cfg) {
    const int m = cfg.bench_map_size;
    require_arg(m >= 2, "config: bench_map_size must be >= 2");
    require_arg(cfg.bench_support_min >= 1 && cfg.bench_support_max >= cfg.bench_support_min &&
                    cfg.bench_support_max <= m,
                "config: bench support range invalid");
    PlantedMap pm;
    pm.map.h = pm.map.w = m;
    pm.map.values.assign(static_cast<size_t>(m) * m, 0.0f);
    pm.support.assign(static_cast<size_t>(m) * m, 0);
    pm.mean_support = std::max(1, (cfg.bench_support_min + cfg.bench_support_max) / 2);

    std::uniform_real_distribution<double> amp(cfg.bench_amp_lo, cfg.bench_amp_hi);
    std::vector<int> cols(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) cols[static_cast<size_t>(i)] = i;
    if (cfg.bench_distinct) {
        require_arg(cfg.bench_support_min == 1 && cfg.bench_support_max == 1,
                    "config: bench_distinct requires support size 1");
        std::shuffle(cols.begin(), cols.end(), rng);
        for (int r = 0; r < m; ++r) {
            const size_t idx = static_cast<size_t>(r) * m + cols[static_cast<size_t>(r)];
            pm.map.values[idx] = static_cast<float>(amp(rng));
            pm.support[idx] = 1;
        }
    } else {
        std::uniform_int_distribution<int> size_d(cfg.bench_support_min, cfg.bench_support_max);
        for (int r = 0; r < m; ++r) {
            const int s = size_d(rng);
            std::shuffle(cols.begin(), cols.end(), rng);
            for (int j = 0; j < s; ++j) {
                const size_t idx = static_cast<size_t>(r) * m + cols[static_cast<size_t>(j)];
                pm.map.values[idx] = static_cast<float>(amp(rng));
                pm.support[idx] = 1;
            }
        }
    }
    if (cfg.bench_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.bench_sigma);
        for (auto& v : pm.map.values) v = static_cast<float>(v + noise(rng));
    }
    return pm;
}

struct PrfScore {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline PrfScore score_mask(const std::vector<uint8_t>& keep, const std::vector<uint8_t>& support) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] && support[i]) ++tp;
        else if (keep[i] && !support[i]) ++fp;
        else if (!keep[i] && support[i]) ++fn;
    }
    PrfScore s;
    if (tp == 0) return s;
    s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

inline const std::vector<Strategy>& ablation_strategies() {
    static const std::vector<Strategy> v = {Strategy::TopK, Strategy::MinP, Strategy::MinPTrusted, Strategy::Fed,
                                            Strategy::Isa};
    return v;
}

struct SupportRecoveryRow {
    Strategy strategy;
    PrfScore mean;
};

// Averages precision/recall/F1 of each sampling strategy over seeded planted
// maps. ISA keeps its running threshold within one trial only: every seed is
// an independent draw.
inline std::vector<SupportRecoveryRow> support_recovery_benchmark(const RunConfig& cfg) {
    TrustConfig trust;
    trust.spectral_size = cfg.spectral_size;
    trust.beta = cfg.trust_beta;
    trust.fed_tau = cfg.fed_tau;
    trust.isa_alpha = cfg.isa_alpha;

    std::vector<SupportRecoveryRow> rows;
    for (Strategy strat : ablation_strategies()) rows.push_back({strat, {}});

    for (int s = 0; s < cfg.bench_seeds; ++s) {
        std::mt19937 rng(static_cast<uint32_t>(mix_seed(cfg.seed, 0xab1a7e + static_cast<uint64_t>(s))));
        const PlantedMap pm = gen_planted_map(rng, cfg);
        const auto summary = map_summary(pm.map, trust);

        for (auto& row : rows) {
            RowMask mask;
            bool kept = true;
            switch (row.strategy) {
                case Strategy::TopK:
                    mask = top_k_row_mask(pm.map, std::min(pm.mean_support, pm.map.w));
                    break;
                case Strategy::MinP:
                    mask = min_p_row_mask(pm.map, cfg.bench_p_base);
                    break;
                case Strategy::MinPTrusted:
                    mask = min_p_row_mask(pm.map, cfg.bench_p_base, summary.trust);
                    break;
                case Strategy::Fed:
                    kept = summary.lambda_max < trust.fed_tau;
                    if (kept) mask = min_p_row_mask(pm.map, cfg.bench_p_base);
                    break;
                case Strategy::Isa: {
                    IsaState isa(trust);
                    kept = isa.admit(summary, trust);
                    if (kept) mask = min_p_row_mask(pm.map, cfg.bench_p_base);
                    break;
                }
                default:
                    break;
            }
            if (!kept) mask.keep.assign(pm.support.size(), 0);
            const PrfScore sc = score_mask(mask.keep, pm.support);
            row.mean.precision += sc.precision;
            row.mean.recall += sc.recall;
            row.mean.f1 += sc.f1;
        }
    }
    for (auto& row : rows) {
        row.mean.precision /= cfg.bench_seeds;
        row.mean.recall /= cfg.bench_seeds;
        row.mean.f1 /= cfg.bench_seeds;
    }
    return rows;
}

struct AblateRow {
    Strategy strategy;
    PrfScore support;
    double psnr = 0.0;
    double ssim_val = 0.0;
};

// Runs (a) the planted-support benchmark and (b) restoration quality of one
// trained model evaluated under each sampling strategy, and emits the summary
// CSV plus cumulative histograms of the retained attention scores.
inline std::vector<AblateRow> run_ablation(const RunConfig& cfg, const std::string& out_prefix,
                                           std::ostream* log = nullptr) {
    const auto recovery = support_recovery_benchmark(cfg);

    TSFormer model = [&] {
        if (!cfg.checkpoint.empty()) {
            TSFormer m = checkpoint_load(cfg.checkpoint);
            check_architecture_match(m.config(), cfg.make_model_config());
            return m;
        }
        if (log) *log << "training toy model for the restoration comparison...\n";
        return train_toy(cfg);
    }();

    // Held-out evaluation pairs, disjoint seeds from the training textures.
    const int eval_images = 3;
    std::vector<TrainPair> eval_pairs;
    for (int i = 0; i < eval_images; ++i) {
        const Tensor clean = generate_texture(mix_seed(cfg.seed, 0x7e57 + static_cast<uint64_t>(i)), cfg.texture_size);
        DegradationSpec spec = DegradationSpec::from_config(cfg, mix_seed(cfg.seed, 0xeba1 + static_cast<uint64_t>(i)));
        eval_pairs.push_back(TrainPair{clean, apply_degradation(clean, spec)});
    }

    std::vector<AblateRow> rows;
    std::vector<std::vector<double>> histograms;
    for (size_t si = 0; si < ablation_strategies().size(); ++si) {
        const Strategy strat = ablation_strategies()[si];
        AblateRow row;
        row.strategy = strat;
        row.support = recovery[si].mean;

        model.mutable_config().sparsity.strategy = strat;
        AttnStats stats;
        double psum = 0.0, ssum = 0.0;
        for (size_t i = 0; i < eval_pairs.size(); ++i) {
            AttnStats* collect = i == 0 ? &stats : nullptr;
            Tape t(false);
            const Tensor restored =
                t.value(model.forward(t, t.constant(eval_pairs[i].degraded), nullptr, collect));
            psum += psnr(restored, eval_pairs[i].clean);
            ssum += ssim(restored, eval_pairs[i].clean);
        }
        row.psnr = psum / eval_pairs.size();
        row.ssim_val = ssum / eval_pairs.size();
        rows.push_back(row);
        histograms.push_back(stats.retained_values);
        if (log)
            *log << strategy_name(strat) << ": f1 " << fmt_csv(row.support.f1) << "  psnr " << fmt_csv(row.psnr)
                 << "  ssim " << fmt_csv(row.ssim_val) << "\n";
    }

    CsvWriter summary(out_prefix + "_summary.csv", cfg, "strategy,precision,recall,f1,psnr,ssim");
    for (const auto& row : rows)
        summary.row({strategy_name(row.strategy), fmt_csv(row.support.precision), fmt_csv(row.support.recall),
                     fmt_csv(row.support.f1), fmt_csv(row.psnr), fmt_csv(row.ssim_val)});

    // Cumulative distribution of retained attention scores, 32 uniform bins.
    CsvWriter hist(out_prefix + "_hist.csv", cfg, "strategy,bin_upper,cumulative_fraction");
    constexpr int bins = 32;
    for (size_t si = 0; si < rows.size(); ++si) {
        auto vals = histograms[si];
        if (vals.empty()) {
            hist.row({strategy_name(rows[si].strategy), "0", "0"});
            continue;
        }
        std::sort(vals.begin(), vals.end());
        const double lo = vals.front(), hi = vals.back();
        const double width = hi > lo ? (hi - lo) / bins : 1.0;
        size_t cursor = 0;
        for (int b = 1; b <= bins; ++b) {
            const double edge = lo + width * b;
            while (cursor < vals.size() && vals[cursor] <= edge) ++cursor;
            hist.row({strategy_name(rows[si].strategy), fmt_csv(edge),
                      fmt_csv(static_cast<double>(cursor) / static_cast<double>(vals.size()))});
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Gradient-check command
// ---------------------------------------------------------------------------

inline bool run_grad_check_report(std::ostream& out, int seeds = 5, double tol = 1e-3) {
    std::vector<uint32_t> seed_list;
    for (int i = 1; i <= seeds; ++i) seed_list.push_back(static_cast<uint32_t>(i));
    const auto results = run_standard_grad_checks(seed_list, tol);
    out << format_grad_report(results);
    bool all = true;
    for (const auto& r : results) all = all && r.pass;
    out << (all ? "all gradient checks passed" : "gradient check FAILURES detected") << "\n";
    return all;
}

} // namespace tsf
