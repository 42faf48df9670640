#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nn_ops.hpp"
#include "tensor.hpp"

namespace tsf {

// Settings of the random-matrix trust statistic and of the eigenvalue-based
// patch filters used in the sampling ablations.
struct TrustConfig {
    int spectral_size = 16;     // side of the map fed to the eigensolver
    double beta = 1.0;          // sigmoid sharpness of the trust score
    double fed_tau = 12.0;      // patch kept when lambda_max < tau
    double isa_alpha = 4.0;     // tau = alpha * Var(stable eigenvalues)
    double isa_tau_init = 4.0;  // tau before any stable patch has been seen
};

// Eigenvalue statistics of a standardized attention map. mp_edge is the
// Marchenko-Pastur bulk edge of a square standardized Gram matrix (4 for unit
// variance and aspect ratio 1); trust maps the gap between the edge and the
// observed top eigenvalue through a sigmoid into (0,1).
struct SpectralSummary {
    std::vector<double> eigenvalues;  // descending, nonnegative
    double lambda_max = 0.0;
    double mp_edge = 4.0;
    double trust = 0.5;
};

// Eigenvalues of a dense symmetric n x n matrix by cyclic Jacobi rotations,
// returned in descending order. Small n only; the trust statistic uses
// n = spectral_size.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
    require_arg(n >= 1 && static_cast<int64_t>(a.size()) == static_cast<int64_t>(n) * n,
                "jacobi_eigenvalues: matrix size does not match n");
    auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-22) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double sign = theta >= 0.0 ? 1.0 : -1.0;
                const double tt = sign / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + tt * tt);
                const double s = tt * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = at(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

// Bilinear resize of an attention map to the spectral evaluation size.
template <typename T>
std::vector<T> downsample_map(const T* m, int64_t h, int64_t w, int target) {
    require_arg(h >= 2 && w >= 2, "downsample_map: map must be at least 2x2");
    require_arg(target >= 2, "downsample_map: spectral size must be >= 2");
    if (h == target && w == target) return std::vector<T>(m, m + h * w);
    return bilinear_resize_plane(m, h, w, target, target);
}

inline double sigmoid_double(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Spectral summary of a square map: standardize entries to zero mean and unit
// variance, form G = (1/m) M M^T, take its eigenvalues and convert the top one
// into the trust score sigmoid(beta * (edge - lambda_max) / edge). A map with
// (near-)zero variance has no noise content at all and is treated as pure
// structure (lambda_max = 0).
template <typename T>
SpectralSummary spectral_summary(const T* mtil, int m, const TrustConfig& cfg) {
    require_arg(m >= 2, "spectral_summary: m must be >= 2");
    const int64_t n = static_cast<int64_t>(m) * m;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += static_cast<double>(mtil[i]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(mtil[i]) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);

    SpectralSummary out;
    out.mp_edge = 4.0;
    if (var < 1e-12) {
        out.eigenvalues.assign(static_cast<size_t>(m), 0.0);
        out.lambda_max = 0.0;
        out.trust = sigmoid_double(cfg.beta);
        return out;
    }
    const double inv_sd = 1.0 / std::sqrt(var);
    std::vector<double> z(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) z[static_cast<size_t>(i)] = (static_cast<double>(mtil[i]) - mean) * inv_sd;

    std::vector<double> gram(static_cast<size_t>(m) * m, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) {
            double acc = 0.0;
            for (int k = 0; k < m; ++k)
                acc += z[static_cast<size_t>(i) * m + k] * z[static_cast<size_t>(j) * m + k];
            acc /= static_cast<double>(m);
            gram[static_cast<size_t>(i) * m + j] = acc;
            gram[static_cast<size_t>(j) * m + i] = acc;
        }

    out.eigenvalues = jacobi_eigenvalues(std::move(gram), m);
    for (double& e : out.eigenvalues) e = std::max(0.0, e);
    out.lambda_max = out.eigenvalues.front();
    out.trust = sigmoid_double(cfg.beta * (out.mp_edge - out.lambda_max) / out.mp_edge);
    return out;
}

// Trusted threshold adjustment: the Min-p threshold is rescaled by the trust
// score, so structured (low lambda_max excess) maps keep more entries.
inline double adjust_threshold(double base_threshold, double trust) {
    return trust * base_threshold;
}

// Full-eigendecomposition patch filter: keep patch i iff lambda_max < tau.
template <typename T>
std::vector<uint8_t> fed_filter(const std::vector<std::vector<T>>& patch_maps, int map_side, double tau,
                                const TrustConfig& cfg) {
    require_arg(tau > 0.0, "fed_filter: tau must be positive");
    std::vector<uint8_t> keep;
    keep.reserve(patch_maps.size());
    for (const auto& m : patch_maps) {
        require_arg(static_cast<int64_t>(m.size()) == static_cast<int64_t>(map_side) * map_side,
                    "fed_filter: patch size mismatch");
        const auto ds = downsample_map(m.data(), map_side, map_side, cfg.spectral_size);
        const auto summary = spectral_summary(ds.data(), cfg.spectral_size, cfg);
        keep.push_back(summary.lambda_max < tau ? 1 : 0);
    }
    return keep;
}

// Iterative stability adjustment of tau from the eigenvalues collected so far.
// Degenerate inputs (fewer than two values, or vanishing variance) keep the
// previous tau so the filter cannot collapse to zero.
inline double isa_threshold(const std::vector<double>& stable_eigenvalues, double alpha, double previous_tau) {
    require_arg(alpha > 0.0, "isa_threshold: alpha must be positive");
    if (stable_eigenvalues.size() < 2) return previous_tau;
    double mean = 0.0;
    for (double e : stable_eigenvalues) mean += e;
    mean /= static_cast<double>(stable_eigenvalues.size());
    double var = 0.0;
    for (double e : stable_eigenvalues) var += (e - mean) * (e - mean);
    var /= static_cast<double>(stable_eigenvalues.size());
    if (var < 1e-12) return previous_tau;
    return alpha * var;
}

// Running state of the ISA filter over one sequence of patches (one attention
// forward, or one benchmark trial).
struct IsaState {
    double tau;
    std::vector<double> stable_eigenvalues;

    explicit IsaState(const TrustConfig& cfg) : tau(cfg.isa_tau_init) {}

    // Returns whether the patch is kept, and folds its spectrum into the
    // running threshold when it is.
    bool admit(const SpectralSummary& summary, const TrustConfig& cfg) {
        if (summary.lambda_max >= tau) return false;
        stable_eigenvalues.insert(stable_eigenvalues.end(), summary.eigenvalues.begin(), summary.eigenvalues.end());
        tau = isa_threshold(stable_eigenvalues, cfg.isa_alpha, tau);
        return true;
    }
};

} // namespace tsf
