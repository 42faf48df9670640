#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "flops.hpp"
#include "tensor.hpp"

namespace tsf {

// Peak signal-to-noise ratio in dB; identical images report +infinity.
template <typename T>
double psnr(const TensorT<T>& a, const TensorT<T>& b, double peak = 1.0) {
    check_same_shape("psnr", a.shape(), b.shape());
    require_arg(peak > 0.0, "psnr: peak must be positive");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

// BT.601 luminance of an RGB tensor; single-channel input passes through.
template <typename T>
std::vector<double> luminance_plane(const TensorT<T>& img, int64_t batch) {
    const Shape4 s = img.shape();
    require_arg(s.c == 1 || s.c == 3, "ssim: image must have 1 or 3 channels, got " + std::to_string(s.c));
    std::vector<double> out(static_cast<size_t>(s.h * s.w));
    for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x < s.w; ++x) {
            double v;
            if (s.c == 1) {
                v = img.at(batch, 0, y, x);
            } else {
                v = 0.299 * img.at(batch, 0, y, x) + 0.587 * img.at(batch, 1, y, x) +
                    0.114 * img.at(batch, 2, y, x);
            }
            out[static_cast<size_t>(y * s.w + x)] = v;
        }
    return out;
}

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> win = [] {
        constexpr int n = 11;
        constexpr double sigma = 1.5;
        std::vector<double> w(n * n);
        double sum = 0.0;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double dy = y - (n - 1) / 2.0, dx = x - (n - 1) / 2.0;
                w[static_cast<size_t>(y * n + x)] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                sum += w[static_cast<size_t>(y * n + x)];
            }
        for (double& v : w) v /= sum;
        return w;
    }();
    return win;
}

} // namespace detail

// Single-scale SSIM on the luminance channel: 11x11 Gaussian window
// (sigma 1.5), C1 = (0.01*peak)^2, C2 = (0.03*peak)^2, averaged over all valid
// window positions and over the batch.
template <typename T>
double ssim(const TensorT<T>& a, const TensorT<T>& b, double peak = 1.0) {
    check_same_shape("ssim", a.shape(), b.shape());
    const Shape4 s = a.shape();
    constexpr int win_n = 11;
    require_arg(s.h >= win_n && s.w >= win_n,
                "ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) + " smaller than the " +
                    std::to_string(win_n) + "x" + std::to_string(win_n) + " window");
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const auto& win = detail::ssim_window();

    double total = 0.0;
    int64_t count = 0;
    for (int64_t n = 0; n < s.b; ++n) {
        const auto la = detail::luminance_plane(a, n);
        const auto lb = detail::luminance_plane(b, n);
        for (int64_t y0 = 0; y0 + win_n <= s.h; ++y0)
            for (int64_t x0 = 0; x0 + win_n <= s.w; ++x0) {
                double ma = 0.0, mb = 0.0;
                for (int wy = 0; wy < win_n; ++wy)
                    for (int wx = 0; wx < win_n; ++wx) {
                        const double wgt = win[static_cast<size_t>(wy * win_n + wx)];
                        ma += wgt * la[static_cast<size_t>((y0 + wy) * s.w + x0 + wx)];
                        mb += wgt * lb[static_cast<size_t>((y0 + wy) * s.w + x0 + wx)];
                    }
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (int wy = 0; wy < win_n; ++wy)
                    for (int wx = 0; wx < win_n; ++wx) {
                        const double wgt = win[static_cast<size_t>(wy * win_n + wx)];
                        const double da = la[static_cast<size_t>((y0 + wy) * s.w + x0 + wx)] - ma;
                        const double db = lb[static_cast<size_t>((y0 + wy) * s.w + x0 + wx)] - mb;
                        va += wgt * da * da;
                        vb += wgt * db * db;
                        cov += wgt * da * db;
                    }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

// Reduction percentages of a sparse run against its dense baseline.
struct FlopReport {
    double conv_reduction = 0.0;
    double fft_reduction = 0.0;
    double attention_reduction = 0.0;
    double total_reduction = 0.0;
    double masked_fraction = 0.0;
};

inline FlopReport flops_report(const FlopLedger& sparse, const FlopLedger& dense) {
    auto reduction = [](int64_t s, int64_t d) { return d > 0 ? 1.0 - static_cast<double>(s) / static_cast<double>(d) : 0.0; };
    FlopReport r;
    r.conv_reduction = reduction(sparse.conv_macs, dense.conv_macs);
    r.fft_reduction = reduction(sparse.fft_butterflies, dense.fft_butterflies);
    r.attention_reduction = reduction(sparse.attention_multiplies, dense.attention_multiplies);
    r.total_reduction = reduction(sparse.total(), dense.total());
    const int64_t entries = sparse.attention_multiplies + sparse.attention_skipped;
    r.masked_fraction = entries > 0 ? static_cast<double>(sparse.attention_skipped) / static_cast<double>(entries) : 0.0;
    return r;
}

} // namespace tsf
