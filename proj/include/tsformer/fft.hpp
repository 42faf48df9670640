#pragma once

#include <complex>
#include <cstdint>
#include <mutex>
#include <unordered_map>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace tsf {

// Rectangular patch of complex samples, row-major. Dimensions must be powers
// of two (the patchifier guarantees this upstream).
template <typename T>
struct ComplexPatchT {
    int h = 0, w = 0;
    std::vector<std::complex<T>> data;

    ComplexPatchT() = default;
    ComplexPatchT(int h_, int w_) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_) {}

    std::complex<T>& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
    const std::complex<T>& at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
};

using ComplexPatch = ComplexPatchT<float>;

namespace detail {

inline bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

inline int log2_int(int n) {
    int l = 0;
    while ((1 << l) < n) ++l;
    return l;
}

} // namespace detail

// Precomputed bit-reversal order and twiddle factors for a fixed patch size.
// Construction is the only non-trivial cost; transforms reuse the tables, so a
// plan can be shared freely across threads once built.
template <typename T>
class Fft2PlanT {
public:
    Fft2PlanT(int h, int w) : h_(h), w_(w) {
        require_arg(detail::is_pow2(h), "fft2: height " + std::to_string(h) + " is not a power of two");
        require_arg(detail::is_pow2(w), "fft2: width " + std::to_string(w) + " is not a power of two");
        build_tables(h, rev_h_, tw_h_);
        build_tables(w, rev_w_, tw_w_);
    }

    int height() const { return h_; }
    int width() const { return w_; }

    // Unnormalized forward DFT, in place.
    void forward(ComplexPatchT<T>& p) const { transform(p, false); }

    // Inverse DFT with 1/(h*w) normalization, in place.
    void inverse(ComplexPatchT<T>& p) const {
        transform(p, true);
        const T scale = T(1) / (T(h_) * T(w_));
        for (auto& v : p.data) v *= scale;
    }

    // Butterfly count of one full 2D transform (for the FLOP ledger).
    int64_t butterflies_2d() const {
        int64_t rows = static_cast<int64_t>(h_) * (w_ / 2) * detail::log2_int(w_);
        int64_t cols = static_cast<int64_t>(w_) * (h_ / 2) * detail::log2_int(h_);
        return rows + cols;
    }

private:
    static void build_tables(int n, std::vector<int>& rev, std::vector<std::complex<T>>& tw) {
        const int bits = detail::log2_int(n);
        rev.assign(static_cast<size_t>(n), 0);
        for (int i = 0; i < n; ++i) {
            int r = 0;
            for (int b = 0; b < bits; ++b)
                if (i & (1 << b)) r |= 1 << (bits - 1 - b);
            rev[static_cast<size_t>(i)] = r;
        }
        // Stage s uses twiddles exp(-2*pi*i*j / 2^(s+1)), j in [0, 2^s).
        tw.clear();
        tw.reserve(static_cast<size_t>(n));
        for (int len = 2; len <= n; len <<= 1) {
            for (int j = 0; j < len / 2; ++j) {
                const double ang = -2.0 * M_PI * j / len;
                tw.emplace_back(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
            }
        }
    }

    void fft_1d(std::complex<T>* v, int n, const std::vector<int>& rev,
                const std::vector<std::complex<T>>& tw, bool inverse) const {
        for (int i = 0; i < n; ++i) {
            const int r = rev[static_cast<size_t>(i)];
            if (i < r) std::swap(v[i], v[r]);
        }
        size_t tw_off = 0;
        for (int len = 2; len <= n; len <<= 1) {
            const int half = len / 2;
            for (int start = 0; start < n; start += len) {
                for (int j = 0; j < half; ++j) {
                    std::complex<T> w = tw[tw_off + static_cast<size_t>(j)];
                    if (inverse) w = std::conj(w);
                    const std::complex<T> odd = v[start + half + j] * w;
                    const std::complex<T> even = v[start + j];
                    v[start + j] = even + odd;
                    v[start + half + j] = even - odd;
                }
            }
            tw_off += static_cast<size_t>(half);
        }
    }

    void transform(ComplexPatchT<T>& p, bool inverse) const {
        require_arg(p.h == h_ && p.w == w_, "fft2: patch size does not match plan");
        for (int y = 0; y < h_; ++y) fft_1d(p.data.data() + static_cast<size_t>(y) * w_, w_, rev_w_, tw_w_, inverse);
        if (h_ == 1) return;
        std::vector<std::complex<T>> col(static_cast<size_t>(h_));
        for (int x = 0; x < w_; ++x) {
            for (int y = 0; y < h_; ++y) col[static_cast<size_t>(y)] = p.at(y, x);
            fft_1d(col.data(), h_, rev_h_, tw_h_, inverse);
            for (int y = 0; y < h_; ++y) p.at(y, x) = col[static_cast<size_t>(y)];
        }
    }

    int h_, w_;
    std::vector<int> rev_h_, rev_w_;
    std::vector<std::complex<T>> tw_h_, tw_w_;
};

using Fft2Plan = Fft2PlanT<float>;

namespace detail {

// Shared plan cache keyed by (h, w); guarded for concurrent first use.
template <typename T>
const Fft2PlanT<T>& plan_for(int h, int w) {
    static std::mutex mu;
    static std::unordered_map<int64_t, std::unique_ptr<Fft2PlanT<T>>> cache;
    const int64_t key = (static_cast<int64_t>(h) << 32) | static_cast<uint32_t>(w);
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it == cache.end())
        it = cache.emplace(key, std::make_unique<Fft2PlanT<T>>(h, w)).first;
    return *it->second;
}

} // namespace detail

template <typename T>
ComplexPatchT<T> fft2(const ComplexPatchT<T>& p) {
    ComplexPatchT<T> out = p;
    detail::plan_for<T>(p.h, p.w).forward(out);
    return out;
}

template <typename T>
ComplexPatchT<T> fft2_real(const T* values, int h, int w) {
    ComplexPatchT<T> out(h, w);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::complex<T>(values[i], T(0));
    detail::plan_for<T>(h, w).forward(out);
    return out;
}

template <typename T>
ComplexPatchT<T> ifft2(const ComplexPatchT<T>& p) {
    ComplexPatchT<T> out = p;
    detail::plan_for<T>(p.h, p.w).inverse(out);
    return out;
}

// Elementwise complex product, optionally conjugating the second operand.
template <typename T>
ComplexPatchT<T> complex_hadamard(const ComplexPatchT<T>& a, const ComplexPatchT<T>& b, bool conjugate_b) {
    require_arg(a.h == b.h && a.w == b.w,
                "complex_hadamard: shape mismatch " + std::to_string(a.h) + "x" + std::to_string(a.w) +
                " vs " + std::to_string(b.h) + "x" + std::to_string(b.w));
    ComplexPatchT<T> out(a.h, a.w);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a.data[i] * (conjugate_b ? std::conj(b.data[i]) : b.data[i]);
    return out;
}

} // namespace tsf
