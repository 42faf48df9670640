#pragma once

#include <cstdint>
#include <cstddef>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsf {

// Error raised by malformed external inputs (files, configs, checkpoints).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Error raised when an internal consistency check fails (e.g. FFT residue).
struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require_arg(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Shape of a rank-4 feature tensor, [batch, channel, height, width].
struct Shape4 {
    int64_t b = 0, c = 0, h = 0, w = 0;

    int64_t numel() const { return b * c * h * w; }
    bool operator==(const Shape4& o) const { return b == o.b && c == o.c && h == o.h && w == o.w; }
    bool operator!=(const Shape4& o) const { return !(*this == o); }

    std::string str() const {
        return "[" + std::to_string(b) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + "]";
    }
};

// Dense row-major rank-4 tensor. The scalar type is a template parameter so the
// same operator code can run in float for the model and in double for
// finite-difference oracles; the product pipeline uses TensorT<float>.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape4 s, T fill = T(0)) : shape_(s), data_(static_cast<size_t>(s.numel()), fill) {
        require_arg(s.b >= 1 && s.c >= 1 && s.h >= 1 && s.w >= 1,
                    "tensor shape must be positive, got " + s.str());
    }

    TensorT(Shape4 s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
        require_arg(static_cast<int64_t>(data_.size()) == s.numel(),
                    "tensor data length " + std::to_string(data_.size()) +
                    " does not match shape " + s.str());
    }

    static TensorT zeros(Shape4 s) { return TensorT(s, T(0)); }

    static TensorT scalar(T v) {
        TensorT t(Shape4{1, 1, 1, 1});
        t.data_[0] = v;
        return t;
    }

    const Shape4& shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    T operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    int64_t index(int64_t b, int64_t c, int64_t y, int64_t x) const {
        return ((b * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& at(int64_t b, int64_t c, int64_t y, int64_t x) { return data_[static_cast<size_t>(index(b, c, y, x))]; }
    T at(int64_t b, int64_t c, int64_t y, int64_t x) const { return data_[static_cast<size_t>(index(b, c, y, x))]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out{shape_};
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    Shape4 shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

using Tensor = TensorT<float>;

inline void check_same_shape(const char* op, const Shape4& a, const Shape4& b) {
    require_arg(a == b, std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <typename T>
void fill_uniform(TensorT<T>& t, std::mt19937& rng, T lo, T hi) {
    std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng));
}

template <typename T>
void fill_normal(TensorT<T>& t, std::mt19937& rng, T mean = T(0), T stddev = T(1)) {
    std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng));
}

} // namespace tsf
