#pragma once

#include <algorithm>
#include <cmath>

#include "autodiff.hpp"
#include "flops.hpp"

namespace tsf {

enum class ConvMode { Standard3x3, Pointwise1x1, Depthwise3x3 };

inline const char* conv_mode_name(ConvMode m) {
    switch (m) {
        case ConvMode::Standard3x3: return "standard3x3";
        case ConvMode::Pointwise1x1: return "pointwise1x1";
        default: return "depthwise3x3";
    }
}

namespace detail {

// Validates tensor shapes for a grouped same-padding convolution and returns
// the group count (1 for dense modes, C for depthwise).
template <typename T>
int64_t conv_check(const Shape4& x, const TensorT<T>& w, const TensorT<T>& b, ConvMode mode) {
    const Shape4 ws = w.shape();
    const int64_t k = mode == ConvMode::Pointwise1x1 ? 1 : 3;
    require_arg(ws.h == k && ws.w == k,
                std::string("conv2d(") + conv_mode_name(mode) + "): kernel is " + std::to_string(ws.h) + "x" +
                    std::to_string(ws.w) + ", expected " + std::to_string(k) + "x" + std::to_string(k));
    int64_t groups = 1;
    if (mode == ConvMode::Depthwise3x3) {
        require_arg(ws.c == 1, "conv2d(depthwise3x3): weight in-channel dim must be 1, got " + std::to_string(ws.c));
        require_arg(ws.b == x.c, "conv2d(depthwise3x3): weight channel count " + std::to_string(ws.b) +
                                     " does not match input channels " + std::to_string(x.c));
        groups = x.c;
    } else {
        require_arg(ws.c == x.c, std::string("conv2d(") + conv_mode_name(mode) + "): weight in-channels " +
                                     std::to_string(ws.c) + " do not match input channels " + std::to_string(x.c));
    }
    const Shape4 bs = b.shape();
    require_arg(bs.b == 1 && bs.c == ws.b && bs.h == 1 && bs.w == 1,
                std::string("conv2d(") + conv_mode_name(mode) + "): bias shape " + bs.str() + " must be [1," +
                    std::to_string(ws.b) + ",1,1]");
    return groups;
}

} // namespace detail

// Same-padding 2D convolution in three flavours: dense 3x3, dense 1x1 and
// depthwise 3x3. stride 1 preserves the spatial size; stride 2 halves it
// (rounding up) and is used by the encoder downsamplers.
template <typename T>
NodeId conv2d(TapeT<T>& t, NodeId x, NodeId w, NodeId b, ConvMode mode, int stride = 1,
              FlopLedger* ledger = nullptr) {
    const TensorT<T>& X = t.value(x);
    const TensorT<T>& W = t.value(w);
    const TensorT<T>& B = t.value(b);
    require_arg(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
    const int64_t groups = detail::conv_check(X.shape(), W, B, mode);
    const Shape4 xs = X.shape(), ws = W.shape();
    const int64_t cout = ws.b, k = ws.h;
    const int64_t pad = k / 2;
    const int64_t oh = (xs.h + stride - 1) / stride;
    const int64_t ow = (xs.w + stride - 1) / stride;
    const int64_t cout_g = cout / groups;
    const int64_t cin_g = xs.c / groups;

    TensorT<T> out(Shape4{xs.b, cout, oh, ow});
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
    for (int64_t n = 0; n < xs.b; ++n) {
        for (int64_t oc = 0; oc < cout; ++oc) {
            const int64_t g = oc / cout_g;
            for (int64_t oy = 0; oy < oh; ++oy) {
                for (int64_t ox = 0; ox < ow; ++ox) {
                    T acc = B[oc];
                    for (int64_t ic = 0; ic < cin_g; ++ic) {
                        const int64_t xc = g * cin_g + ic;
                        for (int64_t ky = 0; ky < k; ++ky) {
                            const int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= xs.h) continue;
                            for (int64_t kx = 0; kx < k; ++kx) {
                                const int64_t ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= xs.w) continue;
                                acc += W.at(oc, ic, ky, kx) * X.at(n, xc, iy, ix);
                            }
                        }
                    }
                    out.at(n, oc, oy, ox) = acc;
                }
            }
        }
    }
    if (ledger) ledger->conv_macs += xs.b * cout * oh * ow * cin_g * k * k;

    return t.push(std::move(out), [x, w, b, mode, stride, xs, ws, oh, ow, groups](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& G = tp.grad(self);
        const TensorT<T>& X2 = tp.value(x);
        const TensorT<T>& W2 = tp.value(w);
        TensorT<T>& gx = tp.grad(x);
        TensorT<T>& gw = tp.grad(w);
        TensorT<T>& gb = tp.grad(b);
        const int64_t cout = ws.b, k = ws.h, pad = k / 2;
        const int64_t cout_g = cout / groups;
        const int64_t cin_g = xs.c / groups;

        // input gradient: gather over the output positions each input feeds
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
        for (int64_t n = 0; n < xs.b; ++n) {
            for (int64_t xc = 0; xc < xs.c; ++xc) {
                const int64_t g = xc / cin_g;
                const int64_t ic = xc % cin_g;
                for (int64_t iy = 0; iy < xs.h; ++iy) {
                    for (int64_t ix = 0; ix < xs.w; ++ix) {
                        T acc = T(0);
                        for (int64_t oc = g * cout_g; oc < (g + 1) * cout_g; ++oc) {
                            for (int64_t ky = 0; ky < k; ++ky) {
                                const int64_t oy_num = iy + pad - ky;
                                if (oy_num < 0 || oy_num % stride) continue;
                                const int64_t oy = oy_num / stride;
                                if (oy >= oh) continue;
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    const int64_t ox_num = ix + pad - kx;
                                    if (ox_num < 0 || ox_num % stride) continue;
                                    const int64_t ox = ox_num / stride;
                                    if (ox >= ow) continue;
                                    acc += W2.at(oc, ic, ky, kx) * G.at(n, oc, oy, ox);
                                }
                            }
                        }
                        gx.at(n, xc, iy, ix) += acc;
                    }
                }
            }
        }

        // weight gradient: one thread owns one weight entry
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
        for (int64_t oc = 0; oc < cout; ++oc) {
            for (int64_t ic = 0; ic < ws.c; ++ic) {
                const int64_t g = oc / cout_g;
                const int64_t xc = g * cin_g + ic;
                for (int64_t ky = 0; ky < k; ++ky) {
                    for (int64_t kx = 0; kx < k; ++kx) {
                        T acc = T(0);
                        for (int64_t n = 0; n < xs.b; ++n)
                            for (int64_t oy = 0; oy < oh; ++oy) {
                                const int64_t iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= xs.h) continue;
                                for (int64_t ox = 0; ox < ow; ++ox) {
                                    const int64_t ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= xs.w) continue;
                                    acc += X2.at(n, xc, iy, ix) * G.at(n, oc, oy, ox);
                                }
                            }
                        gw.at(oc, ic, ky, kx) += acc;
                    }
                }
            }
        }

        for (int64_t oc = 0; oc < cout; ++oc) {
            T acc = T(0);
            for (int64_t n = 0; n < xs.b; ++n)
                for (int64_t oy = 0; oy < oh; ++oy)
                    for (int64_t ox = 0; ox < ow; ++ox) acc += G.at(n, oc, oy, ox);
            gb[oc] += acc;
        }
    });
}

// Layer normalization over the channel dimension at each spatial location.
template <typename T>
NodeId layer_norm(TapeT<T>& t, NodeId x, NodeId gamma, NodeId beta, T epsilon = T(1e-6)) {
    const TensorT<T>& X = t.value(x);
    const Shape4 s = X.shape();
    require_arg(epsilon > T(0), "layer_norm: epsilon must be positive");
    const Shape4 gs = t.value(gamma).shape();
    require_arg(gs.b == 1 && gs.c == s.c && gs.h == 1 && gs.w == 1,
                "layer_norm: gamma shape " + gs.str() + " must be [1," + std::to_string(s.c) + ",1,1]");
    check_same_shape("layer_norm(gamma/beta)", gs, t.value(beta).shape());

    const TensorT<T>& Gm = t.value(gamma);
    const TensorT<T>& Bt = t.value(beta);
    TensorT<T> out(s);
    TensorT<T> mean(Shape4{s.b, 1, s.h, s.w});
    TensorT<T> inv_std(Shape4{s.b, 1, s.h, s.w});
    const T cn = static_cast<T>(s.c);
    for (int64_t n = 0; n < s.b; ++n)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t xx = 0; xx < s.w; ++xx) {
                T mu = T(0);
                for (int64_t c = 0; c < s.c; ++c) mu += X.at(n, c, y, xx);
                mu /= cn;
                T var = T(0);
                for (int64_t c = 0; c < s.c; ++c) {
                    const T d = X.at(n, c, y, xx) - mu;
                    var += d * d;
                }
                var /= cn;
                const T inv = T(1) / std::sqrt(var + epsilon);
                mean.at(n, 0, y, xx) = mu;
                inv_std.at(n, 0, y, xx) = inv;
                for (int64_t c = 0; c < s.c; ++c)
                    out.at(n, c, y, xx) = (X.at(n, c, y, xx) - mu) * inv * Gm[c] + Bt[c];
            }

    auto mean_p = std::make_shared<TensorT<T>>(std::move(mean));
    auto inv_p = std::make_shared<TensorT<T>>(std::move(inv_std));
    return t.push(std::move(out), [x, gamma, beta, s, mean_p, inv_p](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& G = tp.grad(self);
        const TensorT<T>& X2 = tp.value(x);
        const TensorT<T>& Gm2 = tp.value(gamma);
        TensorT<T>& gx = tp.grad(x);
        TensorT<T>& gg = tp.grad(gamma);
        TensorT<T>& gb = tp.grad(beta);
        const T cn = static_cast<T>(s.c);
        for (int64_t n = 0; n < s.b; ++n)
            for (int64_t y = 0; y < s.h; ++y)
                for (int64_t xx = 0; xx < s.w; ++xx) {
                    const T mu = mean_p->at(n, 0, y, xx);
                    const T inv = inv_p->at(n, 0, y, xx);
                    T sum_dxh = T(0), sum_dxh_xh = T(0);
                    for (int64_t c = 0; c < s.c; ++c) {
                        const T xh = (X2.at(n, c, y, xx) - mu) * inv;
                        const T dxh = G.at(n, c, y, xx) * Gm2[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        gg[c] += G.at(n, c, y, xx) * xh;
                        gb[c] += G.at(n, c, y, xx);
                    }
                    for (int64_t c = 0; c < s.c; ++c) {
                        const T xh = (X2.at(n, c, y, xx) - mu) * inv;
                        const T dxh = G.at(n, c, y, xx) * Gm2[c];
                        gx.at(n, c, y, xx) += inv * (dxh - sum_dxh / cn - xh * sum_dxh_xh / cn);
                    }
                }
    });
}

template <typename T>
NodeId gelu(TapeT<T>& t, NodeId x) {
    const TensorT<T>& X = t.value(x);
    TensorT<T> out(X.shape());
    for (int64_t i = 0; i < X.numel(); ++i) {
        const double v = static_cast<double>(X[i]);
        out[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))));
    }
    return t.push(std::move(out), [x](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        const TensorT<T>& X2 = tp.value(x);
        TensorT<T>& gx = tp.grad(x);
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double v = static_cast<double>(X2[i]);
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            gx[i] += g[i] * static_cast<T>(cdf + v * pdf);
        }
    });
}

// PReLU with a single learnable slope held in a [1,1,1,1] parameter node.
template <typename T>
NodeId prelu(TapeT<T>& t, NodeId x, NodeId alpha) {
    const TensorT<T>& X = t.value(x);
    require_arg(t.value(alpha).numel() == 1, "prelu: alpha must be a scalar tensor");
    const T a = t.value(alpha)[0];
    TensorT<T> out(X.shape());
    for (int64_t i = 0; i < X.numel(); ++i) out[i] = X[i] >= T(0) ? X[i] : a * X[i];
    return t.push(std::move(out), [x, alpha](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        const TensorT<T>& X2 = tp.value(x);
        const T a2 = tp.value(alpha)[0];
        TensorT<T>& gx = tp.grad(x);
        TensorT<T>& ga = tp.grad(alpha);
        T acc = T(0);
        for (int64_t i = 0; i < g.numel(); ++i) {
            if (X2[i] >= T(0)) {
                gx[i] += g[i];
            } else {
                gx[i] += g[i] * a2;
                acc += g[i] * X2[i];
            }
        }
        ga[0] += acc;
    });
}

template <typename T>
NodeId sigmoid(TapeT<T>& t, NodeId x) {
    const TensorT<T>& X = t.value(x);
    TensorT<T> out(X.shape());
    for (int64_t i = 0; i < X.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-X[i]));
    return t.push(std::move(out), [x](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        const TensorT<T>& Y = tp.value(self);
        TensorT<T>& gx = tp.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * Y[i] * (T(1) - Y[i]);
    });
}

namespace detail {

// Calls fn(base_offset) once per 1D slice taken along `axis` of shape s.
template <typename Fn>
void for_each_axis_slice(const Shape4& s, int axis, Fn&& fn) {
    const int64_t dims[4] = {s.b, s.c, s.h, s.w};
    const int64_t strides[4] = {s.c * s.h * s.w, s.h * s.w, s.w, 1};
    for (int64_t i0 = 0; i0 < (axis == 0 ? 1 : dims[0]); ++i0)
        for (int64_t i1 = 0; i1 < (axis == 1 ? 1 : dims[1]); ++i1)
            for (int64_t i2 = 0; i2 < (axis == 2 ? 1 : dims[2]); ++i2)
                for (int64_t i3 = 0; i3 < (axis == 3 ? 1 : dims[3]); ++i3)
                    fn(i0 * strides[0] + i1 * strides[1] + i2 * strides[2] + i3 * strides[3]);
}

} // namespace detail

// Softmax along one axis of the rank-4 tensor (0=batch .. 3=width).
template <typename T>
NodeId softmax(TapeT<T>& t, NodeId x, int axis) {
    const TensorT<T>& X = t.value(x);
    const Shape4 s = X.shape();
    require_arg(axis >= 0 && axis <= 3, "softmax: axis must be in [0,3], got " + std::to_string(axis));
    const int64_t dims[4] = {s.b, s.c, s.h, s.w};
    const int64_t strides[4] = {s.c * s.h * s.w, s.h * s.w, s.w, 1};
    const int64_t n_axis = dims[axis];
    const int64_t stride = strides[axis];
    TensorT<T> out(s);
    detail::for_each_axis_slice(s, axis, [&](int64_t base) {
        T mx = X[base];
        for (int64_t j = 1; j < n_axis; ++j) mx = std::max(mx, X[base + j * stride]);
        T denom = T(0);
        for (int64_t j = 0; j < n_axis; ++j) denom += std::exp(X[base + j * stride] - mx);
        for (int64_t j = 0; j < n_axis; ++j) out[base + j * stride] = std::exp(X[base + j * stride] - mx) / denom;
    });
    return t.push(std::move(out), [x, s, axis, n_axis, stride](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        const TensorT<T>& Y = tp.value(self);
        TensorT<T>& gx = tp.grad(x);
        detail::for_each_axis_slice(s, axis, [&](int64_t base) {
            T dot = T(0);
            for (int64_t j = 0; j < n_axis; ++j) dot += g[base + j * stride] * Y[base + j * stride];
            for (int64_t j = 0; j < n_axis; ++j)
                gx[base + j * stride] += Y[base + j * stride] * (g[base + j * stride] - dot);
        });
    });
}

namespace detail {

// Corner-aligned bilinear sample positions for one output index.
inline void bilinear_coords(int64_t out_i, int64_t in_n, int64_t out_n, int64_t& i0, int64_t& i1, double& frac) {
    if (out_n == 1 || in_n == 1) {
        i0 = i1 = 0;
        frac = 0.0;
        return;
    }
    const double src = static_cast<double>(out_i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
    i0 = static_cast<int64_t>(src);
    if (i0 >= in_n - 1) i0 = in_n - 2;
    i1 = i0 + 1;
    frac = src - static_cast<double>(i0);
}

} // namespace detail

// Corner-aligned bilinear resize of the spatial dimensions.
template <typename T>
NodeId bilinear_resize(TapeT<T>& t, NodeId x, int64_t out_h, int64_t out_w) {
    const TensorT<T>& X = t.value(x);
    const Shape4 s = X.shape();
    require_arg(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be positive");
    TensorT<T> out(Shape4{s.b, s.c, out_h, out_w});
    for (int64_t oy = 0; oy < out_h; ++oy) {
        int64_t y0, y1;
        double fy;
        detail::bilinear_coords(oy, s.h, out_h, y0, y1, fy);
        for (int64_t ox = 0; ox < out_w; ++ox) {
            int64_t x0, x1;
            double fx;
            detail::bilinear_coords(ox, s.w, out_w, x0, x1, fx);
            for (int64_t n = 0; n < s.b; ++n)
                for (int64_t c = 0; c < s.c; ++c) {
                    const double v = static_cast<double>(X.at(n, c, y0, x0)) * (1 - fy) * (1 - fx) +
                                     static_cast<double>(X.at(n, c, y0, x1)) * (1 - fy) * fx +
                                     static_cast<double>(X.at(n, c, y1, x0)) * fy * (1 - fx) +
                                     static_cast<double>(X.at(n, c, y1, x1)) * fy * fx;
                    out.at(n, c, oy, ox) = static_cast<T>(v);
                }
        }
    }
    return t.push(std::move(out), [x, s, out_h, out_w](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& gx = tp.grad(x);
        for (int64_t oy = 0; oy < out_h; ++oy) {
            int64_t y0, y1;
            double fy;
            detail::bilinear_coords(oy, s.h, out_h, y0, y1, fy);
            for (int64_t ox = 0; ox < out_w; ++ox) {
                int64_t x0, x1;
                double fx;
                detail::bilinear_coords(ox, s.w, out_w, x0, x1, fx);
                for (int64_t n = 0; n < s.b; ++n)
                    for (int64_t c = 0; c < s.c; ++c) {
                        const T gv = g.at(n, c, oy, ox);
                        gx.at(n, c, y0, x0) += gv * static_cast<T>((1 - fy) * (1 - fx));
                        gx.at(n, c, y0, x1) += gv * static_cast<T>((1 - fy) * fx);
                        gx.at(n, c, y1, x0) += gv * static_cast<T>(fy * (1 - fx));
                        gx.at(n, c, y1, x1) += gv * static_cast<T>(fy * fx);
                    }
            }
        }
    });
}

// Plain-tensor resize used by the trust statistics (no tape involved).
template <typename T>
std::vector<T> bilinear_resize_plane(const T* in, int64_t h, int64_t w, int64_t oh, int64_t ow) {
    std::vector<T> out(static_cast<size_t>(oh) * ow);
    for (int64_t oy = 0; oy < oh; ++oy) {
        int64_t y0, y1;
        double fy;
        detail::bilinear_coords(oy, h, oh, y0, y1, fy);
        for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t x0, x1;
            double fx;
            detail::bilinear_coords(ox, w, ow, x0, x1, fx);
            const double v = static_cast<double>(in[y0 * w + x0]) * (1 - fy) * (1 - fx) +
                             static_cast<double>(in[y0 * w + x1]) * (1 - fy) * fx +
                             static_cast<double>(in[y1 * w + x0]) * fy * (1 - fx) +
                             static_cast<double>(in[y1 * w + x1]) * fy * fx;
            out[static_cast<size_t>(oy) * ow + ox] = static_cast<T>(v);
        }
    }
    return out;
}

template <typename T>
NodeId nearest_upsample2x(TapeT<T>& t, NodeId x) {
    const TensorT<T>& X = t.value(x);
    const Shape4 s = X.shape();
    TensorT<T> out(Shape4{s.b, s.c, s.h * 2, s.w * 2});
    for (int64_t n = 0; n < s.b; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < s.h * 2; ++y)
                for (int64_t xx = 0; xx < s.w * 2; ++xx)
                    out.at(n, c, y, xx) = X.at(n, c, y / 2, xx / 2);
    return t.push(std::move(out), [x, s](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& gx = tp.grad(x);
        for (int64_t n = 0; n < s.b; ++n)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t y = 0; y < s.h * 2; ++y)
                    for (int64_t xx = 0; xx < s.w * 2; ++xx)
                        gx.at(n, c, y / 2, xx / 2) += g.at(n, c, y, xx);
    });
}

namespace detail {

// Mirror an out-of-range coordinate back into [0, n) (reflection without edge
// repeat, folding as often as needed).
inline int64_t mirror_index(int64_t i, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    i = i % period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

} // namespace detail

// Reflection padding on the bottom/right edges only (enough to reach the next
// multiple of the downsampling factor).
template <typename T>
NodeId reflect_pad(TapeT<T>& t, NodeId x, int64_t pad_bottom, int64_t pad_right) {
    const TensorT<T>& X = t.value(x);
    const Shape4 s = X.shape();
    require_arg(pad_bottom >= 0 && pad_right >= 0, "reflect_pad: negative padding");
    TensorT<T> out(Shape4{s.b, s.c, s.h + pad_bottom, s.w + pad_right});
    for (int64_t n = 0; n < s.b; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < s.h + pad_bottom; ++y) {
                const int64_t sy = detail::mirror_index(y, s.h);
                for (int64_t xx = 0; xx < s.w + pad_right; ++xx)
                    out.at(n, c, y, xx) = X.at(n, c, sy, detail::mirror_index(xx, s.w));
            }
    return t.push(std::move(out), [x, s, pad_bottom, pad_right](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& gx = tp.grad(x);
        for (int64_t n = 0; n < s.b; ++n)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t y = 0; y < s.h + pad_bottom; ++y) {
                    const int64_t sy = detail::mirror_index(y, s.h);
                    for (int64_t xx = 0; xx < s.w + pad_right; ++xx)
                        gx.at(n, c, sy, detail::mirror_index(xx, s.w)) += g.at(n, c, y, xx);
                }
    });
}

// Top-left anchored spatial crop.
template <typename T>
NodeId crop(TapeT<T>& t, NodeId x, int64_t out_h, int64_t out_w) {
    const TensorT<T>& X = t.value(x);
    const Shape4 s = X.shape();
    require_arg(out_h >= 1 && out_h <= s.h && out_w >= 1 && out_w <= s.w,
                "crop: target " + std::to_string(out_h) + "x" + std::to_string(out_w) + " exceeds input " +
                    std::to_string(s.h) + "x" + std::to_string(s.w));
    if (out_h == s.h && out_w == s.w) return x;
    TensorT<T> out(Shape4{s.b, s.c, out_h, out_w});
    for (int64_t n = 0; n < s.b; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < out_h; ++y)
                std::copy_n(X.data() + X.index(n, c, y, 0), out_w, out.data() + out.index(n, c, y, 0));
    return t.push(std::move(out), [x, s, out_h, out_w](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& gx = tp.grad(x);
        for (int64_t n = 0; n < s.b; ++n)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t y = 0; y < out_h; ++y)
                    for (int64_t xx = 0; xx < out_w; ++xx) gx.at(n, c, y, xx) += g.at(n, c, y, xx);
    });
}

} // namespace tsf
