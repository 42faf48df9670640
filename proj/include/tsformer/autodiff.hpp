#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace tsf {

using NodeId = int32_t;

// Named trainable tensor with an accumulated gradient of the same shape.
template <typename T>
struct ParameterT {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;

    ParameterT(std::string n, TensorT<T> v)
        : name(std::move(n)), value(std::move(v)), grad(TensorT<T>::zeros(value.shape())) {}

    void zero_grad() { grad.fill(T(0)); }
};

using Parameter = ParameterT<float>;

// Tape of executed operations. Nodes are appended in execution order, which is
// a valid topological order, so the backward pass is a single reverse sweep.
// Gradients of parameter leaves are accumulated into the Parameter object.
template <typename T>
class TapeT {
public:
    using BackwardFn = std::function<void(TapeT<T>&, NodeId)>;

    explicit TapeT(bool record_grad = true) : record_(record_grad) {}

    bool recording() const { return record_; }

    NodeId constant(TensorT<T> t) { return push(std::move(t), nullptr); }

    NodeId param(ParameterT<T>& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return it->second;
        NodeId id = push(p.value, nullptr);
        nodes_[static_cast<size_t>(id)].par = &p;
        param_nodes_.emplace(&p, id);
        return id;
    }

    NodeId push(TensorT<T> value, BackwardFn back) {
        nodes_.push_back(Node{std::move(value), TensorT<T>{}, record_ ? std::move(back) : nullptr, nullptr});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    const TensorT<T>& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    TensorT<T>& grad(NodeId id) { return nodes_[static_cast<size_t>(id)].grad; }
    size_t size() const { return nodes_.size(); }

    // Propagates d(loss)/d(node) to every node before `loss`, then flushes
    // parameter-leaf gradients into their Parameter objects.
    void backward(NodeId loss) {
        require_arg(record_, "backward: tape was created without gradient recording");
        require_arg(loss >= 0 && loss < static_cast<NodeId>(nodes_.size()), "backward: bad node id");
        require_arg(nodes_[static_cast<size_t>(loss)].value.numel() == 1,
                    "backward: loss must be a scalar, got shape " +
                        nodes_[static_cast<size_t>(loss)].value.shape().str());
        for (NodeId id = 0; id <= loss; ++id)
            nodes_[static_cast<size_t>(id)].grad = TensorT<T>::zeros(nodes_[static_cast<size_t>(id)].value.shape());
        nodes_[static_cast<size_t>(loss)].grad[0] = T(1);
        for (NodeId id = loss; id >= 0; --id) {
            auto& n = nodes_[static_cast<size_t>(id)];
            if (n.back) n.back(*this, id);
        }
        for (auto& [p, id] : param_nodes_) {
            if (id > loss) continue;
            ParameterT<T>* par = nodes_[static_cast<size_t>(id)].par;
            const TensorT<T>& g = nodes_[static_cast<size_t>(id)].grad;
            for (int64_t i = 0; i < g.numel(); ++i) par->grad[i] += g[i];
        }
    }

private:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;
        BackwardFn back;
        ParameterT<T>* par;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const ParameterT<T>*, NodeId> param_nodes_;
    bool record_;
};

using Tape = TapeT<float>;

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
NodeId add(TapeT<T>& t, NodeId a, NodeId b) {
    const TensorT<T>& A = t.value(a);
    const TensorT<T>& B = t.value(b);
    check_same_shape("add", A.shape(), B.shape());
    TensorT<T> out = A;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += B[i];
    return t.push(std::move(out), [a, b](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& ga = tp.grad(a);
        TensorT<T>& gb = tp.grad(b);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

template <typename T>
NodeId sub(TapeT<T>& t, NodeId a, NodeId b) {
    const TensorT<T>& A = t.value(a);
    const TensorT<T>& B = t.value(b);
    check_same_shape("sub", A.shape(), B.shape());
    TensorT<T> out = A;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= B[i];
    return t.push(std::move(out), [a, b](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& ga = tp.grad(a);
        TensorT<T>& gb = tp.grad(b);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

// Hadamard product.
template <typename T>
NodeId mul(TapeT<T>& t, NodeId a, NodeId b) {
    const TensorT<T>& A = t.value(a);
    const TensorT<T>& B = t.value(b);
    check_same_shape("mul", A.shape(), B.shape());
    TensorT<T> out = A;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= B[i];
    return t.push(std::move(out), [a, b](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        const TensorT<T>& A2 = tp.value(a);
        const TensorT<T>& B2 = tp.value(b);
        TensorT<T>& ga = tp.grad(a);
        TensorT<T>& gb = tp.grad(b);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i] * B2[i];
            gb[i] += g[i] * A2[i];
        }
    });
}

// y = scale*x + shift with compile-time constants (used for complements etc.)
template <typename T>
NodeId affine(TapeT<T>& t, NodeId x, T scale, T shift) {
    const TensorT<T>& X = t.value(x);
    TensorT<T> out = X;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = scale * out[i] + shift;
    return t.push(std::move(out), [x, scale](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& gx = tp.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += scale * g[i];
    });
}

template <typename T>
NodeId concat_channels(TapeT<T>& t, NodeId a, NodeId b) {
    const TensorT<T>& A = t.value(a);
    const TensorT<T>& B = t.value(b);
    const Shape4 sa = A.shape(), sb = B.shape();
    require_arg(sa.b == sb.b && sa.h == sb.h && sa.w == sb.w,
                "concat_channels: non-channel dims differ, " + sa.str() + " vs " + sb.str());
    TensorT<T> out(Shape4{sa.b, sa.c + sb.c, sa.h, sa.w});
    const int64_t plane = sa.h * sa.w;
    for (int64_t n = 0; n < sa.b; ++n) {
        for (int64_t c = 0; c < sa.c; ++c)
            std::copy_n(A.data() + (n * sa.c + c) * plane, plane, out.data() + ((n * (sa.c + sb.c)) + c) * plane);
        for (int64_t c = 0; c < sb.c; ++c)
            std::copy_n(B.data() + (n * sb.c + c) * plane, plane,
                        out.data() + ((n * (sa.c + sb.c)) + sa.c + c) * plane);
    }
    return t.push(std::move(out), [a, b, sa, sb, plane](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& ga = tp.grad(a);
        TensorT<T>& gb = tp.grad(b);
        const int64_t cc = sa.c + sb.c;
        for (int64_t n = 0; n < sa.b; ++n) {
            for (int64_t c = 0; c < sa.c; ++c) {
                const T* src = g.data() + (n * cc + c) * plane;
                T* dst = ga.data() + (n * sa.c + c) * plane;
                for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
            for (int64_t c = 0; c < sb.c; ++c) {
                const T* src = g.data() + (n * cc + sa.c + c) * plane;
                T* dst = gb.data() + (n * sb.c + c) * plane;
                for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
NodeId slice_channels(TapeT<T>& t, NodeId x, int64_t c0, int64_t count) {
    const TensorT<T>& X = t.value(x);
    const Shape4 s = X.shape();
    require_arg(c0 >= 0 && count >= 1 && c0 + count <= s.c,
                "slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c0 + count) +
                    ") out of " + std::to_string(s.c) + " channels");
    TensorT<T> out(Shape4{s.b, count, s.h, s.w});
    const int64_t plane = s.h * s.w;
    for (int64_t n = 0; n < s.b; ++n)
        for (int64_t c = 0; c < count; ++c)
            std::copy_n(X.data() + (n * s.c + c0 + c) * plane, plane, out.data() + (n * count + c) * plane);
    return t.push(std::move(out), [x, c0, count, s, plane](TapeT<T>& tp, NodeId self) {
        const TensorT<T>& g = tp.grad(self);
        TensorT<T>& gx = tp.grad(x);
        for (int64_t n = 0; n < s.b; ++n)
            for (int64_t c = 0; c < count; ++c) {
                const T* src = g.data() + (n * count + c) * plane;
                T* dst = gx.data() + (n * s.c + c0 + c) * plane;
                for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
    });
}

template <typename T>
NodeId reduce_sum(TapeT<T>& t, NodeId x) {
    const TensorT<T>& X = t.value(x);
    double acc = 0.0;
    for (int64_t i = 0; i < X.numel(); ++i) acc += static_cast<double>(X[i]);
    return t.push(TensorT<T>::scalar(static_cast<T>(acc)), [x](TapeT<T>& tp, NodeId self) {
        const T g = tp.grad(self)[0];
        TensorT<T>& gx = tp.grad(x);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

// Mean absolute difference over all elements.
template <typename T>
NodeId l1_loss(TapeT<T>& t, NodeId pred, NodeId target) {
    const TensorT<T>& P = t.value(pred);
    const TensorT<T>& G = t.value(target);
    check_same_shape("l1_loss", P.shape(), G.shape());
    const int64_t n = P.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(P[i]) - static_cast<double>(G[i]));
    return t.push(TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n))),
                  [pred, target, n](TapeT<T>& tp, NodeId self) {
                      const T g = tp.grad(self)[0];
                      const TensorT<T>& P2 = tp.value(pred);
                      const TensorT<T>& G2 = tp.value(target);
                      TensorT<T>& gp = tp.grad(pred);
                      TensorT<T>& gt = tp.grad(target);
                      const T inv = g / static_cast<T>(n);
                      for (int64_t i = 0; i < n; ++i) {
                          const T d = P2[i] - G2[i];
                          const T s = d > T(0) ? inv : (d < T(0) ? -inv : T(0));
                          gp[i] += s;
                          gt[i] -= s;
                      }
                  });
}

} // namespace tsf
