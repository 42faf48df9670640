#pragma once

#include <cmath>
#include <vector>

#include "autodiff.hpp"

namespace tsf {

// AdamW with decoupled weight decay. Moments are kept per parameter in the
// order the parameter list is first seen.
template <typename T>
struct OptimizerStateT {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;
    int64_t step_count = 0;
    std::vector<TensorT<T>> m;
    std::vector<TensorT<T>> v;
};

using OptimizerState = OptimizerStateT<float>;

template <typename T>
void adamw_step(std::vector<ParameterT<T>*>& params, OptimizerStateT<T>& st) {
    if (st.m.empty()) {
        for (auto* p : params) {
            st.m.push_back(TensorT<T>::zeros(p->value.shape()));
            st.v.push_back(TensorT<T>::zeros(p->value.shape()));
        }
    }
    require_arg(st.m.size() == params.size(), "adamw_step: optimizer state does not match parameter list");
    st.step_count += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        ParameterT<T>& p = *params[i];
        check_same_shape("adamw_step", p.value.shape(), st.m[i].shape());
        for (int64_t j = 0; j < p.value.numel(); ++j) {
            const double g = static_cast<double>(p.grad[j]);
            const double m = st.beta1 * static_cast<double>(st.m[i][j]) + (1.0 - st.beta1) * g;
            const double v = st.beta2 * static_cast<double>(st.v[i][j]) + (1.0 - st.beta2) * g * g;
            st.m[i][j] = static_cast<T>(m);
            st.v[i][j] = static_cast<T>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            const double w = static_cast<double>(p.value[j]);
            p.value[j] = static_cast<T>(w - st.lr * (mhat / (std::sqrt(vhat) + st.epsilon) + st.weight_decay * w));
        }
    }
}

} // namespace tsf
