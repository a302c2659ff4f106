#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bvod/autodiff.hpp"
#include "bvod/error.hpp"
#include "bvod/tensor.hpp"

namespace bvod {

/// Adam optimizer state: step counter plus first and second moment
/// accumulators, one pair per parameter, in parameter order.
struct AdamState {
    std::uint64_t step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

inline AdamState make_adam(const std::vector<NodePtr>& params, double learning_rate,
                           double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8) {
    AdamState st;
    st.learning_rate = learning_rate;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.epsilon = epsilon;
    for (const NodePtr& p : params) {
        st.m.emplace_back(p->value.shape);
        st.v.emplace_back(p->value.shape);
    }
    return st;
}

/// One Adam update with bias correction. Reads each parameter node's grad
/// (filled by backward) and updates its value in place.
inline void adam_step(AdamState& st, const std::vector<NodePtr>& params) {
    if (params.size() != st.m.size())
        throw Error("adam_step: state holds " + std::to_string(st.m.size()) +
                    " moment pairs for " + std::to_string(params.size()) + " parameters");
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Node& p = *params[pi];
        if (p.grad.shape != p.value.shape)
            throw Error("adam_step: gradient shape " + p.grad.shape_str() + " for parameter " +
                        (p.name.empty() ? std::to_string(pi) : p.name) + " of shape " +
                        p.value.shape_str());
        Tensor& m = st.m[pi];
        Tensor& v = st.v[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad.data[i];
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter " +
                                   (p.name.empty() ? "#" + std::to_string(pi) : p.name));
            m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * g;
            v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * g * g;
            const double mhat = m.data[i] / c1;
            const double vhat = v.data[i] / c2;
            p.value.data[i] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.epsilon);
        }
    }
}

}  // namespace bvod
