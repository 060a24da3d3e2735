// Adam with the usual constants: beta1 0.9, beta2 0.999, eps 1e-8,
// bias-corrected moments.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rnnkit/tensor.hpp"

namespace rnnkit {

template <typename S>
struct AdamState {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    long step_count = 0;

    static AdamState init(const std::vector<Tensor<S>>& params) {
        AdamState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const Tensor<S>& p : params) {
            st.m.emplace_back(p.size(), S(0));
            st.v.emplace_back(p.size(), S(0));
        }
        return st;
    }
};

template <typename S>
void adam_step(const std::vector<Tensor<S>>& params, AdamState<S>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != state.m.size())
        throw std::invalid_argument("adam_step: state was initialized for a different parameter list");
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step_count));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto theta = params[k].data();
        auto g = params[k].grad();
        if (state.m[k].size() != theta.size())
            throw std::invalid_argument("adam_step: parameter " + std::to_string(k) + " changed size");
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            if (!std::isfinite(gi))
                throw std::runtime_error("adam_step: non-finite gradient in parameter " +
                                         std::to_string(k) + " at element " + std::to_string(i));
            m[i] = static_cast<S>(beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi);
            v[i] = static_cast<S>(beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi);
            const double m_hat = static_cast<double>(m[i]) / bc1;
            const double v_hat = static_cast<double>(v[i]) / bc2;
            theta[i] = static_cast<S>(static_cast<double>(theta[i]) - lr * m_hat / (std::sqrt(v_hat) + eps));
        }
    }
}

}  // namespace rnnkit
