#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "beamvista/error.hpp"
#include "beamvista/nn/layers.hpp"

namespace beamvista::nn {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamConfig cfg;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::int64_t step = 0;
};

// g = dW + wd * W, bias-corrected moments, W -= lr * mhat / (sqrt(vhat) + eps).
template <typename T>
void adam_step(std::vector<ParamView<T>> params, AdamState<T>& st, double lr, double weight_decay) {
    if (st.m.empty()) {
        for (const auto& p : params) {
            st.m.emplace_back(p.value.size(), T(0));
            st.v.emplace_back(p.value.size(), T(0));
        }
    }
    if (st.m.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (st.m[i].size() != params[i].value.size()) throw ShapeError("optimizer state does not match parameter shape");
        for (T g : params[i].grad)
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter tensor " + std::to_string(i) + " at step " +
                                   std::to_string(st.step + 1));
    }
    ++st.step;
    const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, double(st.step));
    const double c2 = 1.0 - std::pow(b2, double(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i].value;
        const auto& dw = params[i].grad;
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const T g = dw[j] + T(weight_decay) * w[j];
            m[j] = T(b1) * m[j] + T(1 - b1) * g;
            v[j] = T(b2) * v[j] + T(1 - b2) * g * g;
            const T mh = m[j] / T(c1);
            const T vh = v[j] / T(c2);
            w[j] -= T(lr) * mh / (std::sqrt(vh) + T(st.cfg.eps));
        }
    }
}

}  // namespace beamvista::nn
