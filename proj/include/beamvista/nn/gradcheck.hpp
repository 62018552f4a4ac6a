#pragma once

// Central finite-difference check of analytic gradients for a layer or a
// whole network. The scalar probed is sum(r * f(x)) for a fixed random r.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "beamvista/nn/layers.hpp"
#include "beamvista/rng.hpp"

namespace beamvista::nn {

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t checked = 0;
    std::size_t kinks = 0;  // skipped, a ReLU or max-pool switch inside the step
    // location of the worst element; tensor -1 is the input
    int worst_tensor = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;

    void record(int tensor, std::size_t index, double analytic, double numeric, double err) {
        ++checked;
        if (err <= max_rel_error) return;
        max_rel_error = err;
        worst_tensor = tensor;
        worst_index = index;
        worst_analytic = analytic;
        worst_numeric = numeric;
    }
};

struct GradCheckOptions {
    double step = 1e-5;
    double floor = 1e-6;  // denominator floor for near-zero gradients
    bool check_input = true;
    std::size_t max_per_tensor = 0;  // 0 = every element
    bool skip_kinks = true;
};

namespace detail {

template <typename M>
std::vector<ParamView<double>> param_list(M& m) {
    if constexpr (requires { m.params().size(); }) {
        return m.params();
    } else {
        std::vector<ParamView<double>> out;
        m.params(out);
        return out;
    }
}

// Every layer here is piecewise linear in any single weight or input
// element, so off a kink forward and backward differences agree to rounding.
inline bool is_kink(double fp, double f0, double fm, double h) {
    const double up = (fp - f0) / h, down = (f0 - fm) / h;
    return std::abs(up - down) > 1e-6 * std::max({1.0, std::abs(up), std::abs(down)});
}

inline double rel_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Element positions to probe: all of them, or an evenly seeded sample.
inline std::vector<std::size_t> probe_positions(std::size_t n, std::size_t limit, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (limit == 0 || limit >= n) return idx;
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(limit);
    return idx;
}

}  // namespace detail

template <typename M>
GradCheckResult check_gradients(M& m, Tensor<double> x, std::uint64_t seed, const GradCheckOptions& opt = {}) {
    Rng rng(seed);
    const Tensor<double> y0 = m.forward(x, true);
    Tensor<double> r(y0.shape);
    for (auto& v : r.data) v = rng.uniform(-1.0, 1.0);

    auto params = detail::param_list(m);
    for (auto& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    const Tensor<double> dx = m.backward(r);
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) analytic.emplace_back(p.grad.begin(), p.grad.end());
    m.clear_cache();

    auto objective = [&](const Tensor<double>& in) {
        const Tensor<double> y = m.forward(in, false);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += r.data[i] * y.data[i];
        return s;
    };
    const double h = opt.step;
    const double f0 = objective(x);
    GradCheckResult res;

    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& w = params[t].value;
        for (std::size_t j : detail::probe_positions(w.size(), opt.max_per_tensor, rng)) {
            const double saved = w[j];
            w[j] = saved + h;
            const double fp = objective(x);
            w[j] = saved - h;
            const double fm = objective(x);
            w[j] = saved;
            if (opt.skip_kinks && detail::is_kink(fp, f0, fm, h)) {
                ++res.kinks;
                continue;
            }
            const double num = (fp - fm) / (2 * h);
            res.record(static_cast<int>(t), j, analytic[t][j], num, detail::rel_error(analytic[t][j], num, opt.floor));
        }
    }
    if (opt.check_input) {
        for (std::size_t j : detail::probe_positions(x.size(), opt.max_per_tensor, rng)) {
            const double saved = x.data[j];
            x.data[j] = saved + h;
            const double fp = objective(x);
            x.data[j] = saved - h;
            const double fm = objective(x);
            x.data[j] = saved;
            if (opt.skip_kinks && detail::is_kink(fp, f0, fm, h)) {
                ++res.kinks;
                continue;
            }
            const double num = (fp - fm) / (2 * h);
            res.record(-1, j, dx.data[j], num, detail::rel_error(dx.data[j], num, opt.floor));
        }
    }
    return res;
}

}  // namespace beamvista::nn
