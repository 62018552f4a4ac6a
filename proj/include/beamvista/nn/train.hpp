#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "beamvista/dataset.hpp"
#include "beamvista/error.hpp"
#include "beamvista/nn/adam.hpp"
#include "beamvista/nn/loss.hpp"
#include "beamvista/nn/network.hpp"
#include "beamvista/rng.hpp"

namespace beamvista::nn {

struct TrainConfig {
    int batch_size = 128;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    std::vector<int> lr_decay_epochs{10, 20};
    double lr_factor = 0.1;
    int epochs = 30;
    std::uint64_t seed = 0;
    int threads = 1;
    AdamConfig adam{};

    void validate() const {
        if (batch_size < 1) throw InputDomainError("batch_size must be positive");
        if (!(learning_rate > 0)) throw InputDomainError("learning_rate must be positive");
        if (weight_decay < 0) throw InputDomainError("weight_decay must be non-negative");
        if (!(lr_factor > 0)) throw InputDomainError("lr_factor must be positive");
        if (epochs < 0) throw InputDomainError("epochs must be non-negative");
        if (threads < 1) throw InputDomainError("threads must be at least 1");
        for (int e : lr_decay_epochs)
            if (e <= 0 || e >= epochs) throw InputDomainError("lr decay epochs must lie in (0, epochs)");
        if (!std::is_sorted(lr_decay_epochs.begin(), lr_decay_epochs.end()))
            throw InputDomainError("lr decay epochs must be sorted");
    }
};

inline double lr_at(int epoch, const TrainConfig& cfg) {
    double lr = cfg.learning_rate;
    for (int e : cfg.lr_decay_epochs)
        if (epoch >= e) lr *= cfg.lr_factor;
    return lr;
}

// Per-channel statistics on [0, 1]-scaled pixels.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool empty() const { return mean.empty(); }
};

inline Normalization compute_normalization(const dataset::Dataset& ds, std::span<const std::size_t> indices) {
    const int C = ds.manifest.channels;
    const std::size_t hw = std::size_t(ds.manifest.width) * ds.manifest.height;
    if (indices.empty()) throw DataError("cannot compute normalization over an empty set");
    Normalization n{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
    std::vector<double> sq(C, 0.0);
    for (std::size_t i : indices) {
        const auto& px = ds.samples.at(i).pixels;
        for (int c = 0; c < C; ++c) {
            double s = 0, s2 = 0;
            for (std::size_t j = 0; j < hw; ++j) {
                const double v = px[c * hw + j] / 255.0;
                s += v;
                s2 += v * v;
            }
            n.mean[c] += s;
            sq[c] += s2;
        }
    }
    const double count = double(indices.size()) * double(hw);
    for (int c = 0; c < C; ++c) {
        n.mean[c] /= count;
        const double var = std::max(0.0, sq[c] / count - n.mean[c] * n.mean[c]);
        n.stddev[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return n;
}

template <typename T>
Tensor<T> gather_batch(const dataset::Dataset& ds, std::span<const std::size_t> indices, const Normalization& norm) {
    const int C = ds.manifest.channels, H = ds.manifest.height, W = ds.manifest.width;
    const std::size_t hw = std::size_t(H) * W;
    Tensor<T> x({static_cast<int>(indices.size()), C, H, W});
    std::vector<T> lut(256 * C);
    for (int c = 0; c < C; ++c)
        for (int v = 0; v < 256; ++v) {
            const double m = norm.empty() ? 0.0 : norm.mean[c];
            const double s = norm.empty() ? 1.0 : norm.stddev[c];
            lut[c * 256 + v] = static_cast<T>((v / 255.0 - m) / s);
        }
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& px = ds.samples.at(indices[b]).pixels;
        if (px.size() != C * hw) throw ShapeError("sample pixel count does not match the manifest");
        T* dst = x.ptr() + b * C * hw;
        for (int c = 0; c < C; ++c)
            for (std::size_t j = 0; j < hw; ++j) dst[c * hw + j] = lut[c * 256 + px[c * hw + j]];
    }
    return x;
}

inline std::vector<int> gather_labels(const dataset::Dataset& ds, std::span<const std::size_t> indices) {
    std::vector<int> y(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) y[i] = ds.samples.at(indices[i]).label;
    return y;
}

// Indices of the k largest logits, descending; ties go to the lower index.
template <typename T>
std::vector<int> topk_row(const T* logits, int q, int k) {
    if (k < 1 || k > q) throw InputDomainError("k must lie in [1, Q]");
    std::vector<int> idx(q);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
    });
    idx.resize(k);
    return idx;
}

// Ranked predictions (k per sample) for the given samples.
template <typename T>
std::vector<std::vector<int>> predict_topk(Network<T>& net, const dataset::Dataset& ds,
                                           std::span<const std::size_t> indices, const Normalization& norm, int k,
                                           int batch = 256) {
    const int q = net.num_classes();
    if (k < 1 || k > q) throw InputDomainError("k must lie in [1, Q]");
    std::vector<std::vector<int>> out;
    out.reserve(indices.size());
    for (std::size_t s = 0; s < indices.size(); s += batch) {
        const auto chunk = indices.subspan(s, std::min<std::size_t>(batch, indices.size() - s));
        const Tensor<T> logits = net.forward(gather_batch<T>(ds, chunk, norm), false);
        for (std::size_t b = 0; b < chunk.size(); ++b) out.push_back(topk_row(logits.ptr() + b * q, q, k));
    }
    return out;
}

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0;
    double train_loss = 0;
    std::optional<double> val_top1, val_top2, val_top3;
    double seconds = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;
};

namespace detail {

// Sums per-worker gradients pairwise with a fixed tree shape.
template <typename T>
void tree_reduce(std::vector<std::vector<std::vector<T>>>& grads) {
    for (std::size_t stride = 1; stride < grads.size(); stride *= 2)
        for (std::size_t i = 0; i + stride < grads.size(); i += 2 * stride)
            for (std::size_t p = 0; p < grads[i].size(); ++p)
                for (std::size_t j = 0; j < grads[i][p].size(); ++j) grads[i][p][j] += grads[i + stride][p][j];
}

template <typename T>
std::vector<std::vector<T>> collect_grads(Network<T>& net) {
    std::vector<std::vector<T>> g;
    for (auto& p : net.params()) g.emplace_back(p.grad.begin(), p.grad.end());
    return g;
}

// Forward + backward on one batch; leaves the gradient in net and returns the loss.
template <typename T>
double batch_gradient(Network<T>& net, std::vector<Network<T>>& replicas, const Tensor<T>& x,
                      const std::vector<int>& y) {
    const int B = x.dim(0);
    const int workers = std::min<int>(static_cast<int>(replicas.size()) + 1, B);
    if (workers <= 1) {
        net.zero_grad();
        auto r = cross_entropy(net.forward(x, true), std::span<const int>(y));
        net.backward(r.grad);
        net.clear_cache();
        return double(r.loss);
    }
    const std::size_t per = x.stride0();
    std::vector<std::vector<std::vector<T>>> grads(workers);
    std::vector<double> losses(workers, 0.0);
    std::vector<std::exception_ptr> errors(workers);
    auto run = [&](int w) {
        try {
            Network<T>& n = w == 0 ? net : replicas[w - 1];
            const int lo = B * w / workers, hi = B * (w + 1) / workers;
            Tensor<T> xs({hi - lo, x.dim(1), x.dim(2), x.dim(3)});
            std::copy(x.ptr() + lo * per, x.ptr() + hi * per, xs.ptr());
            n.zero_grad();
            auto r = cross_entropy(n.forward(xs, true), std::span<const int>(y.data() + lo, hi - lo));
            const T scale = T(hi - lo) / T(B);
            for (auto& g : r.grad.data) g *= scale;
            n.backward(r.grad);
            n.clear_cache();
            grads[w] = collect_grads(n);
            losses[w] = double(r.loss) * (hi - lo) / B;
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    const auto theta = net.flat_params();
    for (int w = 1; w < workers; ++w) replicas[w - 1].set_flat_params(theta);
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back([&run, w] { run(w); });
    run(0);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    tree_reduce(grads);
    auto params = net.params();
    for (std::size_t p = 0; p < params.size(); ++p)
        std::copy(grads[0][p].begin(), grads[0][p].end(), params[p].grad.begin());
    double loss = 0;
    for (double l : losses) loss += l;
    return loss;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains in place and leaves the parameters of the best-val-top-1 epoch in
// net (the last epoch when there is no validation set).
template <typename T>
TrainResult train(Network<T>& net, const dataset::Dataset& ds, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& cfg, const Normalization& norm,
                  const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_idx.empty()) throw DataError("training set is empty");
    const int q = net.num_classes();
    for (auto span : {train_idx, val_idx})
        for (std::size_t i : span)
            if (ds.samples.at(i).label >= q) throw LabelError("dataset label exceeds the network's output width");

    std::vector<Network<T>> replicas;
    for (int w = 1; w < cfg.threads; ++w) replicas.push_back(net);

    AdamState<T> adam{cfg.adam, {}, {}, 0};
    TrainResult result;
    std::vector<T> best_params;
    double best_top1 = -1;
    std::vector<std::size_t> order(train_idx.begin(), train_idx.end());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, cfg);
        order.assign(train_idx.begin(), train_idx.end());
        Rng rng(derive_seed(cfg.seed, {0x7472u, std::uint64_t(epoch)}));
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0;
        for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
            const auto chunk =
                std::span<const std::size_t>(order).subspan(s, std::min<std::size_t>(cfg.batch_size, order.size() - s));
            const Tensor<T> x = gather_batch<T>(ds, chunk, norm);
            const auto y = gather_labels(ds, chunk);
            const double loss = detail::batch_gradient(net, replicas, x, y);
            if (!std::isfinite(loss)) throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
            loss_sum += loss * chunk.size();
            adam_step(net.params(), adam, lr, cfg.weight_decay);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = lr;
        rec.train_loss = loss_sum / order.size();
        if (!val_idx.empty()) {
            const auto ranked = predict_topk(net, ds, val_idx, norm, std::min(3, q));
            std::array<std::size_t, 3> hits{};
            for (std::size_t i = 0; i < ranked.size(); ++i) {
                const int y = ds.samples[val_idx[i]].label;
                for (std::size_t k = 0; k < ranked[i].size(); ++k)
                    if (ranked[i][k] == y) {
                        for (std::size_t j = k; j < 3; ++j) ++hits[j];
                        break;
                    }
            }
            const double n = double(val_idx.size());
            rec.val_top1 = hits[0] / n;
            rec.val_top2 = hits[1] / n;
            rec.val_top3 = hits[2] / n;
            if (*rec.val_top1 > best_top1) {
                best_top1 = *rec.val_top1;
                best_params = net.flat_params();
                result.best_epoch = epoch;
            }
        } else {
            result.best_epoch = epoch;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    if (!best_params.empty()) net.set_flat_params(best_params);
    return result;
}

}  // namespace beamvista::nn
