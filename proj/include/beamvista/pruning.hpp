#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <variant>
#include <vector>

#include "beamvista/error.hpp"
#include "beamvista/nn/network.hpp"
#include "beamvista/nn/profile.hpp"
#include "beamvista/nn/train.hpp"
#include "beamvista/rng.hpp"

namespace beamvista::pruning {

using nn::Conv2d;
using nn::Network;

// Which convolution inside layer `layer`: 0 = plain Conv2d, 1 = residual
// conv_a, 2 = residual conv_b.
struct ConvRef {
    int layer = 0;
    int sub = 0;
    bool operator==(const ConvRef&) const = default;
};

// Block-internal: only residual conv_a layers and plain convs whose output
// never reaches a skip connection are prunable. Coupled: additionally, a stem
// conv and the conv_b outputs it is summed with are pruned as one group.
enum class Policy { block_internal, coupled };

inline Policy parse_policy(const std::string& s) {
    if (s == "block_internal") return Policy::block_internal;
    if (s == "coupled") return Policy::coupled;
    throw ConfigError("unknown pruning policy '" + s + "'");
}

inline const char* to_string(Policy p) { return p == Policy::coupled ? "coupled" : "block_internal"; }

// Convolutions whose output channels share one index space.
struct ChannelGroup {
    int channels = 0;
    std::vector<ConvRef> producers;
    std::vector<ConvRef> consumers;
    int fc_layer = -1;  // consuming fully connected layer, if any
    int fc_spatial = 0; // FC input features per channel
    bool residual = false;
    bool fixed = false;  // network input or output

    bool prunable(Policy p) const {
        if (fixed || producers.empty()) return false;
        return p == Policy::coupled || !residual;
    }
};

struct FilterScore {
    int layer = 0;
    int sub = 0;
    int filter = 0;
    double score = 0;
};

struct PruneConfig {
    double ratio = 0.5;
    int finetune_epochs = 10;
    double finetune_lr = 1e-3;
    std::uint64_t seed = 0;
    Policy policy = Policy::coupled;

    void validate() const {
        if (!(ratio >= 0 && ratio < 1)) throw ConfigError("prune ratio must lie in [0, 1)");
        if (finetune_epochs < 0) throw InputDomainError("finetune_epochs must be non-negative");
        if (!(finetune_lr > 0)) throw InputDomainError("finetune_lr must be positive");
    }
};

template <typename T>
Conv2d<T>& conv_at(Network<T>& net, ConvRef r) {
    auto& l = net.layers.at(r.layer);
    if (r.sub == 0) {
        if (auto* c = std::get_if<Conv2d<T>>(&l)) return *c;
    } else if (auto* b = std::get_if<nn::ResidualBlock<T>>(&l)) {
        if (r.sub == 1) return b->conv_a;
        if (r.sub == 2) return b->conv_b;
    }
    throw StructuralError("layer " + std::to_string(r.layer) + " has no convolution " + std::to_string(r.sub));
}

template <typename T>
const Conv2d<T>& conv_at(const Network<T>& net, ConvRef r) {
    return conv_at(const_cast<Network<T>&>(net), r);
}

// Traces channel flow through the layer stack.
template <typename T>
std::vector<ChannelGroup> channel_groups(const Network<T>& net) {
    net.output_shape();
    std::vector<ChannelGroup> groups(1);
    groups[0].channels = net.input_shape[0];
    groups[0].fixed = true;
    int cur = 0;
    auto open = [&](ConvRef producer, int channels) {
        ChannelGroup g;
        g.channels = channels;
        g.producers.push_back(producer);
        groups.push_back(g);
        return static_cast<int>(groups.size()) - 1;
    };
    for (int i = 0; i < static_cast<int>(net.layers.size()); ++i) {
        std::visit(
            [&](const auto& m) {
                using L = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<L, Conv2d<T>>) {
                    groups[cur].consumers.push_back({i, 0});
                    cur = open({i, 0}, m.out_channels);
                } else if constexpr (std::is_same_v<L, nn::ResidualBlock<T>>) {
                    groups[cur].consumers.push_back({i, 1});
                    const int inner = open({i, 1}, m.conv_a.out_channels);
                    groups[inner].consumers.push_back({i, 2});
                    groups[cur].producers.push_back({i, 2});
                    groups[cur].residual = true;
                } else if constexpr (std::is_same_v<L, nn::FullyConnected<T>>) {
                    groups[cur].fc_layer = i;
                    groups[cur].fc_spatial = m.in_features / groups[cur].channels;
                    ChannelGroup out;
                    out.channels = m.out_features;
                    out.fixed = true;
                    groups.push_back(out);
                    cur = static_cast<int>(groups.size()) - 1;
                }
            },
            net.layers[i]);
    }
    return groups;
}

// l1 norm of every output filter of every convolution (bias excluded).
template <typename T>
std::vector<FilterScore> score_filters(const Network<T>& net) {
    std::vector<FilterScore> out;
    for (const auto& g : channel_groups(net))
        for (const auto& p : g.producers) {
            const auto& c = conv_at(net, p);
            for (int f = 0; f < c.out_channels; ++f) out.push_back({p.layer, p.sub, f, double(c.filter_l1(f))});
        }
    std::sort(out.begin(), out.end(), [](const FilterScore& a, const FilterScore& b) {
        return std::tie(a.layer, a.sub, a.filter) < std::tie(b.layer, b.sub, b.filter);
    });
    return out;
}

template <typename T>
std::vector<double> group_scores(const Network<T>& net, const ChannelGroup& g) {
    std::vector<double> s(g.channels, 0.0);
    for (const auto& p : g.producers) {
        const auto& c = conv_at(net, p);
        for (int f = 0; f < g.channels; ++f) s[f] += double(c.filter_l1(f));
    }
    return s;
}

namespace detail {

template <typename T>
void keep_outputs(Conv2d<T>& c, const std::vector<int>& keep) {
    const std::size_t n = std::size_t(c.patch_size());
    std::vector<T> w;
    std::vector<T> b;
    for (int f : keep) {
        w.insert(w.end(), c.weight.begin() + f * n, c.weight.begin() + (f + 1) * n);
        if (c.has_bias) b.push_back(c.bias[f]);
    }
    c.out_channels = static_cast<int>(keep.size());
    c.weight = std::move(w);
    c.bias = std::move(b);
    c.grad_weight.assign(c.weight.size(), T(0));
    c.grad_bias.assign(c.bias.size(), T(0));
    c.clear_cache();
}

template <typename T>
void keep_inputs(Conv2d<T>& c, const std::vector<int>& keep) {
    const std::size_t kk = std::size_t(c.kernel) * c.kernel;
    std::vector<T> w;
    for (int f = 0; f < c.out_channels; ++f)
        for (int ch : keep) {
            const auto src = c.weight.begin() + (std::size_t(f) * c.in_channels + ch) * kk;
            w.insert(w.end(), src, src + kk);
        }
    c.in_channels = static_cast<int>(keep.size());
    c.weight = std::move(w);
    c.grad_weight.assign(c.weight.size(), T(0));
    c.clear_cache();
}

template <typename T>
void keep_fc_inputs(nn::FullyConnected<T>& fc, const std::vector<int>& keep, int spatial) {
    std::vector<T> w;
    const int in = static_cast<int>(keep.size()) * spatial;
    w.reserve(std::size_t(fc.out_features) * in);
    for (int o = 0; o < fc.out_features; ++o)
        for (int ch : keep) {
            const auto src = fc.weight.begin() + std::size_t(o) * fc.in_features + std::size_t(ch) * spatial;
            w.insert(w.end(), src, src + spatial);
        }
    fc.in_features = in;
    fc.weight = std::move(w);
    fc.grad_weight.assign(fc.weight.size(), T(0));
    fc.clear_cache();
}

template <typename T>
void apply(Network<T>& net, const ChannelGroup& g, const std::vector<int>& keep) {
    for (const auto& p : g.producers) keep_outputs(conv_at(net, p), keep);
    for (const auto& c : g.consumers) keep_inputs(conv_at(net, c), keep);
    if (g.fc_layer >= 0) keep_fc_inputs(std::get<nn::FullyConnected<T>>(net.layers[g.fc_layer]), keep, g.fc_spatial);
}

inline std::vector<int> complement(int n, const std::vector<int>& removed) {
    std::vector<int> keep;
    for (int i = 0; i < n; ++i)
        if (std::find(removed.begin(), removed.end(), i) == removed.end()) keep.push_back(i);
    return keep;
}

}  // namespace detail

// Removes the given output filters of one convolution together with every
// channel slice tied to them.
template <typename T>
Network<T> remove_filters(const Network<T>& net, ConvRef conv, std::vector<int> filters,
                          Policy policy = Policy::coupled) {
    const auto groups = channel_groups(net);
    for (const auto& g : groups) {
        if (std::find(g.producers.begin(), g.producers.end(), conv) == g.producers.end()) continue;
        if (!g.prunable(policy))
            throw StructuralError("convolution at layer " + std::to_string(conv.layer) +
                                  " is shape-constrained under the " + to_string(policy) + " policy");
        std::sort(filters.begin(), filters.end());
        filters.erase(std::unique(filters.begin(), filters.end()), filters.end());
        for (int f : filters)
            if (f < 0 || f >= g.channels) throw InputDomainError("filter index out of range");
        if (static_cast<int>(filters.size()) >= g.channels) throw ConfigError("pruning would remove every filter");
        Network<T> out = net;
        detail::apply(out, g, detail::complement(g.channels, filters));
        out.output_shape();
        return out;
    }
    throw StructuralError("no convolution at layer " + std::to_string(conv.layer));
}

// Removes floor(r * F) lowest-scoring filters from every prunable group;
// ties prune the lower index first.
template <typename T>
Network<T> prune(const Network<T>& net, const PruneConfig& cfg) {
    cfg.validate();
    Network<T> out = net;
    out.clear_cache();
    const auto groups = channel_groups(net);
    for (const auto& g : groups) {
        if (!g.prunable(cfg.policy)) continue;
        const int remove = static_cast<int>(std::floor(cfg.ratio * g.channels + 1e-9));
        if (g.channels - remove < 1) throw ConfigError("prune ratio leaves no filters in a layer");
        if (remove == 0) continue;
        const auto score = group_scores(net, g);
        std::vector<int> order(g.channels);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] < score[b]; });
        std::vector<int> keep(order.begin() + remove, order.end());
        std::sort(keep.begin(), keep.end());
        detail::apply(out, g, keep);
    }
    out.output_shape();
    return out;
}

// Constant-rate retraining of a pruned network; epochs = 0 is a no-op.
template <typename T>
nn::TrainResult finetune(Network<T>& net, const dataset::Dataset& ds, std::span<const std::size_t> train_idx,
                         std::span<const std::size_t> val_idx, const PruneConfig& cfg, nn::TrainConfig base,
                         const nn::Normalization& norm, const nn::EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (cfg.finetune_epochs == 0) return {};
    base.epochs = cfg.finetune_epochs;
    base.learning_rate = cfg.finetune_lr;
    base.lr_decay_epochs.clear();
    base.seed = derive_seed(cfg.seed, {0x6674u});
    return nn::train(net, ds, train_idx, val_idx, base, norm, on_epoch);
}

struct LatencyRow {
    int batch_size = 0;
    double median_ms_per_image = 0;
    int trials = 0;
};

struct BenchReport {
    std::uint64_t flops = 0;
    std::uint64_t params = 0;
    std::vector<LatencyRow> rows;

    nlohmann::json to_json() const {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& row : rows)
            r.push_back({{"batch_size", row.batch_size},
                         {"median_ms_per_image", row.median_ms_per_image},
                         {"trials", row.trials}});
        return {{"flops", flops}, {"params", params}, {"latency", r}};
    }
};

// Median per-image forward latency after 5 warm-up passes.
template <typename T>
BenchReport benchmark_latency(Network<T>& net, const std::vector<int>& batch_sizes, int trials,
                              std::uint64_t seed = 1) {
    if (trials < 30) throw InputDomainError("benchmark needs at least 30 trials");
    BenchReport rep{nn::count_flops(net), nn::count_params(net), {}};
    Rng rng(seed);
    for (int b : batch_sizes) {
        if (b < 1) throw InputDomainError("batch sizes must be positive");
        nn::Tensor<T> x({b, net.input_shape[0], net.input_shape[1], net.input_shape[2]});
        for (auto& v : x.data) v = static_cast<T>(rng.normal());
        for (int i = 0; i < 5; ++i) net.forward(x, false);
        std::vector<double> ms(trials);
        for (int t = 0; t < trials; ++t) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto y = net.forward(x, false);
            const auto t1 = std::chrono::steady_clock::now();
            if (!y.all_finite()) throw NumericError("non-finite logits during benchmark");
            ms[t] = std::chrono::duration<double, std::milli>(t1 - t0).count() / b;
        }
        std::nth_element(ms.begin(), ms.begin() + trials / 2, ms.end());
        double med = ms[trials / 2];
        if (trials % 2 == 0) med = 0.5 * (med + *std::max_element(ms.begin(), ms.begin() + trials / 2));
        rep.rows.push_back({b, med, trials});
    }
    return rep;
}

}  // namespace beamvista::pruning
