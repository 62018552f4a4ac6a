#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "beamvista/error.hpp"
#include "beamvista/nn/layers.hpp"
#include "beamvista/nn/tensor.hpp"
#include "beamvista/rng.hpp"

namespace beamvista::nn {

template <typename T>
using Layer = std::variant<Conv2d<T>, Relu<T>, MaxPool2d<T>, GlobalAvgPool<T>, FullyConnected<T>, ResidualBlock<T>>;

template <typename T>
std::string layer_kind(const Layer<T>& l) {
    return std::visit(
        [](const auto& x) -> std::string {
            using L = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<L, Conv2d<T>>) return "conv2d";
            else if constexpr (std::is_same_v<L, Relu<T>>) return "relu";
            else if constexpr (std::is_same_v<L, MaxPool2d<T>>) return "maxpool2d";
            else if constexpr (std::is_same_v<L, GlobalAvgPool<T>>) return "global_avg_pool";
            else if constexpr (std::is_same_v<L, FullyConnected<T>>) return "fully_connected";
            else return "residual_block";
        },
        l);
}

// Ordered layer stack over C x H x W inputs.
template <typename T>
struct Network {
    Shape input_shape;  // C, H, W
    std::vector<Layer<T>> layers;

    // Full shape audit for a batch of B; returns the logits shape.
    Shape output_shape(int batch = 1) const {
        if (input_shape.size() != 3) throw ShapeError("network input shape must be C x H x W");
        Shape s{batch, input_shape[0], input_shape[1], input_shape[2]};
        for (const auto& l : layers) s = std::visit([&](const auto& x) { return x.output_shape(s); }, l);
        if (s.size() != 2) throw ShapeError("network must end in a fully connected layer");
        return s;
    }

    int num_classes() const { return output_shape()[1]; }

    Tensor<T> forward(const Tensor<T>& x, bool train = false) {
        if (x.rank() != 4 || Shape(x.shape.begin() + 1, x.shape.end()) != input_shape)
            throw ShapeError("network expects B x " + shape_string(input_shape) + ", got " + shape_string(x.shape));
        const int B = x.dim(0);
        if (train || B == 1) {
            Tensor<T> h = x;
            for (auto& l : layers) h = std::visit([&](auto& m) { return m.forward(h, train); }, l);
            return h;
        }
        // inference: feature layers one image at a time, then the head on the whole batch
        const std::size_t head = first_fc();
        Tensor<T> feats;
        const std::size_t in_size = shape_size(input_shape);
        for (int b = 0; b < B; ++b) {
            Tensor<T> h({1, input_shape[0], input_shape[1], input_shape[2]});
            std::copy_n(x.ptr() + b * in_size, in_size, h.ptr());
            for (std::size_t i = 0; i < head; ++i) h = std::visit([&](auto& m) { return m.forward(h, false); }, layers[i]);
            if (b == 0) {
                Shape s = h.shape;
                s[0] = B;
                feats = Tensor<T>(s);
            }
            std::copy(h.data.begin(), h.data.end(), feats.ptr() + b * h.data.size());
        }
        for (std::size_t i = head; i < layers.size(); ++i)
            feats = std::visit([&](auto& m) { return m.forward(feats, false); }, layers[i]);
        return feats;
    }

    std::size_t first_fc() const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (std::holds_alternative<FullyConnected<T>>(layers[i])) return i;
        return layers.size();
    }

    // Accumulates parameter gradients; returns dLoss/dinput (zero if the
    // first layer skips its input gradient).
    Tensor<T> backward(const Tensor<T>& dlogits) {
        Tensor<T> g = dlogits;
        for (auto it = layers.rbegin(); it != layers.rend(); ++it)
            g = std::visit([&](auto& m) { return m.backward(g); }, *it);
        return g;
    }

    std::vector<ParamView<T>> params() {
        std::vector<ParamView<T>> out;
        for (auto& l : layers) std::visit([&](auto& m) { m.params(out); }, l);
        return out;
    }

    void zero_grad() {
        for (auto& p : params()) std::fill(p.grad.begin(), p.grad.end(), T(0));
    }

    void clear_cache() {
        for (auto& l : layers) std::visit([](auto& m) { m.clear_cache(); }, l);
    }

    std::size_t num_params() {
        std::size_t n = 0;
        for (auto& p : params()) n += p.value.size();
        return n;
    }

    // Flat copy of every parameter in layer order.
    std::vector<T> flat_params() {
        std::vector<T> out;
        for (auto& p : params()) out.insert(out.end(), p.value.begin(), p.value.end());
        return out;
    }

    void set_flat_params(const std::vector<T>& v) {
        std::size_t o = 0;
        for (auto& p : params()) {
            if (o + p.value.size() > v.size()) throw ShapeError("parameter vector too short");
            std::copy(v.begin() + o, v.begin() + o + p.value.size(), p.value.begin());
            o += p.value.size();
        }
        if (o != v.size()) throw ShapeError("parameter vector too long");
    }

    // Kaiming-style fan-in uniform init, zero biases.
    void init(std::uint64_t seed) {
        Rng rng(seed);
        auto fill = [&](std::vector<T>& w, double bound) {
            for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
        };
        auto conv = [&](Conv2d<T>& c) {
            fill(c.weight, std::sqrt(6.0 / c.patch_size()));
            std::fill(c.bias.begin(), c.bias.end(), T(0));
        };
        for (auto& l : layers)
            std::visit(
                [&](auto& m) {
                    using L = std::decay_t<decltype(m)>;
                    if constexpr (std::is_same_v<L, Conv2d<T>>) conv(m);
                    else if constexpr (std::is_same_v<L, ResidualBlock<T>>) {
                        conv(m.conv_a);
                        conv(m.conv_b);
                    } else if constexpr (std::is_same_v<L, FullyConnected<T>>) {
                        fill(m.weight, std::sqrt(3.0 / m.in_features));
                        std::fill(m.bias.begin(), m.bias.end(), T(0));
                    }
                },
                l);
    }

    template <typename U>
    Network<U> cast() const;
};

namespace detail {

template <typename U, typename T>
std::vector<U> cast_vec(const std::vector<T>& v) {
    return std::vector<U>(v.begin(), v.end());
}

template <typename U, typename T>
Conv2d<U> cast_conv(const Conv2d<T>& c) {
    Conv2d<U> o(c.in_channels, c.out_channels, c.kernel, c.stride, c.padding, c.has_bias);
    o.weight = cast_vec<U>(c.weight);
    o.bias = cast_vec<U>(c.bias);
    o.input_grad = c.input_grad;
    return o;
}

}  // namespace detail

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
    Network<U> out;
    out.input_shape = input_shape;
    for (const auto& l : layers)
        std::visit(
            [&](const auto& m) {
                using L = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<L, Conv2d<T>>) out.layers.emplace_back(detail::cast_conv<U>(m));
                else if constexpr (std::is_same_v<L, Relu<T>>) out.layers.emplace_back(Relu<U>{});
                else if constexpr (std::is_same_v<L, MaxPool2d<T>>) out.layers.emplace_back(MaxPool2d<U>(m.kernel, m.stride));
                else if constexpr (std::is_same_v<L, GlobalAvgPool<T>>) out.layers.emplace_back(GlobalAvgPool<U>{});
                else if constexpr (std::is_same_v<L, FullyConnected<T>>) {
                    FullyConnected<U> f(m.in_features, m.out_features);
                    f.weight = detail::cast_vec<U>(m.weight);
                    f.bias = detail::cast_vec<U>(m.bias);
                    out.layers.emplace_back(std::move(f));
                } else {
                    ResidualBlock<U> r;
                    r.conv_a = detail::cast_conv<U>(m.conv_a);
                    r.conv_b = detail::cast_conv<U>(m.conv_b);
                    out.layers.emplace_back(std::move(r));
                }
            },
            l);
    return out;
}

// Architecture descriptor (no weights).
template <typename T>
nlohmann::json describe(const Network<T>& net) {
    using nlohmann::json;
    auto conv_json = [](const Conv2d<T>& c) {
        return json{{"in", c.in_channels}, {"out", c.out_channels}, {"kernel", c.kernel},
                    {"stride", c.stride},  {"padding", c.padding},  {"bias", c.has_bias}};
    };
    json layers = json::array();
    for (const auto& l : net.layers) {
        json j{{"kind", layer_kind<T>(l)}};
        std::visit(
            [&](const auto& m) {
                using L = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<L, Conv2d<T>>) {
                    j.update(conv_json(m));
                    j["input_grad"] = m.input_grad;
                } else if constexpr (std::is_same_v<L, MaxPool2d<T>>) {
                    j["kernel"] = m.kernel;
                    j["stride"] = m.stride;
                } else if constexpr (std::is_same_v<L, FullyConnected<T>>) {
                    j["in"] = m.in_features;
                    j["out"] = m.out_features;
                } else if constexpr (std::is_same_v<L, ResidualBlock<T>>) {
                    j["conv_a"] = conv_json(m.conv_a);
                    j["conv_b"] = conv_json(m.conv_b);
                }
            },
            l);
        layers.push_back(std::move(j));
    }
    return json{{"input_shape", net.input_shape}, {"layers", layers}};
}

template <typename T>
Network<T> from_description(const nlohmann::json& d) {
    auto conv = [](const nlohmann::json& j) {
        return Conv2d<T>(j.at("in").get<int>(), j.at("out").get<int>(), j.at("kernel").get<int>(),
                         j.at("stride").get<int>(), j.at("padding").get<int>(), j.at("bias").get<bool>());
    };
    Network<T> net;
    try {
        net.input_shape = d.at("input_shape").get<Shape>();
        for (const auto& j : d.at("layers")) {
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "conv2d") {
                auto c = conv(j);
                c.input_grad = j.value("input_grad", true);
                net.layers.emplace_back(std::move(c));
            } else if (kind == "relu") {
                net.layers.emplace_back(Relu<T>{});
            } else if (kind == "maxpool2d") {
                net.layers.emplace_back(MaxPool2d<T>(j.at("kernel").get<int>(), j.at("stride").get<int>()));
            } else if (kind == "global_avg_pool") {
                net.layers.emplace_back(GlobalAvgPool<T>{});
            } else if (kind == "fully_connected") {
                net.layers.emplace_back(FullyConnected<T>(j.at("in").get<int>(), j.at("out").get<int>()));
            } else if (kind == "residual_block") {
                ResidualBlock<T> r;
                r.conv_a = conv(j.at("conv_a"));
                r.conv_b = conv(j.at("conv_b"));
                net.layers.emplace_back(std::move(r));
            } else {
                throw FormatError("unknown layer kind '" + kind + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad architecture descriptor: ") + e.what());
    }
    net.output_shape();
    return net;
}

enum class Head { flatten, global_avg_pool };
enum class Stem { strided, pooled };

struct DroneNetConfig {
    int num_beams = 64;
    int channels = 3;
    int height = 64;
    int width = 64;
    Head head = Head::flatten;
    Stem stem = Stem::strided;
};

inline Head parse_head(const std::string& s) {
    if (s == "flatten") return Head::flatten;
    if (s == "global_avg_pool") return Head::global_avg_pool;
    throw ConfigError("unknown head '" + s + "'");
}

inline Stem parse_stem(const std::string& s) {
    if (s == "strided") return Stem::strided;
    if (s == "pooled") return Stem::pooled;
    throw ConfigError("unknown stem '" + s + "'");
}

// conv(3->16, s2) relu res(16) conv(16->32, s2) relu res(32) conv(32->64, s2)
// relu, then flatten or global average pool into FC(-> Q). The pooled stem
// replaces the first stride-2 conv with a stride-1 conv and 2x2 max pool.
template <typename T>
Network<T> make_dronenet(const DroneNetConfig& cfg, std::uint64_t seed) {
    if (cfg.num_beams < 1) throw ConfigError("num_beams must be positive");
    Network<T> net;
    net.input_shape = {cfg.channels, cfg.height, cfg.width};
    if (cfg.stem == Stem::pooled) {
        net.layers.emplace_back(Conv2d<T>(cfg.channels, 16, 3, 1, 1));
        net.layers.emplace_back(Relu<T>{});
        net.layers.emplace_back(MaxPool2d<T>(2, 2));
    } else {
        net.layers.emplace_back(Conv2d<T>(cfg.channels, 16, 3, 2, 1));
        net.layers.emplace_back(Relu<T>{});
    }
    std::get<Conv2d<T>>(net.layers.front()).input_grad = false;
    net.layers.emplace_back(ResidualBlock<T>(16));
    net.layers.emplace_back(Conv2d<T>(16, 32, 3, 2, 1));
    net.layers.emplace_back(Relu<T>{});
    net.layers.emplace_back(ResidualBlock<T>(32));
    net.layers.emplace_back(Conv2d<T>(32, 64, 3, 2, 1));
    net.layers.emplace_back(Relu<T>{});
    Shape s = Shape{1, cfg.channels, cfg.height, cfg.width};
    for (const auto& l : net.layers) s = std::visit([&](const auto& x) { return x.output_shape(s); }, l);
    if (cfg.head == Head::global_avg_pool) {
        net.layers.emplace_back(GlobalAvgPool<T>{});
        net.layers.emplace_back(FullyConnected<T>(64, cfg.num_beams));
    } else {
        net.layers.emplace_back(FullyConnected<T>(static_cast<int>(shape_size(s)), cfg.num_beams));
    }
    net.output_shape();
    net.init(seed);
    return net;
}

}  // namespace beamvista::nn
