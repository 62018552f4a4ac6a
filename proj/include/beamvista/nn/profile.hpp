#pragma once

#include <cstdint>
#include <type_traits>
#include <variant>

#include "beamvista/nn/network.hpp"

namespace beamvista::nn {

template <typename T>
std::uint64_t count_params(Network<T>& net) {
    return net.num_params();
}

namespace detail {

inline std::uint64_t conv_flops(int k, int cin, int cout, const Shape& out) {
    return 2ull * k * k * cin * cout * std::uint64_t(out[2]) * out[3];
}

}  // namespace detail

// Per-image forward FLOPs. Conv: 2 k^2 Cin Cout Ho Wo; FC: 2 in out;
// ReLU, residual add: one per output element; pooling: one per input element.
template <typename T>
std::uint64_t count_flops(const Network<T>& net) {
    net.output_shape();
    Shape s{1, net.input_shape[0], net.input_shape[1], net.input_shape[2]};
    std::uint64_t total = 0;
    for (const auto& l : net.layers) {
        std::visit(
            [&](const auto& m) {
                using L = std::decay_t<decltype(m)>;
                const Shape o = m.output_shape(s);
                if constexpr (std::is_same_v<L, Conv2d<T>>) {
                    total += detail::conv_flops(m.kernel, m.in_channels, m.out_channels, o);
                } else if constexpr (std::is_same_v<L, FullyConnected<T>>) {
                    total += 2ull * m.in_features * m.out_features;
                } else if constexpr (std::is_same_v<L, Relu<T>>) {
                    total += shape_size(o);
                } else if constexpr (std::is_same_v<L, MaxPool2d<T>> || std::is_same_v<L, GlobalAvgPool<T>>) {
                    total += shape_size(s);
                } else {
                    const Shape h = m.conv_a.output_shape(s);
                    total += detail::conv_flops(m.conv_a.kernel, m.conv_a.in_channels, m.conv_a.out_channels, h);
                    total += shape_size(h);
                    total += detail::conv_flops(m.conv_b.kernel, m.conv_b.in_channels, m.conv_b.out_channels, o);
                    total += 2 * shape_size(o);
                }
                s = o;
            },
            l);
    }
    return total;
}

}  // namespace beamvista::nn
