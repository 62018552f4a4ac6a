#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "beamvista/error.hpp"
#include "beamvista/nn/tensor.hpp"

namespace beamvista::nn {

template <typename T>
struct LossResult {
    T loss = 0;
    Tensor<T> grad;  // dLoss/dlogits
};

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax expects B x Q logits");
    const int B = logits.dim(0), Q = logits.dim(1);
    Tensor<T> p(logits.shape);
    for (int b = 0; b < B; ++b) {
        const T* z = logits.ptr() + std::size_t(b) * Q;
        T* out = p.ptr() + std::size_t(b) * Q;
        const T m = *std::max_element(z, z + Q);
        T s = 0;
        for (int q = 0; q < Q; ++q) s += (out[q] = std::exp(z[q] - m));
        for (int q = 0; q < Q; ++q) out[q] /= s;
    }
    return p;
}

// Mean negative log-likelihood; gradient = (softmax - onehot) / B.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects B x Q logits");
    const int B = logits.dim(0), Q = logits.dim(1);
    if (static_cast<int>(labels.size()) != B) throw ShapeError("label count does not match batch size");
    for (int y : labels)
        if (y < 0 || y >= Q) throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(Q) + ")");
    LossResult<T> r{T(0), softmax(logits)};
    for (int b = 0; b < B; ++b) {
        const T* z = logits.ptr() + std::size_t(b) * Q;
        const T m = *std::max_element(z, z + Q);
        T s = 0;
        for (int q = 0; q < Q; ++q) s += std::exp(z[q] - m);
        r.loss += std::log(s) - (z[labels[b]] - m);
        r.grad.data[std::size_t(b) * Q + labels[b]] -= T(1);
    }
    r.loss /= static_cast<T>(B);
    for (auto& g : r.grad.data) g /= static_cast<T>(B);
    return r;
}

}  // namespace beamvista::nn
