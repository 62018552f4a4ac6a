#pragma once

// Layer kinds with exact reverse-mode gradients. Every layer caches what its
// backward pass needs during a training-mode forward pass; calling backward
// without that cache is a StateError.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "beamvista/error.hpp"
#include "beamvista/nn/tensor.hpp"

namespace beamvista::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct ParamView {
    std::span<T> value;
    std::span<T> grad;
};

namespace detail {

inline void require_rank4(const Shape& s, const char* who) {
    if (s.size() != 4) throw ShapeError(std::string(who) + " expects a B x C x H x W input, got " + shape_string(s));
}

inline void require_cache(bool cached, const char* who) {
    if (!cached) throw StateError(std::string(who) + ": backward called without a cached forward pass");
}

}  // namespace detail

template <typename T>
struct Conv2d {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    bool has_bias = true;
    std::vector<T> weight;  // out x in x k x k
    std::vector<T> bias;
    std::vector<T> grad_weight;
    std::vector<T> grad_bias;
    bool input_grad = true;  // false for the first layer of a network

    Tensor<T> cache_input;
    bool cached = false;

    Conv2d() = default;
    Conv2d(int in, int out, int k, int s, int p, bool with_bias = true)
        : in_channels(in), out_channels(out), kernel(k), stride(s), padding(p), has_bias(with_bias) {
        if (in < 1 || out < 1 || k < 1 || s < 1 || p < 0) throw ConfigError("invalid Conv2d geometry");
        resize();
    }

    void resize() {
        weight.assign(std::size_t(out_channels) * in_channels * kernel * kernel, T(0));
        grad_weight.assign(weight.size(), T(0));
        bias.assign(has_bias ? out_channels : 0, T(0));
        grad_bias.assign(bias.size(), T(0));
    }

    int patch_size() const { return in_channels * kernel * kernel; }
    int out_extent(int n) const { return (n + 2 * padding - kernel) / stride + 1; }

    Shape output_shape(const Shape& in) const {
        detail::require_rank4(in, "Conv2d");
        if (in[1] != in_channels)
            throw ShapeError("Conv2d expects " + std::to_string(in_channels) + " channels, got " + std::to_string(in[1]));
        const int ho = out_extent(in[2]);
        const int wo = out_extent(in[3]);
        if (ho < 1 || wo < 1) throw ShapeError("Conv2d input too small");
        return {in[0], out_channels, ho, wo};
    }

    // Output columns [lo, hi) whose input column for kernel offset kj is inside the image.
    std::pair<int, int> valid_cols(int kj, int W, int wo) const {
        int lo = 0;
        while (lo < wo && lo * stride - padding + kj < 0) ++lo;
        int hi = wo;
        while (hi > lo && (hi - 1) * stride - padding + kj >= W) --hi;
        return {lo, hi};
    }

    // K x P patch matrix of image b, K = C * k * k, P = Ho * Wo.
    void im2col(const Tensor<T>& x, int b, int ho, int wo, RowMat<T>& col) const {
        const int C = in_channels, H = x.dim(2), W = x.dim(3);
        col.resize(patch_size(), ho * wo);
        const T* img0 = x.ptr() + std::size_t(b) * C * H * W;
        for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < kernel; ++ki)
                for (int kj = 0; kj < kernel; ++kj) {
                    const int r = (c * kernel + ki) * kernel + kj;
                    const T* img = img0 + std::size_t(c) * H * W;
                    T* row = col.data() + std::size_t(r) * col.cols();
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride - padding + ki;
                        T* d = row + oh * wo;
                        if (ih < 0 || ih >= H) {
                            std::fill(d, d + wo, T(0));
                            continue;
                        }
                        const T* src = img + std::size_t(ih) * W - padding + kj;
                        const auto [lo, hi] = valid_cols(kj, W, wo);
                        std::fill(d, d + lo, T(0));
                        if (stride == 1) std::copy(src + lo, src + hi, d + lo);
                        else
                            for (int ow = lo; ow < hi; ++ow) d[ow] = src[ow * stride];
                        std::fill(d + hi, d + wo, T(0));
                    }
                }
    }

    void col2im(const RowMat<T>& col, Tensor<T>& dx, int b, int ho, int wo) const {
        const int C = in_channels, H = dx.dim(2), W = dx.dim(3);
        T* img0 = dx.ptr() + std::size_t(b) * C * H * W;
        for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < kernel; ++ki)
                for (int kj = 0; kj < kernel; ++kj) {
                    const int r = (c * kernel + ki) * kernel + kj;
                    T* img = img0 + std::size_t(c) * H * W;
                    const T* row = col.data() + std::size_t(r) * col.cols();
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride - padding + ki;
                        if (ih < 0 || ih >= H) continue;
                        T* dst = img + std::size_t(ih) * W - padding + kj;
                        const T* src = row + oh * wo;
                        const auto [lo, hi] = valid_cols(kj, W, wo);
                        for (int ow = lo; ow < hi; ++ow) dst[ow * stride] += src[ow];
                    }
                }
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        const Shape os = output_shape(x.shape);
        const int B = os[0], F = out_channels, ho = os[2], wo = os[3], P = ho * wo;
        Eigen::Map<const RowMat<T>> w(weight.data(), F, patch_size());
        Tensor<T> y(os);
        RowMat<T> col;
        for (int b = 0; b < B; ++b) {
            im2col(x, b, ho, wo, col);
            Eigen::Map<RowMat<T>> yb(y.ptr() + std::size_t(b) * F * P, F, P);
            yb.noalias() = w * col;
            if (has_bias)
                for (int f = 0; f < F; ++f) yb.row(f).array() += bias[f];
        }
        if (train) {
            cache_input = x;
            cached = true;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_cache(cached, "Conv2d");
        const Tensor<T>& x = cache_input;
        const Shape os = output_shape(x.shape);
        if (dy.shape != os) throw ShapeError("Conv2d upstream gradient has the wrong shape");
        const int B = os[0], F = out_channels, ho = os[2], wo = os[3], P = ho * wo;
        Eigen::Map<const RowMat<T>> w(weight.data(), F, patch_size());
        Eigen::Map<RowMat<T>> gw(grad_weight.data(), F, patch_size());
        Tensor<T> dx(x.shape);
        RowMat<T> col, dcol;
        for (int b = 0; b < B; ++b) {
            Eigen::Map<const RowMat<T>> db(dy.ptr() + std::size_t(b) * F * P, F, P);
            if (has_bias)
                for (int f = 0; f < F; ++f) {
                    // scalar sum, see the reproducibility test
                    const T* r = dy.ptr() + (std::size_t(b) * F + f) * P;
                    T s = 0;
                    for (int i = 0; i < P; ++i) s += r[i];
                    grad_bias[f] += s;
                }
            im2col(x, b, ho, wo, col);
            gw.noalias() += db * col.transpose();
            if (input_grad) {
                dcol.noalias() = w.transpose() * db;
                col2im(dcol, dx, b, ho, wo);
            }
        }
        return dx;
    }

    void clear_cache() {
        cache_input = {};
        cached = false;
    }

    void params(std::vector<ParamView<T>>& out) {
        out.push_back({weight, grad_weight});
        if (has_bias) out.push_back({bias, grad_bias});
    }

    // Sum of |w| over one output filter (bias excluded).
    T filter_l1(int f) const {
        const std::size_t n = std::size_t(patch_size());
        T s = 0;
        for (std::size_t i = 0; i < n; ++i) s += std::abs(weight[std::size_t(f) * n + i]);
        return s;
    }
};

template <typename T>
struct Relu {
    Tensor<T> cache_output;
    bool cached = false;

    Shape output_shape(const Shape& in) const { return in; }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> y(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
        if (train) {
            cache_output = y;
            cached = true;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_cache(cached, "ReLU");
        if (dy.shape != cache_output.shape) throw ShapeError("ReLU upstream gradient has the wrong shape");
        Tensor<T> dx(dy.shape);
        for (std::size_t i = 0; i < dy.size(); ++i)
            dx.data[i] = cache_output.data[i] > T(0) ? dy.data[i] : T(0);
        return dx;
    }

    void clear_cache() {
        cache_output = {};
        cached = false;
    }
    void params(std::vector<ParamView<T>>&) {}
};

template <typename T>
struct MaxPool2d {
    int kernel = 2;
    int stride = 2;

    Shape cache_in_shape;
    std::vector<std::size_t> cache_argmax;
    bool cached = false;

    MaxPool2d() = default;
    MaxPool2d(int k, int s) : kernel(k), stride(s) {
        if (k < 1 || s < 1) throw ConfigError("invalid MaxPool2d geometry");
    }

    Shape output_shape(const Shape& in) const {
        detail::require_rank4(in, "MaxPool2d");
        const int ho = (in[2] - kernel) / stride + 1;
        const int wo = (in[3] - kernel) / stride + 1;
        if (in[2] < kernel || in[3] < kernel) throw ShapeError("MaxPool2d input too small");
        return {in[0], in[1], ho, wo};
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        const Shape os = output_shape(x.shape);
        const int H = x.dim(2), W = x.dim(3), ho = os[2], wo = os[3];
        Tensor<T> y(os);
        std::vector<std::size_t> arg(y.size());
        std::size_t o = 0;
        for (int bc = 0; bc < os[0] * os[1]; ++bc) {
            const std::size_t base = std::size_t(bc) * H * W;
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow, ++o) {
                    std::size_t best = base + std::size_t(oh * stride) * W + ow * stride;
                    for (int i = 0; i < kernel; ++i)
                        for (int j = 0; j < kernel; ++j) {
                            const std::size_t idx = base + std::size_t(oh * stride + i) * W + (ow * stride + j);
                            if (x.data[idx] > x.data[best]) best = idx;
                        }
                    y.data[o] = x.data[best];
                    arg[o] = best;
                }
        }
        if (train) {
            cache_in_shape = x.shape;
            cache_argmax = std::move(arg);
            cached = true;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_cache(cached, "MaxPool2d");
        if (dy.size() != cache_argmax.size()) throw ShapeError("MaxPool2d upstream gradient has the wrong shape");
        Tensor<T> dx(cache_in_shape);
        for (std::size_t i = 0; i < dy.size(); ++i) dx.data[cache_argmax[i]] += dy.data[i];
        return dx;
    }

    void clear_cache() {
        cache_argmax.clear();
        cached = false;
    }
    void params(std::vector<ParamView<T>>&) {}
};

template <typename T>
struct GlobalAvgPool {
    Shape cache_in_shape;
    bool cached = false;

    Shape output_shape(const Shape& in) const {
        detail::require_rank4(in, "GlobalAvgPool");
        return {in[0], in[1]};
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        const Shape os = output_shape(x.shape);
        const std::size_t hw = std::size_t(x.dim(2)) * x.dim(3);
        Tensor<T> y(os);
        for (std::size_t i = 0; i < y.size(); ++i) {
            const T* p = x.ptr() + i * hw;
            T s = 0;
            for (std::size_t j = 0; j < hw; ++j) s += p[j];
            y.data[i] = s / static_cast<T>(hw);
        }
        if (train) {
            cache_in_shape = x.shape;
            cached = true;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_cache(cached, "GlobalAvgPool");
        Tensor<T> dx(cache_in_shape);
        const std::size_t hw = std::size_t(dx.dim(2)) * dx.dim(3);
        if (dy.size() * hw != dx.size()) throw ShapeError("GlobalAvgPool upstream gradient has the wrong shape");
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const T g = dy.data[i] / static_cast<T>(hw);
            std::fill(dx.ptr() + i * hw, dx.ptr() + (i + 1) * hw, g);
        }
        return dx;
    }

    void clear_cache() { cached = false; }
    void params(std::vector<ParamView<T>>&) {}
};

// y = x W^T + b on the input flattened to B x in_features.
template <typename T>
struct FullyConnected {
    int in_features = 0;
    int out_features = 0;
    std::vector<T> weight;  // out x in
    std::vector<T> bias;
    std::vector<T> grad_weight;
    std::vector<T> grad_bias;

    Tensor<T> cache_input;
    bool cached = false;

    FullyConnected() = default;
    FullyConnected(int in, int out) : in_features(in), out_features(out) {
        if (in < 1 || out < 1) throw ConfigError("invalid FullyConnected geometry");
        resize();
    }

    void resize() {
        weight.assign(std::size_t(out_features) * in_features, T(0));
        grad_weight.assign(weight.size(), T(0));
        bias.assign(out_features, T(0));
        grad_bias.assign(bias.size(), T(0));
    }

    Shape output_shape(const Shape& in) const {
        if (in.empty()) throw ShapeError("FullyConnected needs a batch dimension");
        const std::size_t feat = shape_size(in) / std::max(1, in[0]);
        if (static_cast<int>(feat) != in_features)
            throw ShapeError("FullyConnected expects " + std::to_string(in_features) + " features, got " +
                             std::to_string(feat));
        return {in[0], out_features};
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        const Shape os = output_shape(x.shape);
        Eigen::Map<const RowMat<T>> xm(x.ptr(), os[0], in_features);
        Eigen::Map<const RowMat<T>> w(weight.data(), out_features, in_features);
        Tensor<T> y(os);
        Eigen::Map<RowMat<T>> ym(y.ptr(), os[0], out_features);
        ym.noalias() = xm * w.transpose();
        for (int b = 0; b < os[0]; ++b)
            for (int o = 0; o < out_features; ++o) ym(b, o) += bias[o];
        if (train) {
            cache_input = x;
            cached = true;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_cache(cached, "FullyConnected");
        const int B = cache_input.dim(0);
        if (dy.shape != Shape{B, out_features}) throw ShapeError("FullyConnected upstream gradient has the wrong shape");
        Eigen::Map<const RowMat<T>> xm(cache_input.ptr(), B, in_features);
        Eigen::Map<const RowMat<T>> g(dy.ptr(), B, out_features);
        Eigen::Map<RowMat<T>> gw(grad_weight.data(), out_features, in_features);
        gw.noalias() += g.transpose() * xm;
        for (int o = 0; o < out_features; ++o) grad_bias[o] += g.col(o).sum();
        Eigen::Map<const RowMat<T>> w(weight.data(), out_features, in_features);
        Tensor<T> dx(cache_input.shape);
        Eigen::Map<RowMat<T>> dxm(dx.ptr(), B, in_features);
        dxm.noalias() = g * w;
        return dx;
    }

    void clear_cache() {
        cache_input = {};
        cached = false;
    }

    void params(std::vector<ParamView<T>>& out) {
        out.push_back({weight, grad_weight});
        out.push_back({bias, grad_bias});
    }
};

// relu(x + conv_b(relu(conv_a(x)))), both convolutions 3x3 stride 1.
template <typename T>
struct ResidualBlock {
    Conv2d<T> conv_a;
    Relu<T> relu_a;
    Conv2d<T> conv_b;
    Relu<T> relu_out;

    ResidualBlock() = default;
    explicit ResidualBlock(int channels) : conv_a(channels, channels, 3, 1, 1), conv_b(channels, channels, 3, 1, 1) {}

    int channels() const { return conv_b.out_channels; }

    Shape output_shape(const Shape& in) const {
        const Shape h = conv_b.output_shape(conv_a.output_shape(in));
        if (h != in) throw ShapeError("ResidualBlock branch does not preserve the input shape");
        return in;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> h = conv_a.forward(x, train);
        h = relu_a.forward(h, train);
        h = conv_b.forward(h, train);
        if (h.shape != x.shape) throw ShapeError("ResidualBlock branch does not preserve the input shape");
        for (std::size_t i = 0; i < h.size(); ++i) h.data[i] += x.data[i];
        return relu_out.forward(h, train);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const Tensor<T> ds = relu_out.backward(dy);
        Tensor<T> dh = conv_b.backward(ds);
        dh = relu_a.backward(dh);
        Tensor<T> dx = conv_a.backward(dh);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
        return dx;
    }

    void clear_cache() {
        conv_a.clear_cache();
        relu_a.clear_cache();
        conv_b.clear_cache();
        relu_out.clear_cache();
    }

    void params(std::vector<ParamView<T>>& out) {
        conv_a.params(out);
        conv_b.params(out);
    }
};

}  // namespace beamvista::nn
