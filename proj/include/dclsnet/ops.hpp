#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "dclsnet/tensor.hpp"

namespace dclsnet {

struct ConvGeometry {
    int kernel_h = 1, kernel_w = 1;
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;
    int groups = 1;

    void validate() const {
        if (kernel_h < 1 || kernel_w < 1) throw std::invalid_argument("conv: kernel extents must be >= 1");
        if (stride_h < 1 || stride_w < 1) throw std::invalid_argument("conv: strides must be >= 1");
        if (pad_h < 0 || pad_w < 0) throw std::invalid_argument("conv: padding must be >= 0");
        if (groups < 1) throw std::invalid_argument("conv: groups must be >= 1");
    }
    // floor((in + 2*pad - kernel)/stride) + 1
    int out_h(int in_h) const { return (in_h + 2 * pad_h - kernel_h) / stride_h + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pad_w - kernel_w) / stride_w + 1; }
};

namespace ops {

// Per-channel 2-D cross-correlation with zero padding.
// input N,C,H,W; kernel C,1,Kh,Kw; geom.groups == C.
template <typename T>
TensorT<T> depthwise_conv2d(const TensorT<T>& input, const TensorT<T>& kernel,
                            const ConvGeometry& geom) {
    geom.validate();
    if (input.rank() != 4 || kernel.rank() != 4)
        throw std::invalid_argument("depthwise_conv2d: expected 4-D input and kernel");
    const std::size_t N = input.dim(0), C = input.dim(1);
    const int H = (int)input.dim(2), W = (int)input.dim(3);
    if (kernel.dim(0) != C || kernel.dim(1) != 1)
        throw std::invalid_argument("depthwise_conv2d: kernel channel mismatch");
    if ((int)kernel.dim(2) != geom.kernel_h || (int)kernel.dim(3) != geom.kernel_w)
        throw std::invalid_argument("depthwise_conv2d: kernel extents disagree with geometry");
    if (geom.groups != (int)C)
        throw std::invalid_argument("depthwise_conv2d: groups must equal channel count");
    const int Ho = geom.out_h(H), Wo = geom.out_w(W);
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("depthwise_conv2d: non-positive output extent");

    TensorT<T> out({N, C, (std::size_t)Ho, (std::size_t)Wo});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* x = &input.data[(n * C + c) * (std::size_t)(H * W)];
            const T* k = &kernel.data[c * (std::size_t)(geom.kernel_h * geom.kernel_w)];
            T* y = &out.data[(n * C + c) * (std::size_t)(Ho * Wo)];
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    T acc = 0;
                    for (int kh = 0; kh < geom.kernel_h; ++kh) {
                        const int ih = oh * geom.stride_h - geom.pad_h + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < geom.kernel_w; ++kw) {
                            const int iw = ow * geom.stride_w - geom.pad_w + kw;
                            if (iw < 0 || iw >= W) continue;
                            acc += x[ih * W + iw] * k[kh * geom.kernel_w + kw];
                        }
                    }
                    y[oh * Wo + ow] = acc;
                }
        }
    ensure_finite(out, "depthwise_conv2d");
    return out;
}

template <typename T>
void depthwise_conv2d_vjp(const TensorT<T>& grad_out, const TensorT<T>& input,
                          const TensorT<T>& kernel, const ConvGeometry& geom,
                          TensorT<T>& grad_input, TensorT<T>& grad_kernel) {
    const std::size_t N = input.dim(0), C = input.dim(1);
    const int H = (int)input.dim(2), W = (int)input.dim(3);
    const int Ho = (int)grad_out.dim(2), Wo = (int)grad_out.dim(3);
    grad_input = TensorT<T>(input.shape);
    grad_kernel = TensorT<T>(kernel.shape);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* x = &input.data[(n * C + c) * (std::size_t)(H * W)];
            const T* k = &kernel.data[c * (std::size_t)(geom.kernel_h * geom.kernel_w)];
            const T* gy = &grad_out.data[(n * C + c) * (std::size_t)(Ho * Wo)];
            T* gx = &grad_input.data[(n * C + c) * (std::size_t)(H * W)];
            T* gk = &grad_kernel.data[c * (std::size_t)(geom.kernel_h * geom.kernel_w)];
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    const T g = gy[oh * Wo + ow];
                    if (g == T{0}) continue;
                    for (int kh = 0; kh < geom.kernel_h; ++kh) {
                        const int ih = oh * geom.stride_h - geom.pad_h + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < geom.kernel_w; ++kw) {
                            const int iw = ow * geom.stride_w - geom.pad_w + kw;
                            if (iw < 0 || iw >= W) continue;
                            gx[ih * W + iw] += g * k[kh * geom.kernel_w + kw];
                            gk[kh * geom.kernel_w + kw] += g * x[ih * W + iw];
                        }
                    }
                }
        }
}

// Full cross-correlation. input N,Cin,H,W; kernel Cout,Cin,Kh,Kw; groups == 1.
template <typename T>
TensorT<T> dense_conv2d(const TensorT<T>& input, const TensorT<T>& kernel,
                        const ConvGeometry& geom) {
    geom.validate();
    if (input.rank() != 4 || kernel.rank() != 4)
        throw std::invalid_argument("dense_conv2d: expected 4-D input and kernel");
    if (geom.groups != 1) throw std::invalid_argument("dense_conv2d: groups must be 1");
    const std::size_t N = input.dim(0), Cin = input.dim(1);
    const int H = (int)input.dim(2), W = (int)input.dim(3);
    const std::size_t Cout = kernel.dim(0);
    if (kernel.dim(1) != Cin) throw std::invalid_argument("dense_conv2d: channel mismatch");
    if ((int)kernel.dim(2) != geom.kernel_h || (int)kernel.dim(3) != geom.kernel_w)
        throw std::invalid_argument("dense_conv2d: kernel extents disagree with geometry");
    const int Ho = geom.out_h(H), Wo = geom.out_w(W);
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("dense_conv2d: non-positive output extent");

    TensorT<T> out({N, Cout, (std::size_t)Ho, (std::size_t)Wo});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
            T* y = &out.data[(n * Cout + co) * (std::size_t)(Ho * Wo)];
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const T* x = &input.data[(n * Cin + ci) * (std::size_t)(H * W)];
                const T* k = &kernel.data[(co * Cin + ci) * (std::size_t)(geom.kernel_h * geom.kernel_w)];
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        T acc = 0;
                        for (int kh = 0; kh < geom.kernel_h; ++kh) {
                            const int ih = oh * geom.stride_h - geom.pad_h + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = 0; kw < geom.kernel_w; ++kw) {
                                const int iw = ow * geom.stride_w - geom.pad_w + kw;
                                if (iw < 0 || iw >= W) continue;
                                acc += x[ih * W + iw] * k[kh * geom.kernel_w + kw];
                            }
                        }
                        y[oh * Wo + ow] += acc;
                    }
            }
        }
    ensure_finite(out, "dense_conv2d");
    return out;
}

template <typename T>
void dense_conv2d_vjp(const TensorT<T>& grad_out, const TensorT<T>& input,
                      const TensorT<T>& kernel, const ConvGeometry& geom,
                      TensorT<T>& grad_input, TensorT<T>& grad_kernel) {
    const std::size_t N = input.dim(0), Cin = input.dim(1);
    const int H = (int)input.dim(2), W = (int)input.dim(3);
    const std::size_t Cout = kernel.dim(0);
    const int Ho = (int)grad_out.dim(2), Wo = (int)grad_out.dim(3);
    grad_input = TensorT<T>(input.shape);
    grad_kernel = TensorT<T>(kernel.shape);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
            const T* gy = &grad_out.data[(n * Cout + co) * (std::size_t)(Ho * Wo)];
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const T* x = &input.data[(n * Cin + ci) * (std::size_t)(H * W)];
                const T* k = &kernel.data[(co * Cin + ci) * (std::size_t)(geom.kernel_h * geom.kernel_w)];
                T* gx = &grad_input.data[(n * Cin + ci) * (std::size_t)(H * W)];
                T* gk = &grad_kernel.data[(co * Cin + ci) * (std::size_t)(geom.kernel_h * geom.kernel_w)];
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        const T g = gy[oh * Wo + ow];
                        if (g == T{0}) continue;
                        for (int kh = 0; kh < geom.kernel_h; ++kh) {
                            const int ih = oh * geom.stride_h - geom.pad_h + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = 0; kw < geom.kernel_w; ++kw) {
                                const int iw = ow * geom.stride_w - geom.pad_w + kw;
                                if (iw < 0 || iw >= W) continue;
                                gx[ih * W + iw] += g * k[kh * geom.kernel_w + kw];
                                gk[kh * geom.kernel_w + kw] += g * x[ih * W + iw];
                            }
                        }
                    }
            }
        }
}

// Affine map over the trailing axis: input ...,Cin -> output ...,Cout.
template <typename T>
TensorT<T> pointwise_linear(const TensorT<T>& input, const TensorT<T>& weight,
                            const TensorT<T>& bias) {
    if (input.rank() < 1) throw std::invalid_argument("pointwise_linear: rank >= 1 required");
    const std::size_t Cin = input.shape.back();
    const std::size_t Cout = weight.dim(0);
    if (weight.rank() != 2 || weight.dim(1) != Cin)
        throw std::invalid_argument("pointwise_linear: weight shape mismatch");
    if (bias.numel() != Cout) throw std::invalid_argument("pointwise_linear: bias shape mismatch");
    const std::size_t P = input.numel() / Cin;
    Shape out_shape = input.shape;
    out_shape.back() = Cout;
    TensorT<T> out(out_shape);
    for (std::size_t p = 0; p < P; ++p) {
        const T* x = &input.data[p * Cin];
        T* y = &out.data[p * Cout];
        for (std::size_t co = 0; co < Cout; ++co) {
            T acc = bias.data[co];
            const T* w = &weight.data[co * Cin];
            for (std::size_t ci = 0; ci < Cin; ++ci) acc += w[ci] * x[ci];
            y[co] = acc;
        }
    }
    ensure_finite(out, "pointwise_linear");
    return out;
}

template <typename T>
void pointwise_linear_vjp(const TensorT<T>& grad_out, const TensorT<T>& input,
                          const TensorT<T>& weight, TensorT<T>& grad_input,
                          TensorT<T>& grad_weight, TensorT<T>& grad_bias) {
    const std::size_t Cin = input.shape.back();
    const std::size_t Cout = weight.dim(0);
    const std::size_t P = input.numel() / Cin;
    grad_input = TensorT<T>(input.shape);
    grad_weight = TensorT<T>(weight.shape);
    grad_bias = TensorT<T>({Cout});
    for (std::size_t p = 0; p < P; ++p) {
        const T* x = &input.data[p * Cin];
        const T* gy = &grad_out.data[p * Cout];
        T* gx = &grad_input.data[p * Cin];
        for (std::size_t co = 0; co < Cout; ++co) {
            const T g = gy[co];
            grad_bias.data[co] += g;
            const T* w = &weight.data[co * Cin];
            T* gw = &grad_weight.data[co * Cin];
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                gx[ci] += g * w[ci];
                gw[ci] += g * x[ci];
            }
        }
    }
}

// Normalization over the trailing (channel) axis, then affine.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& input, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-6)) {
    const std::size_t C = input.shape.back();
    if (C < 1) throw std::invalid_argument("layer_norm: empty channel axis");
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("layer_norm: gamma/beta shape mismatch");
    const std::size_t P = input.numel() / C;
    TensorT<T> out(input.shape);
    for (std::size_t p = 0; p < P; ++p) {
        const T* x = &input.data[p * C];
        T* y = &out.data[p * C];
        T mean = 0;
        for (std::size_t c = 0; c < C; ++c) mean += x[c];
        mean /= (T)C;
        T var = 0;
        for (std::size_t c = 0; c < C; ++c) var += (x[c] - mean) * (x[c] - mean);
        var /= (T)C;
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < C; ++c)
            y[c] = (x[c] - mean) * inv * gamma.data[c] + beta.data[c];
    }
    ensure_finite(out, "layer_norm");
    return out;
}

template <typename T>
void layer_norm_vjp(const TensorT<T>& grad_out, const TensorT<T>& input,
                    const TensorT<T>& gamma, TensorT<T>& grad_input,
                    TensorT<T>& grad_gamma, TensorT<T>& grad_beta, T eps = T(1e-6)) {
    const std::size_t C = input.shape.back();
    const std::size_t P = input.numel() / C;
    grad_input = TensorT<T>(input.shape);
    grad_gamma = TensorT<T>({C});
    grad_beta = TensorT<T>({C});
    for (std::size_t p = 0; p < P; ++p) {
        const T* x = &input.data[p * C];
        const T* gy = &grad_out.data[p * C];
        T* gx = &grad_input.data[p * C];
        T mean = 0;
        for (std::size_t c = 0; c < C; ++c) mean += x[c];
        mean /= (T)C;
        T var = 0;
        for (std::size_t c = 0; c < C; ++c) var += (x[c] - mean) * (x[c] - mean);
        var /= (T)C;
        const T inv = T(1) / std::sqrt(var + eps);
        // xhat = (x - mean) * inv; y = xhat*gamma + beta
        T sum_gxhat = 0, sum_gxhat_xhat = 0;
        for (std::size_t c = 0; c < C; ++c) {
            const T xhat = (x[c] - mean) * inv;
            const T g = gy[c] * gamma.data[c];
            grad_gamma.data[c] += gy[c] * xhat;
            grad_beta.data[c] += gy[c];
            sum_gxhat += g;
            sum_gxhat_xhat += g * xhat;
        }
        for (std::size_t c = 0; c < C; ++c) {
            const T xhat = (x[c] - mean) * inv;
            const T g = gy[c] * gamma.data[c];
            gx[c] = inv * (g - sum_gxhat / (T)C - xhat * sum_gxhat_xhat / (T)C);
        }
    }
}

// Exact-erf GELU: x * Phi(x).
template <typename T>
T gelu_scalar(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& input) {
    TensorT<T> out(input.shape);
    for (std::size_t i = 0; i < input.numel(); ++i) out.data[i] = gelu_scalar(input.data[i]);
    ensure_finite(out, "gelu");
    return out;
}

template <typename T>
void gelu_vjp(const TensorT<T>& grad_out, const TensorT<T>& input, TensorT<T>& grad_input) {
    grad_input = TensorT<T>(input.shape);
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * T(M_PI));
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const T x = input.data[i];
        const T phi = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        grad_input.data[i] = grad_out.data[i] * (phi + x * pdf);
    }
}

// Mean over spatial positions: N,C,H,W -> N,C.
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& input) {
    if (input.rank() != 4) throw std::invalid_argument("global_avg_pool: expected NCHW");
    const std::size_t N = input.dim(0), C = input.dim(1);
    const std::size_t HW = input.dim(2) * input.dim(3);
    if (HW == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
    TensorT<T> out({N, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* x = &input.data[(n * C + c) * HW];
            T acc = 0;
            for (std::size_t i = 0; i < HW; ++i) acc += x[i];
            out.at2(n, c) = acc / (T)HW;
        }
    ensure_finite(out, "global_avg_pool");
    return out;
}

template <typename T>
void global_avg_pool_vjp(const TensorT<T>& grad_out, const Shape& input_shape,
                         TensorT<T>& grad_input) {
    grad_input = TensorT<T>(input_shape);
    const std::size_t N = input_shape[0], C = input_shape[1];
    const std::size_t HW = input_shape[2] * input_shape[3];
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T g = grad_out.at2(n, c) / (T)HW;
            T* gx = &grad_input.data[(n * C + c) * HW];
            for (std::size_t i = 0; i < HW; ++i) gx[i] = g;
        }
}

// Layout shuffles used by the blocks (layer_norm and the MLP act channels-last).
template <typename T>
TensorT<T> nchw_to_nhwc(const TensorT<T>& x) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> out({N, H, W, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    out.data[((n * H + h) * W + w) * C + c] = x.at4(n, c, h, w);
    return out;
}

template <typename T>
TensorT<T> nhwc_to_nchw(const TensorT<T>& x) {
    const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    TensorT<T> out({N, C, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
                for (std::size_t c = 0; c < C; ++c)
                    out.at4(n, c, h, w) = x.data[((n * H + h) * W + w) * C + c];
    return out;
}

}  // namespace ops
}  // namespace dclsnet
