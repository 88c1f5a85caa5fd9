#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dclsnet/tensor.hpp"

namespace dclsnet {

enum class DclsVersion { Gauss, Bilinear };

inline const char* dcls_version_name(DclsVersion v) {
    return v == DclsVersion::Gauss ? "gauss" : "bilinear";
}

inline DclsVersion dcls_version_from_name(const std::string& s) {
    if (s == "gauss") return DclsVersion::Gauss;
    if (s == "bilinear") return DclsVersion::Bilinear;
    throw std::invalid_argument("unknown dcls version: " + s);
}

// Learnable parameters of one DCLS site: per-channel element weights,
// continuous 2-D positions on the centered grid, and (gauss only) raw
// standard deviations. Effective sigma is sigma_min + |sig|.
template <typename T>
struct DclsParamsT {
    int channels = 0;        // C
    int kernel_count = 0;    // m
    int dilated_size = 0;    // S, odd
    DclsVersion version = DclsVersion::Gauss;
    T sigma_min = T(0.1);

    TensorT<T> weights;    // C x m
    TensorT<T> positions;  // 2 x C x m, axis 0 = {h, w}, domain [-(S-1)/2, (S-1)/2]
    TensorT<T> sigmas;     // 2 x C x m (raw, unconstrained); empty for bilinear

    std::string share_tag;  // non-empty when P/SIG are shared across layers

    T extent() const { return T(dilated_size - 1) / T(2); }

    void validate() const {
        if (dilated_size <= 0 || dilated_size % 2 == 0)
            throw std::invalid_argument("dcls: dilated kernel size must be odd");
        if (kernel_count <= 0) throw std::invalid_argument("dcls: kernel count must be >= 1");
        const std::size_t C = (std::size_t)channels, m = (std::size_t)kernel_count;
        if (weights.shape != Shape{C, m}) throw std::invalid_argument("dcls: weights shape");
        if (positions.shape != (Shape{2, C, m})) throw std::invalid_argument("dcls: positions shape");
        if (version == DclsVersion::Gauss && positions.shape != sigmas.shape)
            throw std::invalid_argument("dcls: sigmas shape");
    }
};

using DclsParams = DclsParamsT<float>;

template <typename T>
DclsParamsT<T> init_dcls(int channels, int kernel_count, int dilated_size,
                         DclsVersion version, std::mt19937& rng, T sigma_min = T(0.1)) {
    if (dilated_size <= 0 || dilated_size % 2 == 0)
        throw std::invalid_argument("dcls: dilated kernel size must be odd");
    if (kernel_count < 1) throw std::invalid_argument("dcls: kernel count must be >= 1");
    DclsParamsT<T> p;
    p.channels = channels;
    p.kernel_count = kernel_count;
    p.dilated_size = dilated_size;
    p.version = version;
    p.sigma_min = sigma_min;
    const std::size_t C = (std::size_t)channels, m = (std::size_t)kernel_count;
    p.weights = random_normal<T>({C, m}, T(0), T(0.02), rng);
    const T ext = p.extent();
    p.positions = random_uniform<T>({2, C, m}, -ext, ext, rng);
    if (version == DclsVersion::Gauss) {
        // raw value chosen so sigma_eff = S/4 at init
        const T raw = T(dilated_size) / T(4) - sigma_min;
        p.sigmas = TensorT<T>::full({2, C, m}, raw);
    }
    return p;
}

template <typename T>
void clamp_positions(DclsParamsT<T>& params) {
    const T ext = params.extent();
    for (T& v : params.positions.data) v = std::min(ext, std::max(-ext, v));
}

namespace detail {

// Per-axis bilinear fractions: indices into the 0..S-1 grid and the mass on
// the lower/upper neighbor. A neighbor outside the grid gets index -1 and its
// mass is dropped.
template <typename T>
struct BilinearAxis {
    int lo = -1, hi = -1;
    T w_lo = 0, w_hi = 0;
    T frac = 0;
};

template <typename T>
BilinearAxis<T> bilinear_axis(T pos, int S) {
    const T ext = T(S - 1) / T(2);
    const T u = pos + ext;  // 0 .. S-1 grid coordinate
    const T fl = std::floor(u);
    const int i0 = (int)fl;
    const T f = u - fl;
    BilinearAxis<T> a;
    a.frac = f;
    a.lo = (i0 >= 0 && i0 < S) ? i0 : -1;
    a.hi = (i0 + 1 >= 0 && i0 + 1 < S) ? i0 + 1 : -1;
    a.w_lo = T(1) - f;
    a.w_hi = f;
    return a;
}

}  // namespace detail

// Materialize the dense C x 1 x S x S kernel.
// gauss:    A_k(i,j) = g(i;p_h,s_h) g(j;p_w,s_w) / Z_k with Z_k the grid sum,
//           so the interpolation weights of each element sum to 1 exactly.
// bilinear: mass split over the <=4 integer neighbors; out-of-grid mass dropped.
template <typename T>
TensorT<T> construct_kernel(const DclsParamsT<T>& params) {
    params.validate();
    const int C = params.channels, m = params.kernel_count, S = params.dilated_size;
    TensorT<T> K({(std::size_t)C, 1, (std::size_t)S, (std::size_t)S});
    const T ext = params.extent();
    std::vector<T> gh(S), gw(S);
    for (int c = 0; c < C; ++c) {
        T* kc = &K.data[(std::size_t)c * S * S];
        for (int k = 0; k < m; ++k) {
            const T w = params.weights.at2(c, k);
            const T ph = params.positions.at3(0, c, k);
            const T pw = params.positions.at3(1, c, k);
            if (params.version == DclsVersion::Gauss) {
                const T sh = params.sigma_min + std::fabs(params.sigmas.at3(0, c, k));
                const T sw = params.sigma_min + std::fabs(params.sigmas.at3(1, c, k));
                T sum_h = 0, sum_w = 0;
                for (int i = 0; i < S; ++i) {
                    const T x = T(i) - ext;
                    gh[i] = std::exp(-(x - ph) * (x - ph) / (T(2) * sh * sh));
                    gw[i] = std::exp(-(x - pw) * (x - pw) / (T(2) * sw * sw));
                    sum_h += gh[i];
                    sum_w += gw[i];
                }
                const T inv_z = T(1) / (sum_h * sum_w);
                for (int i = 0; i < S; ++i)
                    for (int j = 0; j < S; ++j)
                        kc[i * S + j] += w * gh[i] * gw[j] * inv_z;
            } else {
                const auto ah = detail::bilinear_axis(ph, S);
                const auto aw = detail::bilinear_axis(pw, S);
                const int is[2] = {ah.lo, ah.hi};
                const T ws_h[2] = {ah.w_lo, ah.w_hi};
                const int js[2] = {aw.lo, aw.hi};
                const T ws_w[2] = {aw.w_lo, aw.w_hi};
                for (int a = 0; a < 2; ++a) {
                    if (is[a] < 0 || ws_h[a] == T(0)) continue;
                    for (int b = 0; b < 2; ++b) {
                        if (js[b] < 0 || ws_w[b] == T(0)) continue;
                        kc[is[a] * S + js[b]] += w * ws_h[a] * ws_w[b];
                    }
                }
            }
        }
    }
    ensure_finite(K, "construct_kernel");
    return K;
}

// Exact gradients of sum(grad_kernel . K) with respect to weights, positions
// and raw sigmas. For bilinear the position subgradient is 0 exactly on the
// integer lattice.
template <typename T>
void construct_kernel_vjp(const TensorT<T>& grad_kernel, const DclsParamsT<T>& params,
                          TensorT<T>& grad_w, TensorT<T>& grad_p, TensorT<T>& grad_sig) {
    params.validate();
    const int C = params.channels, m = params.kernel_count, S = params.dilated_size;
    if (grad_kernel.shape != (Shape{(std::size_t)C, 1, (std::size_t)S, (std::size_t)S}))
        throw std::invalid_argument("construct_kernel_vjp: grad_kernel shape");
    grad_w = TensorT<T>(params.weights.shape);
    grad_p = TensorT<T>(params.positions.shape);
    grad_sig = TensorT<T>(params.positions.shape);
    const T ext = params.extent();
    std::vector<T> gh(S), gw(S), dgh_dp(S), dgw_dp(S), dgh_ds(S), dgw_ds(S);
    for (int c = 0; c < C; ++c) {
        const T* gk = &grad_kernel.data[(std::size_t)c * S * S];
        for (int k = 0; k < m; ++k) {
            const T w = params.weights.at2(c, k);
            const T ph = params.positions.at3(0, c, k);
            const T pw = params.positions.at3(1, c, k);
            if (params.version == DclsVersion::Gauss) {
                const T raw_h = params.sigmas.at3(0, c, k);
                const T raw_w = params.sigmas.at3(1, c, k);
                const T sh = params.sigma_min + std::fabs(raw_h);
                const T sw = params.sigma_min + std::fabs(raw_w);
                T Zh = 0, Zw = 0, dZh_dp = 0, dZw_dp = 0, dZh_ds = 0, dZw_ds = 0;
                for (int i = 0; i < S; ++i) {
                    const T x = T(i) - ext;
                    const T dh = x - ph, dw_ = x - pw;
                    gh[i] = std::exp(-dh * dh / (T(2) * sh * sh));
                    gw[i] = std::exp(-dw_ * dw_ / (T(2) * sw * sw));
                    dgh_dp[i] = gh[i] * dh / (sh * sh);
                    dgw_dp[i] = gw[i] * dw_ / (sw * sw);
                    dgh_ds[i] = gh[i] * dh * dh / (sh * sh * sh);
                    dgw_ds[i] = gw[i] * dw_ * dw_ / (sw * sw * sw);
                    Zh += gh[i];
                    Zw += gw[i];
                    dZh_dp += dgh_dp[i];
                    dZw_dp += dgw_dp[i];
                    dZh_ds += dgh_ds[i];
                    dZw_ds += dgw_ds[i];
                }
                const T inv_z = T(1) / (Zh * Zw);
                // S_g   = sum_ij gk * gh_i gw_j,  plus the theta-weighted sums
                T s_g = 0, s_dph = 0, s_dpw = 0, s_dsh = 0, s_dsw = 0;
                for (int i = 0; i < S; ++i) {
                    T row_g = 0;
                    const T* gki = gk + i * S;
                    for (int j = 0; j < S; ++j) row_g += gki[j] * gw[j];
                    s_g += gh[i] * row_g;
                    s_dph += dgh_dp[i] * row_g;
                    s_dsh += dgh_ds[i] * row_g;
                }
                for (int j = 0; j < S; ++j) {
                    T col_g = 0;
                    for (int i = 0; i < S; ++i) col_g += gk[i * S + j] * gh[i];
                    s_dpw += dgw_dp[j] * col_g;
                    s_dsw += dgw_ds[j] * col_g;
                }
                grad_w.at2(c, k) = s_g * inv_z;
                // d/dtheta [ w * S_g / (Zh Zw) ] with the quotient term
                const T base = w * inv_z;
                grad_p.at3(0, c, k) = base * (s_dph - s_g * dZh_dp / Zh);
                grad_p.at3(1, c, k) = base * (s_dpw - s_g * dZw_dp / Zw);
                const T gs_h = base * (s_dsh - s_g * dZh_ds / Zh);
                const T gs_w = base * (s_dsw - s_g * dZw_ds / Zw);
                const T sign_h = raw_h > T(0) ? T(1) : (raw_h < T(0) ? T(-1) : T(0));
                const T sign_w = raw_w > T(0) ? T(1) : (raw_w < T(0) ? T(-1) : T(0));
                grad_sig.at3(0, c, k) = gs_h * sign_h;
                grad_sig.at3(1, c, k) = gs_w * sign_w;
            } else {
                const auto ah = detail::bilinear_axis(ph, S);
                const auto aw = detail::bilinear_axis(pw, S);
                const int is[2] = {ah.lo, ah.hi};
                const T ws_h[2] = {ah.w_lo, ah.w_hi};
                const T dws_h[2] = {T(-1), T(1)};
                const int js[2] = {aw.lo, aw.hi};
                const T ws_w[2] = {aw.w_lo, aw.w_hi};
                const T dws_w[2] = {T(-1), T(1)};
                T gw_acc = 0, gph = 0, gpw = 0;
                for (int a = 0; a < 2; ++a) {
                    if (is[a] < 0) continue;
                    for (int b = 0; b < 2; ++b) {
                        if (js[b] < 0) continue;
                        const T g = gk[is[a] * S + js[b]];
                        gw_acc += g * ws_h[a] * ws_w[b];
                        gph += g * dws_h[a] * ws_w[b];
                        gpw += g * ws_h[a] * dws_w[b];
                    }
                }
                grad_w.at2(c, k) = gw_acc;
                grad_p.at3(0, c, k) = ah.frac == T(0) ? T(0) : w * gph;
                grad_p.at3(1, c, k) = aw.frac == T(0) ? T(0) : w * gpw;
            }
        }
    }
}

}  // namespace dclsnet
