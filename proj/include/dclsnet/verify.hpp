#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dclsnet/dcls.hpp"
#include "dclsnet/gradcheck.hpp"
#include "dclsnet/model.hpp"
#include "dclsnet/ops.hpp"
#include "dclsnet/train.hpp"

namespace dclsnet::verify {

struct SuiteResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool pass() const { return max_rel_err < tolerance; }
};

namespace detail {

inline std::vector<double> flatten(const std::vector<const Tensor64*>& ts) {
    std::vector<double> out;
    for (const auto* t : ts) out.insert(out.end(), t->data.begin(), t->data.end());
    return out;
}

inline void unflatten(const std::vector<double>& x, std::vector<Tensor64*> ts) {
    std::size_t off = 0;
    for (auto* t : ts) {
        std::copy(x.begin() + (std::ptrdiff_t)off,
                  x.begin() + (std::ptrdiff_t)(off + t->numel()), t->data.begin());
        off += t->numel();
    }
}

inline double weighted_sum(const Tensor64& t, const Tensor64& coeff) {
    double s = 0;
    for (std::size_t i = 0; i < t.numel(); ++i) s += t.data[i] * coeff.data[i];
    return s;
}

}  // namespace detail

// All suites run in 64-bit over `seeds` random draws and report the worst
// relative error against central finite differences.

inline SuiteResult check_depthwise_conv(int seeds = 10) {
    SuiteResult r{"depthwise_conv2d"};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(100 + s);
        Tensor64 x = random_normal<double>({1, 2, 5, 5}, 0, 1, rng);
        Tensor64 k = random_normal<double>({2, 1, 3, 3}, 0, 1, rng);
        ConvGeometry g{3, 3, 1, 1, 1, 1, 2};
        Tensor64 coeff = random_normal<double>({1, 2, 5, 5}, 0, 1, rng);
        auto f = [&](const std::vector<double>& p) {
            Tensor64 xi = x, ki = k;
            detail::unflatten(p, {&xi, &ki});
            return detail::weighted_sum(ops::depthwise_conv2d(xi, ki, g), coeff);
        };
        Tensor64 gx, gk;
        ops::depthwise_conv2d_vjp(coeff, x, k, g, gx, gk);
        auto grad = detail::flatten({&gx, &gk});
        r.max_rel_err = std::max(r.max_rel_err,
                                 finite_diff_check(f, detail::flatten({&x, &k}), grad));
    }
    return r;
}

inline SuiteResult check_dense_conv(int seeds = 10) {
    SuiteResult r{"dense_conv2d"};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(200 + s);
        Tensor64 x = random_normal<double>({1, 2, 5, 6}, 0, 1, rng);
        Tensor64 k = random_normal<double>({3, 2, 2, 3}, 0, 1, rng);
        ConvGeometry g{2, 3, 2, 1, 0, 1, 1};
        Tensor64 y = ops::dense_conv2d(x, k, g);
        Tensor64 coeff = random_normal<double>(y.shape, 0, 1, rng);
        auto f = [&](const std::vector<double>& p) {
            Tensor64 xi = x, ki = k;
            detail::unflatten(p, {&xi, &ki});
            return detail::weighted_sum(ops::dense_conv2d(xi, ki, g), coeff);
        };
        Tensor64 gx, gk;
        ops::dense_conv2d_vjp(coeff, x, k, g, gx, gk);
        auto grad = detail::flatten({&gx, &gk});
        r.max_rel_err = std::max(r.max_rel_err,
                                 finite_diff_check(f, detail::flatten({&x, &k}), grad));
    }
    return r;
}

inline SuiteResult check_pointwise_linear(int seeds = 10) {
    SuiteResult r{"pointwise_linear"};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(300 + s);
        Tensor64 x = random_normal<double>({2, 3, 4}, 0, 1, rng);
        Tensor64 w = random_normal<double>({5, 4}, 0, 1, rng);
        Tensor64 b = random_normal<double>({5}, 0, 1, rng);
        Tensor64 coeff = random_normal<double>({2, 3, 5}, 0, 1, rng);
        auto f = [&](const std::vector<double>& p) {
            Tensor64 xi = x, wi = w, bi = b;
            detail::unflatten(p, {&xi, &wi, &bi});
            return detail::weighted_sum(ops::pointwise_linear(xi, wi, bi), coeff);
        };
        Tensor64 gx, gw, gb;
        ops::pointwise_linear_vjp(coeff, x, w, gx, gw, gb);
        auto grad = detail::flatten({&gx, &gw, &gb});
        r.max_rel_err = std::max(
            r.max_rel_err, finite_diff_check(f, detail::flatten({&x, &w, &b}), grad));
    }
    return r;
}

inline SuiteResult check_layer_norm(int seeds = 10) {
    SuiteResult r{"layer_norm"};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(400 + s);
        Tensor64 x = random_normal<double>({3, 6}, 0, 1, rng);
        Tensor64 g = random_normal<double>({6}, 1, 0.2, rng);
        Tensor64 b = random_normal<double>({6}, 0, 0.2, rng);
        Tensor64 coeff = random_normal<double>({3, 6}, 0, 1, rng);
        auto f = [&](const std::vector<double>& p) {
            Tensor64 xi = x, gi = g, bi = b;
            detail::unflatten(p, {&xi, &gi, &bi});
            return detail::weighted_sum(ops::layer_norm(xi, gi, bi), coeff);
        };
        Tensor64 gx, gg, gb;
        ops::layer_norm_vjp(coeff, x, g, gx, gg, gb);
        auto grad = detail::flatten({&gx, &gg, &gb});
        r.max_rel_err = std::max(
            r.max_rel_err, finite_diff_check(f, detail::flatten({&x, &g, &b}), grad));
    }
    return r;
}

inline SuiteResult check_gelu(int seeds = 10) {
    SuiteResult r{"gelu"};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(500 + s);
        Tensor64 x = random_normal<double>({17}, 0, 2, rng);
        Tensor64 coeff = random_normal<double>({17}, 0, 1, rng);
        auto f = [&](const std::vector<double>& p) {
            Tensor64 xi = x;
            detail::unflatten(p, {&xi});
            return detail::weighted_sum(ops::gelu(xi), coeff);
        };
        Tensor64 gx;
        ops::gelu_vjp(coeff, x, gx);
        r.max_rel_err = std::max(
            r.max_rel_err, finite_diff_check(f, x.data, gx.data));
    }
    return r;
}

inline SuiteResult check_global_avg_pool(int seeds = 10) {
    SuiteResult r{"global_avg_pool"};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(600 + s);
        Tensor64 x = random_normal<double>({2, 3, 4, 5}, 0, 1, rng);
        Tensor64 coeff = random_normal<double>({2, 3}, 0, 1, rng);
        auto f = [&](const std::vector<double>& p) {
            Tensor64 xi = x;
            detail::unflatten(p, {&xi});
            return detail::weighted_sum(ops::global_avg_pool(xi), coeff);
        };
        Tensor64 gx;
        ops::global_avg_pool_vjp(coeff, x.shape, gx);
        r.max_rel_err = std::max(r.max_rel_err, finite_diff_check(f, x.data, gx.data));
    }
    return r;
}

// keep positions away from the integer lattice (bilinear is non-smooth there)
// and away from the clamped boundary
inline void nudge_off_lattice(Tensor64& positions, double extent) {
    for (double& p : positions.data) {
        p = std::min(extent - 0.3, std::max(-extent + 0.3, p));
        const double frac = std::fabs(p - std::round(p));
        if (frac < 0.05 || frac > 0.95) p += 0.17;
    }
}

inline SuiteResult check_dcls_kernel(DclsVersion version, int seeds = 10) {
    SuiteResult r{std::string("dcls_kernel_") + dcls_version_name(version)};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(700 + s);
        auto params = init_dcls<double>(2, 3, 7, version, rng);
        nudge_off_lattice(params.positions, params.extent());
        Tensor64 coeff = random_normal<double>({2, 1, 7, 7}, 0, 1, rng);
        const bool gauss = version == DclsVersion::Gauss;
        auto f = [&](const std::vector<double>& p) {
            auto pi = params;
            if (gauss)
                detail::unflatten(p, {&pi.weights, &pi.positions, &pi.sigmas});
            else
                detail::unflatten(p, {&pi.weights, &pi.positions});
            return detail::weighted_sum(construct_kernel(pi), coeff);
        };
        Tensor64 gw, gp, gs;
        construct_kernel_vjp(coeff, params, gw, gp, gs);
        std::vector<double> x0, grad;
        if (gauss) {
            x0 = detail::flatten({&params.weights, &params.positions, &params.sigmas});
            grad = detail::flatten({&gw, &gp, &gs});
        } else {
            x0 = detail::flatten({&params.weights, &params.positions});
            grad = detail::flatten({&gw, &gp});
        }
        r.max_rel_err = std::max(r.max_rel_err, finite_diff_check(f, x0, grad));
    }
    return r;
}

// Full toy model (stem, one dsc or dcls block per stage, head), loss = BCE.
inline SuiteResult check_toy_model(ConvMethod method, DclsVersion version, int seeds = 10) {
    SuiteResult r{std::string("toy_model_") +
                  (method == ConvMethod::Dsc ? "dsc7" : dcls_version_name(version))};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(800 + s);
        ModelSpec spec = ModelSpec::toy(3, method);
        spec.dcls.size = 7;
        spec.dcls.count = 4;
        spec.dcls.version = version;
        auto model = build_model<double>(spec, rng);
        for (auto& p : model.params) {
            if (p.kind == ParamKind::Position)
                nudge_off_lattice(p.value, (spec.dcls.size - 1) / 2.0);
            // layer-scale init (1e-6) attenuates branch gradients toward the
            // finite-difference noise floor; check the VJP at O(1) values
            if (p.kind == ParamKind::LayerScale)
                p.value = random_uniform<double>(p.value.shape, 0.5, 1.5, rng);
        }

        Tensor64 input = random_normal<double>({2, 1, 8, 32}, 0, 1, rng);
        Tensor64 targets({2, 3});
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& t : targets.data) t = u(rng) < 0.5 ? 0.0 : 1.0;

        std::vector<Tensor64*> tensors;
        for (auto& p : model.params)
            if (p.active) tensors.push_back(&p.value);
        std::vector<const Tensor64*> ctensors(tensors.begin(), tensors.end());

        auto f = [&](const std::vector<double>& x) {
            detail::unflatten(x, tensors);
            std::mt19937 fwd_rng(0);
            Tensor64 logits = model.forward(input, RunMode::Eval, fwd_rng, nullptr);
            return (double)bce_multilabel(logits, targets);
        };
        const std::vector<double> x0 = detail::flatten(ctensors);

        model.zero_grads();
        ForwardCache<double> cache;
        std::mt19937 fwd_rng(0);
        Tensor64 logits = model.forward(input, RunMode::Eval, fwd_rng, &cache);
        Tensor64 grad_logits;
        bce_multilabel(logits, targets, &grad_logits);
        model.backward(cache, grad_logits);
        std::vector<const Tensor64*> gtensors;
        for (auto& p : model.params)
            if (p.active) gtensors.push_back(&p.grad);
        const std::vector<double> grad = detail::flatten(gtensors);

        r.max_rel_err = std::max(r.max_rel_err, finite_diff_check(f, x0, grad));
        detail::unflatten(x0, tensors);  // restore
    }
    return r;
}

inline std::vector<SuiteResult> run_all(int seeds = 10) {
    std::vector<SuiteResult> out;
    out.push_back(check_depthwise_conv(seeds));
    out.push_back(check_dense_conv(seeds));
    out.push_back(check_pointwise_linear(seeds));
    out.push_back(check_layer_norm(seeds));
    out.push_back(check_gelu(seeds));
    out.push_back(check_global_avg_pool(seeds));
    out.push_back(check_dcls_kernel(DclsVersion::Gauss, seeds));
    out.push_back(check_dcls_kernel(DclsVersion::Bilinear, seeds));
    out.push_back(check_toy_model(ConvMethod::Dsc, DclsVersion::Gauss, seeds));
    out.push_back(check_toy_model(ConvMethod::Dcls, DclsVersion::Gauss, seeds));
    out.push_back(check_toy_model(ConvMethod::Dcls, DclsVersion::Bilinear, seeds));
    return out;
}

}  // namespace dclsnet::verify
