#pragma once

#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dclsnet/dcls.hpp"
#include "dclsnet/ops.hpp"
#include "dclsnet/tensor.hpp"

namespace dclsnet {

enum class ConvMethod { Dsc, Dcls };

inline const char* conv_method_name(ConvMethod m) {
    return m == ConvMethod::Dsc ? "dsc" : "dcls";
}
inline ConvMethod conv_method_from_name(const std::string& s) {
    if (s == "dsc") return ConvMethod::Dsc;
    if (s == "dcls") return ConvMethod::Dcls;
    throw std::invalid_argument("unknown conv method: " + s);
}

struct StageSpec {
    int depth = 1;
    int channels = 8;
    int dw_kernel = 7;  // depthwise kernel extent when method == Dsc
    ConvMethod method = ConvMethod::Dsc;
};

struct DclsSettings {
    int size = 23;   // S, odd
    int count = 26;  // m
    DclsVersion version = DclsVersion::Gauss;
    float sigma_min = 0.1f;
};

struct ModelSpec {
    int in_channels = 1;
    ConvGeometry stem{2, 16, 2, 16, 0, 0, 1};  // kernel (2,16), stride (2,16), pad 0
    std::vector<StageSpec> stages;
    int num_classes = 527;
    float drop_path_rate = 0.0f;
    DclsSettings dcls;

    void validate() const {
        if (in_channels < 1) throw std::invalid_argument("spec: in_channels must be >= 1");
        if (num_classes < 1) throw std::invalid_argument("spec: num_classes must be >= 1");
        if (stages.empty()) throw std::invalid_argument("spec: at least one stage required");
        int prev = 0;
        for (const auto& s : stages) {
            if (s.depth < 1) throw std::invalid_argument("spec: stage depth must be >= 1");
            if (s.channels <= prev)
                throw std::invalid_argument("spec: stage channel counts must be strictly increasing");
            if (s.dw_kernel < 1 || s.dw_kernel % 2 == 0)
                throw std::invalid_argument("spec: depthwise kernel must be odd");
            prev = s.channels;
        }
        if (dcls.size % 2 == 0) throw std::invalid_argument("dilated kernel size must be odd");
        if (dcls.count < 1) throw std::invalid_argument("spec: dcls kernel count must be >= 1");
        if (drop_path_rate < 0 || drop_path_rate >= 1)
            throw std::invalid_argument("spec: drop_path_rate must be in [0, 1)");
        stem.validate();
    }

    std::string serialize() const;
    static ModelSpec parse(const std::map<std::string, std::string>& kv);
    static ModelSpec convnext_t_audio(ConvMethod method = ConvMethod::Dsc);
    static ModelSpec toy(int num_classes, ConvMethod method = ConvMethod::Dsc);
    static ModelSpec mini(int num_classes, ConvMethod method = ConvMethod::Dsc);
};

enum class ParamKind { ConvWeight, LinearWeight, Bias, NormGamma, NormBeta, LayerScale, DclsWeight, Position, Sigma };

// Weight decay is applied to conv/linear/DCLS element weights only.
inline bool param_decays(ParamKind k) {
    return k == ParamKind::ConvWeight || k == ParamKind::LinearWeight ||
           k == ParamKind::DclsWeight;
}

template <typename T>
struct Param {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
    ParamKind kind = ParamKind::ConvWeight;
    bool active = true;  // cleared when surgery removes a tensor
};

template <typename T>
struct BlockDef {
    ConvMethod method = ConvMethod::Dsc;
    int channels = 0;
    int dw_kernel = 7;
    int dw_weight = -1;  // dsc: C,1,K,K   dcls: C,m element weights
    int dw_bias = -1;
    int dcls_P = -1, dcls_SIG = -1;  // possibly shared across blocks
    int norm_gamma = -1, norm_beta = -1;
    int pw1_w = -1, pw1_b = -1;
    int pw2_w = -1, pw2_b = -1;
    int scale_gamma = -1;
    T drop_rate = 0;
};

template <typename T>
struct StageDef {
    // downsample in front of the stage (absent for stage 0)
    int ds_norm_gamma = -1, ds_norm_beta = -1, ds_conv_w = -1, ds_conv_b = -1;
    std::vector<BlockDef<T>> blocks;
};

enum class RunMode { Train, Eval };

template <typename T>
struct ForwardCache;

template <typename T>
struct ModelT {
    ModelSpec spec;
    std::vector<Param<T>> params;

    int stem_w = -1, stem_b = -1, stem_norm_g = -1, stem_norm_b = -1;
    std::vector<StageDef<T>> stages;
    int head_norm_g = -1, head_norm_b = -1, head_w = -1, head_b = -1;

    Param<T>& p(int id) { return params[(std::size_t)id]; }
    const Param<T>& p(int id) const { return params[(std::size_t)id]; }

    int add_param(std::string name, TensorT<T> value, ParamKind kind) {
        Param<T> pr;
        pr.name = std::move(name);
        pr.grad = TensorT<T>(value.shape);
        pr.value = std::move(value);
        pr.kind = kind;
        params.push_back(std::move(pr));
        return (int)params.size() - 1;
    }

    void zero_grads() {
        for (auto& pr : params) pr.grad.fill(T{0});
    }

    std::size_t count_params() const {
        std::size_t n = 0;
        for (const auto& pr : params)
            if (pr.active) n += pr.value.numel();
        return n;
    }

    std::vector<std::pair<std::string, std::size_t>> param_breakdown() const {
        std::vector<std::pair<std::string, std::size_t>> out;
        for (const auto& pr : params)
            if (pr.active) out.emplace_back(pr.name, pr.value.numel());
        return out;
    }

    DclsParamsT<T> dcls_view(const BlockDef<T>& b) const {
        DclsParamsT<T> dp;
        dp.channels = b.channels;
        dp.kernel_count = spec.dcls.count;
        dp.dilated_size = spec.dcls.size;
        dp.version = spec.dcls.version;
        dp.sigma_min = T(spec.dcls.sigma_min);
        dp.weights = p(b.dw_weight).value;
        dp.positions = p(b.dcls_P).value;
        if (dp.version == DclsVersion::Gauss) dp.sigmas = p(b.dcls_SIG).value;
        return dp;
    }

    TensorT<T> forward(const TensorT<T>& input, RunMode mode, std::mt19937& rng,
                       ForwardCache<T>* cache = nullptr) const;
    void backward(const ForwardCache<T>& cache, const TensorT<T>& grad_logits);
};

using Model = ModelT<float>;

template <typename T>
struct BlockCache {
    TensorT<T> x;        // block input, NCHW
    TensorT<T> dw_out;   // depthwise + bias, NHWC view
    TensorT<T> norm_out; // after layer_norm, NHWC
    TensorT<T> mlp_mid;  // pre-gelu, NHWC
    TensorT<T> act;      // post-gelu, NHWC
    TensorT<T> mlp_out;  // after projection, NHWC
    std::vector<T> keep; // per-sample drop-path scale (1/(1-p) or 0)
    TensorT<T> dense_kernel;  // materialized DCLS kernel (dcls blocks only)
};

template <typename T>
struct StageCache {
    TensorT<T> ds_in;       // NCHW input to downsample
    TensorT<T> ds_norm_out; // NCHW, conv input
    std::vector<BlockCache<T>> blocks;
};

template <typename T>
struct ForwardCache {
    TensorT<T> input;
    TensorT<T> stem_conv_out;  // NHWC (norm input)
    std::vector<StageCache<T>> stages;
    TensorT<T> trunk_out;   // NCHW before pooling
    TensorT<T> pooled;      // N,C (norm input)
    TensorT<T> head_norm_out;
};

namespace detail {

template <typename T>
void add_channel_bias_nchw(TensorT<T>& x, const TensorT<T>& bias) {
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            T* px = &x.data[(n * C + c) * HW];
            const T b = bias.data[c];
            for (std::size_t i = 0; i < HW; ++i) px[i] += b;
        }
}

// grad wrt a per-channel bias added in NCHW layout
template <typename T>
void channel_bias_grad_nchw(const TensorT<T>& grad_out, TensorT<T>& grad_bias) {
    const std::size_t N = grad_out.dim(0), C = grad_out.dim(1),
                      HW = grad_out.dim(2) * grad_out.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* g = &grad_out.data[(n * C + c) * HW];
            T acc = 0;
            for (std::size_t i = 0; i < HW; ++i) acc += g[i];
            grad_bias.data[c] += acc;
        }
}

}  // namespace detail

// ---- construction ----------------------------------------------------------

template <typename T>
ModelT<T> build_model(const ModelSpec& spec, std::mt19937& rng) {
    spec.validate();
    ModelT<T> m;
    m.spec = spec;
    const T init_std = T(0.02);

    const int c0 = spec.stages[0].channels;
    m.stem_w = m.add_param("stem.conv.weight",
                           random_normal<T>({(std::size_t)c0, (std::size_t)spec.in_channels,
                                             (std::size_t)spec.stem.kernel_h,
                                             (std::size_t)spec.stem.kernel_w},
                                            T(0), init_std, rng),
                           ParamKind::ConvWeight);
    m.stem_b = m.add_param("stem.conv.bias", TensorT<T>({(std::size_t)c0}), ParamKind::Bias);
    m.stem_norm_g = m.add_param("stem.norm.gamma", TensorT<T>::full({(std::size_t)c0}, T(1)),
                                ParamKind::NormGamma);
    m.stem_norm_b = m.add_param("stem.norm.beta", TensorT<T>({(std::size_t)c0}),
                                ParamKind::NormBeta);

    int total_blocks = 0;
    for (const auto& s : spec.stages) total_blocks += s.depth;
    int block_index = 0;
    int shared_channels = 0;
    int shared_P = -1, shared_SIG = -1;

    int prev_c = c0;
    for (std::size_t si = 0; si < spec.stages.size(); ++si) {
        const auto& ss = spec.stages[si];
        StageDef<T> stage;
        const std::string sp = "stages." + std::to_string(si) + ".";
        if (si > 0) {
            stage.ds_norm_gamma = m.add_param(sp + "downsample.norm.gamma",
                                              TensorT<T>::full({(std::size_t)prev_c}, T(1)),
                                              ParamKind::NormGamma);
            stage.ds_norm_beta = m.add_param(sp + "downsample.norm.beta",
                                             TensorT<T>({(std::size_t)prev_c}), ParamKind::NormBeta);
            stage.ds_conv_w = m.add_param(
                sp + "downsample.conv.weight",
                random_normal<T>({(std::size_t)ss.channels, (std::size_t)prev_c, 2, 2}, T(0),
                                 init_std, rng),
                ParamKind::ConvWeight);
            stage.ds_conv_b = m.add_param(sp + "downsample.conv.bias",
                                          TensorT<T>({(std::size_t)ss.channels}), ParamKind::Bias);
        }
        const std::size_t C = (std::size_t)ss.channels;
        for (int b = 0; b < ss.depth; ++b) {
            BlockDef<T> blk;
            blk.method = ss.method;
            blk.channels = ss.channels;
            blk.dw_kernel = ss.dw_kernel;
            blk.drop_rate = total_blocks > 1
                                ? T(spec.drop_path_rate) * T(block_index) / T(total_blocks - 1)
                                : T(0);
            const std::string bp = sp + "blocks." + std::to_string(b) + ".";
            if (ss.method == ConvMethod::Dsc) {
                blk.dw_weight = m.add_param(
                    bp + "dw.weight",
                    random_normal<T>({C, 1, (std::size_t)ss.dw_kernel, (std::size_t)ss.dw_kernel},
                                     T(0), init_std, rng),
                    ParamKind::ConvWeight);
            } else {
                auto dp = init_dcls<T>(ss.channels, spec.dcls.count, spec.dcls.size,
                                       spec.dcls.version, rng, T(spec.dcls.sigma_min));
                blk.dw_weight = m.add_param(bp + "dw.w", std::move(dp.weights),
                                            ParamKind::DclsWeight);
                if (ss.channels > shared_channels) {
                    shared_channels = ss.channels;
                    const std::string tag = "dcls.c" + std::to_string(ss.channels);
                    shared_P = m.add_param(tag + ".P", std::move(dp.positions), ParamKind::Position);
                    if (spec.dcls.version == DclsVersion::Gauss)
                        shared_SIG = m.add_param(tag + ".SIG", std::move(dp.sigmas), ParamKind::Sigma);
                    else
                        shared_SIG = -1;
                }
                blk.dcls_P = shared_P;
                blk.dcls_SIG = shared_SIG;
            }
            blk.dw_bias = m.add_param(bp + "dw.bias", TensorT<T>({C}), ParamKind::Bias);
            blk.norm_gamma = m.add_param(bp + "norm.gamma", TensorT<T>::full({C}, T(1)),
                                         ParamKind::NormGamma);
            blk.norm_beta = m.add_param(bp + "norm.beta", TensorT<T>({C}), ParamKind::NormBeta);
            blk.pw1_w = m.add_param(bp + "pw1.weight",
                                    random_normal<T>({4 * C, C}, T(0), init_std, rng),
                                    ParamKind::LinearWeight);
            blk.pw1_b = m.add_param(bp + "pw1.bias", TensorT<T>({4 * C}), ParamKind::Bias);
            blk.pw2_w = m.add_param(bp + "pw2.weight",
                                    random_normal<T>({C, 4 * C}, T(0), init_std, rng),
                                    ParamKind::LinearWeight);
            blk.pw2_b = m.add_param(bp + "pw2.bias", TensorT<T>({C}), ParamKind::Bias);
            blk.scale_gamma = m.add_param(bp + "scale.gamma", TensorT<T>::full({C}, T(1e-6)),
                                          ParamKind::LayerScale);
            stage.blocks.push_back(std::move(blk));
            ++block_index;
        }
        m.stages.push_back(std::move(stage));
        prev_c = ss.channels;
    }

    const std::size_t cl = (std::size_t)spec.stages.back().channels;
    m.head_norm_g = m.add_param("head.norm.gamma", TensorT<T>::full({cl}, T(1)),
                                ParamKind::NormGamma);
    m.head_norm_b = m.add_param("head.norm.beta", TensorT<T>({cl}), ParamKind::NormBeta);
    m.head_w = m.add_param("head.fc.weight",
                           random_normal<T>({(std::size_t)spec.num_classes, cl}, T(0), init_std, rng),
                           ParamKind::LinearWeight);
    m.head_b = m.add_param("head.fc.bias", TensorT<T>({(std::size_t)spec.num_classes}),
                           ParamKind::Bias);
    return m;
}

// ---- forward ---------------------------------------------------------------

template <typename T>
TensorT<T> ModelT<T>::forward(const TensorT<T>& input, RunMode mode, std::mt19937& rng,
                              ForwardCache<T>* cache) const {
    if (input.rank() != 4 || (int)input.dim(1) != spec.in_channels)
        throw std::invalid_argument("forward: expected N x " + std::to_string(spec.in_channels) +
                                    " x H x W input");
    const std::size_t N = input.dim(0);
    if (cache) cache->input = input;

    TensorT<T> x = ops::dense_conv2d(input, p(stem_w).value, spec.stem);
    detail::add_channel_bias_nchw(x, p(stem_b).value);
    {
        TensorT<T> t = ops::nchw_to_nhwc(x);
        if (cache) cache->stem_conv_out = t;
        t = ops::layer_norm(t, p(stem_norm_g).value, p(stem_norm_b).value);
        x = ops::nhwc_to_nchw(t);
    }

    if (cache) cache->stages.resize(stages.size());
    for (std::size_t si = 0; si < stages.size(); ++si) {
        const auto& stage = stages[si];
        StageCache<T>* sc = cache ? &cache->stages[si] : nullptr;
        if (stage.ds_conv_w >= 0) {
            if (sc) sc->ds_in = x;
            TensorT<T> t = ops::nchw_to_nhwc(x);
            t = ops::layer_norm(t, p(stage.ds_norm_gamma).value, p(stage.ds_norm_beta).value);
            x = ops::nhwc_to_nchw(t);
            if (sc) sc->ds_norm_out = x;
            ConvGeometry g{2, 2, 2, 2, 0, 0, 1};
            x = ops::dense_conv2d(x, p(stage.ds_conv_w).value, g);
            detail::add_channel_bias_nchw(x, p(stage.ds_conv_b).value);
        }
        if (sc) sc->blocks.resize(stage.blocks.size());
        for (std::size_t bi = 0; bi < stage.blocks.size(); ++bi) {
            const auto& blk = stage.blocks[bi];
            BlockCache<T>* bc = sc ? &sc->blocks[bi] : nullptr;
            if (bc) bc->x = x;

            TensorT<T> y;
            if (blk.method == ConvMethod::Dsc) {
                ConvGeometry g{blk.dw_kernel, blk.dw_kernel, 1, 1,
                               (blk.dw_kernel - 1) / 2, (blk.dw_kernel - 1) / 2, blk.channels};
                y = ops::depthwise_conv2d(x, p(blk.dw_weight).value, g);
            } else {
                TensorT<T> kernel = construct_kernel(dcls_view(blk));
                ConvGeometry g{spec.dcls.size, spec.dcls.size, 1, 1,
                               spec.dcls.size / 2, spec.dcls.size / 2, blk.channels};
                y = ops::depthwise_conv2d(x, kernel, g);
                if (bc) bc->dense_kernel = std::move(kernel);
            }
            detail::add_channel_bias_nchw(y, p(blk.dw_bias).value);

            TensorT<T> t = ops::nchw_to_nhwc(y);
            if (bc) bc->dw_out = t;
            TensorT<T> norm = ops::layer_norm(t, p(blk.norm_gamma).value, p(blk.norm_beta).value);
            if (bc) bc->norm_out = norm;
            TensorT<T> mid = ops::pointwise_linear(norm, p(blk.pw1_w).value, p(blk.pw1_b).value);
            if (bc) bc->mlp_mid = mid;
            TensorT<T> act = ops::gelu(mid);
            if (bc) bc->act = act;
            TensorT<T> proj = ops::pointwise_linear(act, p(blk.pw2_w).value, p(blk.pw2_b).value);
            if (bc) bc->mlp_out = proj;

            // per-channel layer scale on the trailing axis
            const std::size_t C = (std::size_t)blk.channels;
            const TensorT<T>& gamma = p(blk.scale_gamma).value;
            for (std::size_t i = 0; i < proj.numel(); ++i) proj.data[i] *= gamma.data[i % C];

            TensorT<T> branch = ops::nhwc_to_nchw(proj);

            std::vector<T> keep(N, T(1));
            if (mode == RunMode::Train && blk.drop_rate > T(0)) {
                std::uniform_real_distribution<double> u(0.0, 1.0);
                for (std::size_t n = 0; n < N; ++n)
                    keep[n] = u(rng) < (double)blk.drop_rate ? T(0)
                                                             : T(1) / (T(1) - blk.drop_rate);
            }
            if (bc) bc->keep = keep;
            const std::size_t CHW = branch.numel() / N;
            for (std::size_t n = 0; n < N; ++n) {
                const T k = keep[n];
                T* px = &x.data[n * CHW];
                const T* pb = &branch.data[n * CHW];
                for (std::size_t i = 0; i < CHW; ++i) px[i] += k * pb[i];
            }
        }
    }

    if (cache) cache->trunk_out = x;
    TensorT<T> pooled = ops::global_avg_pool(x);
    if (cache) cache->pooled = pooled;
    TensorT<T> normed = ops::layer_norm(pooled, p(head_norm_g).value, p(head_norm_b).value);
    if (cache) cache->head_norm_out = normed;
    TensorT<T> logits = ops::pointwise_linear(normed, p(head_w).value, p(head_b).value);
    ensure_finite(logits, "model forward");
    return logits;
}

// ---- backward ----------------------------------------------------------------

template <typename T>
void ModelT<T>::backward(const ForwardCache<T>& cache, const TensorT<T>& grad_logits) {
    TensorT<T> g;  // gradient flowing backwards, NCHW at trunk level
    {
        TensorT<T> g_norm, gw, gb;
        ops::pointwise_linear_vjp(grad_logits, cache.head_norm_out, p(head_w).value, g_norm, gw, gb);
        for (std::size_t i = 0; i < gw.numel(); ++i) p(head_w).grad.data[i] += gw.data[i];
        for (std::size_t i = 0; i < gb.numel(); ++i) p(head_b).grad.data[i] += gb.data[i];
        TensorT<T> g_pool, gg, gbeta;
        ops::layer_norm_vjp(g_norm, cache.pooled, p(head_norm_g).value, g_pool, gg, gbeta);
        for (std::size_t i = 0; i < gg.numel(); ++i) p(head_norm_g).grad.data[i] += gg.data[i];
        for (std::size_t i = 0; i < gbeta.numel(); ++i) p(head_norm_b).grad.data[i] += gbeta.data[i];
        ops::global_avg_pool_vjp(g_pool, cache.trunk_out.shape, g);
    }

    const std::size_t N = cache.input.dim(0);
    for (std::size_t si = stages.size(); si-- > 0;) {
        const auto& stage = stages[si];
        const auto& sc = cache.stages[si];
        for (std::size_t bi = stage.blocks.size(); bi-- > 0;) {
            const auto& blk = stage.blocks[bi];
            const auto& bc = sc.blocks[bi];
            const std::size_t C = (std::size_t)blk.channels;

            // residual: g splits into the identity path and the branch path
            TensorT<T> g_branch = g;
            const std::size_t CHW = g.numel() / N;
            for (std::size_t n = 0; n < N; ++n) {
                const T k = bc.keep[n];
                T* pb = &g_branch.data[n * CHW];
                for (std::size_t i = 0; i < CHW; ++i) pb[i] *= k;
            }

            TensorT<T> g_proj = ops::nchw_to_nhwc(g_branch);
            {
                // layer scale: grad gamma and scale the flowing grad
                const TensorT<T>& gamma = p(blk.scale_gamma).value;
                TensorT<T>& ggamma = p(blk.scale_gamma).grad;
                for (std::size_t i = 0; i < g_proj.numel(); ++i) {
                    ggamma.data[i % C] += g_proj.data[i] * bc.mlp_out.data[i];
                    g_proj.data[i] *= gamma.data[i % C];
                }
            }
            TensorT<T> g_act, gw2, gb2;
            ops::pointwise_linear_vjp(g_proj, bc.act, p(blk.pw2_w).value, g_act, gw2, gb2);
            for (std::size_t i = 0; i < gw2.numel(); ++i) p(blk.pw2_w).grad.data[i] += gw2.data[i];
            for (std::size_t i = 0; i < gb2.numel(); ++i) p(blk.pw2_b).grad.data[i] += gb2.data[i];

            TensorT<T> g_mid;
            ops::gelu_vjp(g_act, bc.mlp_mid, g_mid);

            TensorT<T> g_norm, gw1, gb1;
            ops::pointwise_linear_vjp(g_mid, bc.norm_out, p(blk.pw1_w).value, g_norm, gw1, gb1);
            for (std::size_t i = 0; i < gw1.numel(); ++i) p(blk.pw1_w).grad.data[i] += gw1.data[i];
            for (std::size_t i = 0; i < gb1.numel(); ++i) p(blk.pw1_b).grad.data[i] += gb1.data[i];

            TensorT<T> g_dw_nhwc, gng, gnb;
            ops::layer_norm_vjp(g_norm, bc.dw_out, p(blk.norm_gamma).value, g_dw_nhwc, gng, gnb);
            for (std::size_t i = 0; i < gng.numel(); ++i) p(blk.norm_gamma).grad.data[i] += gng.data[i];
            for (std::size_t i = 0; i < gnb.numel(); ++i) p(blk.norm_beta).grad.data[i] += gnb.data[i];

            TensorT<T> g_dw = ops::nhwc_to_nchw(g_dw_nhwc);
            detail::channel_bias_grad_nchw(g_dw, p(blk.dw_bias).grad);

            TensorT<T> g_in, g_kernel;
            if (blk.method == ConvMethod::Dsc) {
                ConvGeometry geom{blk.dw_kernel, blk.dw_kernel, 1, 1,
                                  (blk.dw_kernel - 1) / 2, (blk.dw_kernel - 1) / 2, blk.channels};
                ops::depthwise_conv2d_vjp(g_dw, bc.x, p(blk.dw_weight).value, geom, g_in, g_kernel);
                for (std::size_t i = 0; i < g_kernel.numel(); ++i)
                    p(blk.dw_weight).grad.data[i] += g_kernel.data[i];
            } else {
                ConvGeometry geom{spec.dcls.size, spec.dcls.size, 1, 1,
                                  spec.dcls.size / 2, spec.dcls.size / 2, blk.channels};
                ops::depthwise_conv2d_vjp(g_dw, bc.x, bc.dense_kernel, geom, g_in, g_kernel);
                TensorT<T> gw, gp, gsig;
                construct_kernel_vjp(g_kernel, dcls_view(blk), gw, gp, gsig);
                for (std::size_t i = 0; i < gw.numel(); ++i)
                    p(blk.dw_weight).grad.data[i] += gw.data[i];
                for (std::size_t i = 0; i < gp.numel(); ++i)
                    p(blk.dcls_P).grad.data[i] += gp.data[i];
                if (blk.dcls_SIG >= 0)
                    for (std::size_t i = 0; i < gsig.numel(); ++i)
                        p(blk.dcls_SIG).grad.data[i] += gsig.data[i];
            }
            // identity path plus branch path
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += g_in.data[i];
        }
        if (stage.ds_conv_w >= 0) {
            detail::channel_bias_grad_nchw(g, p(stage.ds_conv_b).grad);
            ConvGeometry geom{2, 2, 2, 2, 0, 0, 1};
            TensorT<T> g_norm_out, g_kernel;
            ops::dense_conv2d_vjp(g, sc.ds_norm_out, p(stage.ds_conv_w).value, geom, g_norm_out,
                                  g_kernel);
            for (std::size_t i = 0; i < g_kernel.numel(); ++i)
                p(stage.ds_conv_w).grad.data[i] += g_kernel.data[i];
            TensorT<T> g_nhwc = ops::nchw_to_nhwc(g_norm_out);
            TensorT<T> ds_in_nhwc = ops::nchw_to_nhwc(sc.ds_in);
            TensorT<T> g_in, gg, gb;
            ops::layer_norm_vjp(g_nhwc, ds_in_nhwc, p(stage.ds_norm_gamma).value, g_in, gg, gb);
            for (std::size_t i = 0; i < gg.numel(); ++i)
                p(stage.ds_norm_gamma).grad.data[i] += gg.data[i];
            for (std::size_t i = 0; i < gb.numel(); ++i)
                p(stage.ds_norm_beta).grad.data[i] += gb.data[i];
            g = ops::nhwc_to_nchw(g_in);
        }
    }

    {
        TensorT<T> g_conv_nhwc, gg, gb;
        ops::layer_norm_vjp(ops::nchw_to_nhwc(g), cache.stem_conv_out, p(stem_norm_g).value,
                            g_conv_nhwc, gg, gb);
        for (std::size_t i = 0; i < gg.numel(); ++i) p(stem_norm_g).grad.data[i] += gg.data[i];
        for (std::size_t i = 0; i < gb.numel(); ++i) p(stem_norm_b).grad.data[i] += gb.data[i];
        TensorT<T> g_conv = ops::nhwc_to_nchw(g_conv_nhwc);
        detail::channel_bias_grad_nchw(g_conv, p(stem_b).grad);
        TensorT<T> g_in, g_kernel;
        ops::dense_conv2d_vjp(g_conv, cache.input, p(stem_w).value, spec.stem, g_in, g_kernel);
        for (std::size_t i = 0; i < g_kernel.numel(); ++i)
            p(stem_w).grad.data[i] += g_kernel.data[i];
    }
}

// ---- surgery -----------------------------------------------------------------

struct SurgeryReport {
    int replaced = 0;
    int shared_groups = 0;
    std::size_t params_before = 0;
    std::size_t params_after = 0;
    std::vector<std::string> lines;
};

// Replace every 7x7 depthwise site by a DCLS layer, sharing P/SIG across
// consecutive layers of the same channel count (fresh parameters at each
// strictly larger channel count, in traversal order). Everything else is
// left bitwise untouched; depthwise biases are preserved.
template <typename T>
SurgeryReport surgery_replace_dsc_with_dcls(ModelT<T>& model, int dilated_size, int kernel_count,
                                            DclsVersion version, std::mt19937& rng,
                                            T sigma_min = T(0.1)) {
    if (dilated_size % 2 == 0)
        throw std::invalid_argument("dilated kernel size must be odd");
    if (kernel_count < 1) throw std::invalid_argument("dcls kernel count must be >= 1");
    SurgeryReport rep;
    rep.params_before = model.count_params();

    int shared_channels = 0;
    int shared_P = -1, shared_SIG = -1;
    for (std::size_t si = 0; si < model.stages.size(); ++si) {
        auto& stage = model.stages[si];
        bool stage_replaced = false;
        for (std::size_t bi = 0; bi < stage.blocks.size(); ++bi) {
            auto& blk = stage.blocks[bi];
            if (blk.method != ConvMethod::Dsc || blk.dw_kernel != 7) continue;
            auto dp = init_dcls<T>(blk.channels, kernel_count, dilated_size, version, rng,
                                   sigma_min);
            model.p(blk.dw_weight).active = false;
            const std::string bp =
                "stages." + std::to_string(si) + ".blocks." + std::to_string(bi) + ".";
            blk.dw_weight = model.add_param(bp + "dw.w", std::move(dp.weights),
                                            ParamKind::DclsWeight);
            if (blk.channels > shared_channels) {
                shared_channels = blk.channels;
                const std::string tag = "dcls.c" + std::to_string(blk.channels);
                shared_P = model.add_param(tag + ".P", std::move(dp.positions),
                                           ParamKind::Position);
                shared_SIG = version == DclsVersion::Gauss
                                 ? model.add_param(tag + ".SIG", std::move(dp.sigmas),
                                                   ParamKind::Sigma)
                                 : -1;
                ++rep.shared_groups;
            }
            blk.dcls_P = shared_P;
            blk.dcls_SIG = shared_SIG;
            blk.method = ConvMethod::Dcls;
            stage_replaced = true;
            ++rep.replaced;
            rep.lines.push_back(bp + "dw: 7x7 depthwise (" + std::to_string(blk.channels) +
                                " ch) -> dcls-" + dcls_version_name(version) + " S=" +
                                std::to_string(dilated_size) + " m=" + std::to_string(kernel_count) +
                                " share=dcls.c" + std::to_string(shared_channels));
        }
        if (stage_replaced) model.spec.stages[si].method = ConvMethod::Dcls;
    }
    if (rep.replaced > 0) {
        model.spec.dcls.size = dilated_size;
        model.spec.dcls.count = kernel_count;
        model.spec.dcls.version = version;
        model.spec.dcls.sigma_min = (float)sigma_min;
    }
    rep.params_after = model.count_params();
    return rep;
}

// ---- spec serialization --------------------------------------------------

inline std::string ModelSpec::serialize() const {
    std::ostringstream os;
    os << "in_channels: " << in_channels << "\n";
    os << "num_classes: " << num_classes << "\n";
    os << "stem_kernel: " << stem.kernel_h << "x" << stem.kernel_w << "\n";
    os << "stem_stride: " << stem.stride_h << "x" << stem.stride_w << "\n";
    os << "stem_pad: " << stem.pad_h << "x" << stem.pad_w << "\n";
    os << "stem_out: " << (stages.empty() ? 0 : stages[0].channels) << "\n";
    os << "drop_path: " << drop_path_rate << "\n";
    os << "dcls_size: " << dcls.size << "\n";
    os << "dcls_count: " << dcls.count << "\n";
    os << "dcls_version: " << dcls_version_name(dcls.version) << "\n";
    os << "dcls_sigma_min: " << dcls.sigma_min << "\n";
    os << "stages:";
    for (std::size_t i = 0; i < stages.size(); ++i) {
        os << (i ? "," : " ") << stages[i].depth << "x" << stages[i].channels << "x"
           << stages[i].dw_kernel << "x" << conv_method_name(stages[i].method);
    }
    os << "\n";
    return os.str();
}

namespace detail {
inline std::vector<int> parse_ints(const std::string& s, char sep) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) out.push_back(std::stoi(tok));
    return out;
}
}  // namespace detail

inline ModelSpec ModelSpec::parse(const std::map<std::string, std::string>& kv) {
    ModelSpec s;
    auto get = [&](const std::string& k) -> std::optional<std::string> {
        auto it = kv.find(k);
        if (it == kv.end()) return std::nullopt;
        return it->second;
    };
    if (auto v = get("in_channels")) s.in_channels = std::stoi(*v);
    if (auto v = get("num_classes")) s.num_classes = std::stoi(*v);
    if (auto v = get("stem_kernel")) {
        auto p = detail::parse_ints(*v, 'x');
        s.stem.kernel_h = p.at(0);
        s.stem.kernel_w = p.at(1);
    }
    if (auto v = get("stem_stride")) {
        auto p = detail::parse_ints(*v, 'x');
        s.stem.stride_h = p.at(0);
        s.stem.stride_w = p.at(1);
    }
    if (auto v = get("stem_pad")) {
        auto p = detail::parse_ints(*v, 'x');
        s.stem.pad_h = p.at(0);
        s.stem.pad_w = p.at(1);
    }
    if (auto v = get("drop_path")) s.drop_path_rate = std::stof(*v);
    if (auto v = get("dcls_size")) s.dcls.size = std::stoi(*v);
    if (auto v = get("dcls_count")) s.dcls.count = std::stoi(*v);
    if (auto v = get("dcls_version")) s.dcls.version = dcls_version_from_name(*v);
    if (auto v = get("dcls_sigma_min")) s.dcls.sigma_min = std::stof(*v);
    auto stv = get("stages");
    if (!stv) throw std::invalid_argument("spec: missing 'stages'");
    s.stages.clear();
    std::stringstream ss(*stv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        StageSpec st;
        std::stringstream fs(tok);
        std::string f;
        std::vector<std::string> fields;
        while (std::getline(fs, f, 'x')) fields.push_back(f);
        if (fields.size() < 2) throw std::invalid_argument("spec: bad stage entry '" + tok + "'");
        st.depth = std::stoi(fields[0]);
        st.channels = std::stoi(fields[1]);
        if (fields.size() > 2) st.dw_kernel = std::stoi(fields[2]);
        if (fields.size() > 3) st.method = conv_method_from_name(fields[3]);
        s.stages.push_back(st);
    }
    s.validate();
    return s;
}

inline ModelSpec ModelSpec::convnext_t_audio(ConvMethod method) {
    ModelSpec s;
    s.in_channels = 1;
    s.num_classes = 527;
    s.stem = ConvGeometry{2, 16, 2, 16, 0, 0, 1};
    s.stages = {{3, 96, 7, method}, {3, 192, 7, method}, {9, 384, 7, method}, {3, 768, 7, method}};
    s.drop_path_rate = 0.4f;
    return s;
}

inline ModelSpec ModelSpec::toy(int num_classes, ConvMethod method) {
    ModelSpec s;
    s.in_channels = 1;
    s.num_classes = num_classes;
    s.stem = ConvGeometry{2, 16, 2, 16, 0, 0, 1};
    s.stages = {{1, 8, 7, method}, {1, 16, 7, method}};
    s.drop_path_rate = 0.0f;
    return s;
}

// Desk-scale trainable preset. The coarse (16,16) frequency patching keeps
// the maps small enough (8 rows for 128 mel bands) that every output
// position's receptive field reaches a padded border, so global average
// pooling retains absolute-frequency information; with the (2,16) stem the
// trunk is frequency-translation invariant away from the edges and cannot
// separate classes whose only stable cue is where they sit on the mel axis.
inline ModelSpec ModelSpec::mini(int num_classes, ConvMethod method) {
    ModelSpec s;
    s.in_channels = 1;
    s.num_classes = num_classes;
    s.stem = ConvGeometry{16, 16, 16, 16, 0, 0, 1};
    s.stages = {{1, 32, 7, method}, {1, 64, 7, method}};
    s.drop_path_rate = 0.0f;
    return s;
}

}  // namespace dclsnet
