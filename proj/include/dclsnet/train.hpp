#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dclsnet/datasets.hpp"
#include "dclsnet/model.hpp"
#include "dclsnet/tensor.hpp"

namespace dclsnet {

enum class Optimizer { AdamW, Lamb };

struct TrainConfig {
    double base_lr = 4e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    int epochs = 60;
    int warmup_epochs = 20;
    int batch_size = 32;  // desk-scale stand-in for the headline 4096
    double mixup_alpha = 0.8;
    double label_smoothing = 0.1;
    Optimizer optimizer = Optimizer::AdamW;
    double pos_lr_mult = 1.0, sig_lr_mult = 1.0;

    // frontend / augmentation knobs for the loop
    double clip_seconds = 10.0;
    double norm_mean = -18.2696;  // log-mel standardization; match the corpus
    double norm_std = 30.5735;
    double roll_p = 1.0;
    double speed_p = 0.5;
    double erase_p = 0.25;

    unsigned seed = 0;
    double target_map = 0.0;  // early stop when eval mAP reaches this (0 = off)

    void validate() const {
        if (warmup_epochs > epochs) throw std::invalid_argument("config: warmup_epochs > epochs");
        if (base_lr <= 0 || batch_size < 1 || clip_seconds <= 0)
            throw std::invalid_argument("config: rates and sizes must be positive");
        if (norm_std <= 0) throw std::invalid_argument("config: norm_std must be positive");
    }
};

TrainConfig parse_train_config(const std::string& path);

// ---- losses & batch transforms -------------------------------------------

// Mean over N*C of the numerically stable logit-form BCE.
template <typename T>
T bce_multilabel(const TensorT<T>& logits, const TensorT<T>& targets,
                 TensorT<T>* grad_logits = nullptr) {
    if (logits.shape != targets.shape)
        throw std::invalid_argument("bce_multilabel: shape mismatch");
    const std::size_t n = logits.numel();
    if (grad_logits) *grad_logits = TensorT<T>(logits.shape);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T z = logits.data[i], t = targets.data[i];
        // max(z,0) - z*t + log(1 + exp(-|z|))
        loss += std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::fabs(z)));
        if (grad_logits) {
            const T sig = T(1) / (T(1) + std::exp(-z));
            grad_logits->data[i] = (sig - t) / (T)n;
        }
    }
    loss /= (T)n;
    if (!std::isfinite((double)loss)) throw std::runtime_error("bce_multilabel: non-finite loss");
    return loss;
}

// Symmetric smoothing for binary targets: t -> t(1-eps) + eps/2.
template <typename T>
TensorT<T> label_smooth(const TensorT<T>& targets, T eps) {
    TensorT<T> out(targets.shape);
    for (std::size_t i = 0; i < targets.numel(); ++i)
        out.data[i] = targets.data[i] * (T(1) - eps) + eps / T(2);
    return out;
}

double sample_beta(double alpha, std::mt19937& rng);

struct MixupResult {
    Tensor x;
    Tensor y;
    double lambda = 1.0;
};

// One Beta(alpha, alpha) coefficient per batch; each item is paired with a
// uniformly drawn partner. alpha <= 0 disables mixing.
MixupResult mixup(const Tensor& batch_x, const Tensor& batch_y, double alpha,
                  std::mt19937& rng);

// Stochastic depth on the leading (sample) axis.
template <typename T>
TensorT<T> drop_path(const TensorT<T>& x, T rate, RunMode mode, std::mt19937& rng) {
    if (rate < T(0) || rate >= T(1)) throw std::invalid_argument("drop_path: rate in [0,1)");
    if (mode == RunMode::Eval || rate == T(0)) return x;
    TensorT<T> out = x;
    const std::size_t N = x.dim(0);
    const std::size_t rest = x.numel() / N;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t n = 0; n < N; ++n) {
        const T scale = u(rng) < (double)rate ? T(0) : T(1) / (T(1) - rate);
        T* p = &out.data[n * rest];
        for (std::size_t i = 0; i < rest; ++i) p[i] *= scale;
    }
    return out;
}

// Linear warmup to base_lr, then half-cycle cosine decay to ~0.
inline double lr_at(long step, long total_steps, long warmup_steps, double base_lr) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * (double)step / (double)warmup_steps;
    if (total_steps <= warmup_steps) return base_lr;
    const double progress = (double)(step - warmup_steps) / (double)(total_steps - warmup_steps);
    return 0.5 * base_lr * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

// ---- optimizers ------------------------------------------------------------

struct OptimState {
    std::vector<std::vector<float>> m, v;  // one slot per model parameter
    long step = 0;
};

OptimState init_optim_state(const Model& model);

// Single-tensor AdamW update: bias-corrected moments, decoupled decay.
void adamw_update(std::vector<float>& w, const std::vector<float>& g, std::vector<float>& m,
                  std::vector<float>& v, long step, double lr, double beta1, double beta2,
                  double eps, double weight_decay);

// Single-tensor LAMB update: Adam direction plus decay, scaled by the trust
// ratio ||w|| / ||update||, with ratio 1 when either norm is 0.
void lamb_update(std::vector<float>& w, const std::vector<float>& g, std::vector<float>& m,
                 std::vector<float>& v, long step, double lr, double beta1, double beta2,
                 double eps, double weight_decay);

// Full model step: decay only on conv/linear/DCLS weights, per-group lr
// multipliers for positions and sigmas, and position clamping afterwards.
void optimizer_step(Model& model, OptimState& state, double lr, const TrainConfig& cfg);

void clamp_model_positions(Model& model);

// ---- training loop -----------------------------------------------------------

struct EpochRecord {
    int epoch;
    long step;
    double lr;
    double loss;
    double map;  // NaN when no eval set
};

struct TrainHistory {
    std::vector<EpochRecord> rows;
    void write_csv(const std::string& path) const;
};

double evaluate_map(Model& model, const Manifest& manifest, const TrainConfig& cfg);

TrainHistory train_loop(Model& model, const Manifest& train_set, const Manifest& eval_set,
                        const TrainConfig& cfg);

}  // namespace dclsnet
