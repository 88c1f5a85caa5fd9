#include "dclsnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "dclsnet/audio.hpp"
#include "dclsnet/metrics.hpp"

namespace dclsnet {

// ---- config ------------------------------------------------------------------

TrainConfig parse_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    TrainConfig cfg;
    std::string line;
    int row = 0;
    while (std::getline(f, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("malformed config line " + std::to_string(row) + ": " + line);
        std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 1);
        auto strip = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
        };
        strip(key);
        strip(value);
        if (key == "base_lr") cfg.base_lr = std::stod(value);
        else if (key == "beta1") cfg.beta1 = std::stod(value);
        else if (key == "beta2") cfg.beta2 = std::stod(value);
        else if (key == "eps") cfg.eps = std::stod(value);
        else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
        else if (key == "epochs") cfg.epochs = std::stoi(value);
        else if (key == "warmup_epochs") cfg.warmup_epochs = std::stoi(value);
        else if (key == "batch_size") cfg.batch_size = std::stoi(value);
        else if (key == "mixup_alpha") cfg.mixup_alpha = std::stod(value);
        else if (key == "label_smoothing") cfg.label_smoothing = std::stod(value);
        else if (key == "optimizer") {
            if (value == "adamw") cfg.optimizer = Optimizer::AdamW;
            else if (value == "lamb") cfg.optimizer = Optimizer::Lamb;
            else throw std::runtime_error("unknown optimizer: " + value);
        } else if (key == "pos_lr_mult") cfg.pos_lr_mult = std::stod(value);
        else if (key == "sig_lr_mult") cfg.sig_lr_mult = std::stod(value);
        else if (key == "clip_seconds") cfg.clip_seconds = std::stod(value);
        else if (key == "norm_mean") cfg.norm_mean = std::stod(value);
        else if (key == "norm_std") cfg.norm_std = std::stod(value);
        else if (key == "roll_p") cfg.roll_p = std::stod(value);
        else if (key == "speed_p") cfg.speed_p = std::stod(value);
        else if (key == "erase_p") cfg.erase_p = std::stod(value);
        else if (key == "seed") cfg.seed = (unsigned)std::stoul(value);
        else if (key == "target_map") cfg.target_map = std::stod(value);
        else throw std::runtime_error("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

// ---- batch transforms ----------------------------------------------------

double sample_beta(double alpha, std::mt19937& rng) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    const double a = gamma(rng);
    const double b = gamma(rng);
    if (a + b == 0.0) return 0.5;
    return a / (a + b);
}

MixupResult mixup(const Tensor& batch_x, const Tensor& batch_y, double alpha,
                  std::mt19937& rng) {
    MixupResult out;
    if (alpha <= 0.0) {
        out.x = batch_x;
        out.y = batch_y;
        out.lambda = 1.0;
        return out;
    }
    const std::size_t N = batch_x.dim(0);
    const double lam = sample_beta(alpha, rng);
    std::uniform_int_distribution<std::size_t> partner_dist(0, N - 1);
    std::vector<std::size_t> partner(N);
    for (std::size_t i = 0; i < N; ++i) partner[i] = partner_dist(rng);
    out.lambda = lam;
    out.x = Tensor(batch_x.shape);
    out.y = Tensor(batch_y.shape);
    const std::size_t xs = batch_x.numel() / N, ys = batch_y.numel() / N;
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t j = partner[i];
        for (std::size_t k = 0; k < xs; ++k)
            out.x.data[i * xs + k] = (float)(lam * batch_x.data[i * xs + k] +
                                             (1.0 - lam) * batch_x.data[j * xs + k]);
        for (std::size_t k = 0; k < ys; ++k)
            out.y.data[i * ys + k] = (float)(lam * batch_y.data[i * ys + k] +
                                             (1.0 - lam) * batch_y.data[j * ys + k]);
    }
    return out;
}

// ---- optimizers ------------------------------------------------------------

OptimState init_optim_state(const Model& model) {
    OptimState s;
    s.m.resize(model.params.size());
    s.v.resize(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        if (!model.params[i].active) continue;
        s.m[i].assign(model.params[i].value.numel(), 0.0f);
        s.v[i].assign(model.params[i].value.numel(), 0.0f);
    }
    return s;
}

void adamw_update(std::vector<float>& w, const std::vector<float>& g, std::vector<float>& m,
                  std::vector<float>& v, long step, double lr, double beta1, double beta2,
                  double eps, double weight_decay) {
    const double bc1 = 1.0 - std::pow(beta1, (double)step);
    const double bc2 = 1.0 - std::pow(beta2, (double)step);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = (float)(beta1 * m[i] + (1.0 - beta1) * gi);
        v[i] = (float)(beta2 * v[i] + (1.0 - beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double wi = w[i];
        wi -= lr * weight_decay * wi;  // decoupled decay
        wi -= lr * mhat / (std::sqrt(vhat) + eps);
        w[i] = (float)wi;
    }
}

void lamb_update(std::vector<float>& w, const std::vector<float>& g, std::vector<float>& m,
                 std::vector<float>& v, long step, double lr, double beta1, double beta2,
                 double eps, double weight_decay) {
    const double bc1 = 1.0 - std::pow(beta1, (double)step);
    const double bc2 = 1.0 - std::pow(beta2, (double)step);
    std::vector<double> update(w.size());
    double w_norm = 0.0, u_norm = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = (float)(beta1 * m[i] + (1.0 - beta1) * gi);
        v[i] = (float)(beta2 * v[i] + (1.0 - beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        update[i] = mhat / (std::sqrt(vhat) + eps) + weight_decay * (double)w[i];
        w_norm += (double)w[i] * (double)w[i];
        u_norm += update[i] * update[i];
    }
    w_norm = std::sqrt(w_norm);
    u_norm = std::sqrt(u_norm);
    const double trust = (w_norm == 0.0 || u_norm == 0.0) ? 1.0 : w_norm / u_norm;
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = (float)((double)w[i] - lr * trust * update[i]);
}

void optimizer_step(Model& model, OptimState& state, double lr, const TrainConfig& cfg) {
    ++state.step;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        auto& p = model.params[i];
        if (!p.active) continue;
        double plr = lr;
        if (p.kind == ParamKind::Position) plr *= cfg.pos_lr_mult;
        if (p.kind == ParamKind::Sigma) plr *= cfg.sig_lr_mult;
        const double wd = param_decays(p.kind) ? cfg.weight_decay : 0.0;
        if (cfg.optimizer == Optimizer::AdamW)
            adamw_update(p.value.data, p.grad.data, state.m[i], state.v[i], state.step, plr,
                         cfg.beta1, cfg.beta2, cfg.eps, wd);
        else
            lamb_update(p.value.data, p.grad.data, state.m[i], state.v[i], state.step, plr,
                        cfg.beta1, cfg.beta2, cfg.eps, wd);
    }
    clamp_model_positions(model);
}

void clamp_model_positions(Model& model) {
    const float ext = (float)(model.spec.dcls.size - 1) / 2.0f;
    for (auto& p : model.params) {
        if (!p.active || p.kind != ParamKind::Position) continue;
        for (float& v : p.value.data) v = std::min(ext, std::max(-ext, v));
    }
}

// ---- training loop -----------------------------------------------------------

namespace {

FrontendConfig frontend_for(const TrainConfig& cfg) {
    FrontendConfig fe;
    fe.norm_mean = cfg.norm_mean;
    fe.norm_std = cfg.norm_std;
    return fe;
}

Tensor clip_to_spectrogram(const ManifestEntry& entry, const TrainConfig& cfg,
                           const FrontendConfig& fe, bool training, std::mt19937& rng) {
    AudioClip clip = load_wav(entry.path, fe.sample_rate, false);
    if (training && cfg.roll_p > 0.0) {
        std::uniform_real_distribution<double> gate(0.0, 1.0);
        if (gate(rng) < cfg.roll_p) clip = augment_random_roll(clip, rng);
    }
    if (training && cfg.speed_p > 0.0) {
        SpeedConfig sp;
        sp.prob = cfg.speed_p;
        clip = augment_speed(clip, rng, sp);
    }
    clip = pad_or_truncate(clip, (std::size_t)std::llround(cfg.clip_seconds * fe.sample_rate));
    Tensor spec = logmel(clip, fe);
    if (training && cfg.erase_p > 0.0) {
        EraseConfig er;
        er.prob = cfg.erase_p;
        spec = augment_erase(spec, rng, er);
    }
    return spec;
}

struct SpectrogramCache {
    bool enabled = false;
    std::vector<std::optional<Tensor>> slots;
};

Tensor batch_inputs(const Manifest& set, const std::vector<std::size_t>& indices,
                    const TrainConfig& cfg, const FrontendConfig& fe, bool training,
                    unsigned epoch, SpectrogramCache* cache) {
    Tensor batch;
    for (std::size_t bi = 0; bi < indices.size(); ++bi) {
        const std::size_t idx = indices[bi];
        Tensor spec;
        if (cache && cache->enabled && cache->slots[idx]) {
            spec = *cache->slots[idx];
        } else {
            // one RNG stream per (seed, epoch, clip index): reproducible
            // independently of worker count or batch order
            std::seed_seq seq{cfg.seed, epoch, (unsigned)idx};
            std::mt19937 rng(seq);
            spec = clip_to_spectrogram(set.entries[idx], cfg, fe, training, rng);
            if (cache && cache->enabled) cache->slots[idx] = spec;
        }
        if (bi == 0)
            batch = Tensor({indices.size(), 1, spec.dim(1), spec.dim(2)});
        else if (spec.dim(1) != batch.dim(2) || spec.dim(2) != batch.dim(3))
            throw std::runtime_error("inconsistent spectrogram shapes inside a batch");
        std::copy(spec.data.begin(), spec.data.end(),
                  batch.data.begin() + (std::ptrdiff_t)(bi * spec.numel()));
    }
    return batch;
}

Tensor batch_targets(const Manifest& set, const std::vector<std::size_t>& indices) {
    const std::size_t C = set.vocabulary.size();
    Tensor y({indices.size(), C});
    for (std::size_t bi = 0; bi < indices.size(); ++bi)
        for (int l : set.entries[indices[bi]].labels) y.at2(bi, (std::size_t)l) = 1.0f;
    return y;
}

}  // namespace

double evaluate_map(Model& model, const Manifest& manifest, const TrainConfig& cfg) {
    if (manifest.entries.empty()) throw std::invalid_argument("evaluate_map: empty manifest");
    const FrontendConfig fe = frontend_for(cfg);
    const std::size_t N = manifest.entries.size(), C = manifest.vocabulary.size();
    EvalBuffer buf;
    buf.scores = Tensor({N, C});
    buf.labels = Tensor({N, C});
    std::mt19937 rng(cfg.seed);
    std::vector<std::size_t> indices;
    for (std::size_t start = 0; start < N; start += (std::size_t)cfg.batch_size) {
        indices.clear();
        for (std::size_t i = start; i < std::min(N, start + (std::size_t)cfg.batch_size); ++i)
            indices.push_back(i);
        Tensor x = batch_inputs(manifest, indices, cfg, fe, false, 0, nullptr);
        Tensor logits = model.forward(x, RunMode::Eval, rng, nullptr);
        for (std::size_t bi = 0; bi < indices.size(); ++bi)
            for (std::size_t c = 0; c < C; ++c)
                buf.scores.at2(indices[bi], c) =
                    1.0f / (1.0f + std::exp(-logits.at2(bi, c)));
    }
    for (std::size_t i = 0; i < N; ++i)
        for (int l : manifest.entries[i].labels) buf.labels.at2(i, (std::size_t)l) = 1.0f;
    return mean_average_precision(buf);
}

TrainHistory train_loop(Model& model, const Manifest& train_set, const Manifest& eval_set,
                        const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.entries.empty()) throw std::runtime_error("train_loop: empty dataset");
    const FrontendConfig fe = frontend_for(cfg);
    TrainHistory hist;
    if (cfg.epochs == 0) return hist;

    const std::size_t N = train_set.entries.size();
    const long steps_per_epoch = (long)((N + cfg.batch_size - 1) / (std::size_t)cfg.batch_size);
    const long total_steps = steps_per_epoch * cfg.epochs;
    const long warmup_steps = steps_per_epoch * cfg.warmup_epochs;

    OptimState optim = init_optim_state(model);
    std::mt19937 loop_rng(cfg.seed);
    SpectrogramCache cache;
    cache.enabled = cfg.roll_p == 0.0 && cfg.speed_p == 0.0 && cfg.erase_p == 0.0;
    cache.slots.resize(N);

    long step = 0;
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), loop_rng);
        double epoch_loss = 0.0;
        long epoch_batches = 0;
        double last_lr = 0.0;
        for (std::size_t start = 0; start < N; start += (std::size_t)cfg.batch_size) {
            std::vector<std::size_t> indices(
                order.begin() + (std::ptrdiff_t)start,
                order.begin() + (std::ptrdiff_t)std::min(N, start + (std::size_t)cfg.batch_size));
            Tensor x = batch_inputs(train_set, indices, cfg, fe, true, (unsigned)epoch, &cache);
            Tensor y = batch_targets(train_set, indices);
            MixupResult mixed = mixup(x, y, cfg.mixup_alpha, loop_rng);
            Tensor targets = label_smooth(mixed.y, (float)cfg.label_smoothing);

            model.zero_grads();
            ForwardCache<float> fc;
            Tensor logits = model.forward(mixed.x, RunMode::Train, loop_rng, &fc);
            Tensor grad_logits;
            float loss;
            try {
                loss = bce_multilabel(logits, targets, &grad_logits);
            } catch (const std::runtime_error&) {
                throw std::runtime_error("train_loop: non-finite loss at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step));
            }
            model.backward(fc, grad_logits);

            last_lr = lr_at(step, total_steps, warmup_steps, cfg.base_lr);
            optimizer_step(model, optim, last_lr, cfg);
            epoch_loss += loss;
            ++epoch_batches;
            ++step;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.step = step;
        rec.lr = last_lr;
        rec.loss = epoch_loss / (double)epoch_batches;
        rec.map = eval_set.entries.empty() ? std::nan("") : evaluate_map(model, eval_set, cfg);
        hist.rows.push_back(rec);
        if (cfg.target_map > 0.0 && !std::isnan(rec.map) && rec.map >= cfg.target_map) break;
    }
    return hist;
}

void TrainHistory::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write history: " + path);
    f << "epoch,step,lr,loss,map\n";
    for (const auto& r : rows) {
        f << r.epoch << "," << r.step << ",";
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,", r.lr, r.loss);
        f << buf;
        if (!std::isnan(r.map)) {
            std::snprintf(buf, sizeof(buf), "%.9g", r.map);
            f << buf;
        }
        f << "\n";
    }
}

}  // namespace dclsnet
