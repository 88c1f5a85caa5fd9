#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "dclsnet/audio.hpp"
#include "dclsnet/checkpoint.hpp"
#include "dclsnet/datasets.hpp"
#include "dclsnet/metrics.hpp"
#include "dclsnet/model.hpp"
#include "dclsnet/train.hpp"
#include "dclsnet/verify.hpp"

namespace {

using namespace dclsnet;

ModelSpec spec_from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open spec file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("malformed spec line: " + line);
        std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 1);
        value.erase(0, value.find_first_not_of(" \t"));
        kv[key] = value;
    }
    return ModelSpec::parse(kv);
}

ModelSpec resolve_spec(const std::string& arch, const std::string& spec_path,
                       const std::string& conv) {
    const ConvMethod method = conv_method_from_name(conv);
    ModelSpec spec;
    if (!spec_path.empty()) {
        spec = spec_from_file(spec_path);
        if (method == ConvMethod::Dcls)
            for (auto& st : spec.stages) st.method = ConvMethod::Dcls;
    } else if (arch == "convnext-t") {
        spec = ModelSpec::convnext_t_audio(method);
    } else if (arch == "toy") {
        spec = ModelSpec::toy(8, method);
        spec.drop_path_rate = 0.05f;
    } else if (arch == "mini") {
        spec = ModelSpec::mini(8, method);
    } else {
        throw std::runtime_error("unknown arch: " + arch + " (want convnext-t, mini, or toy)");
    }
    return spec;
}

int cmd_spectrogram(const std::string& in, const std::string& out, bool resample) {
    FrontendConfig fe;
    AudioClip clip = load_wav(in, fe.sample_rate, resample);
    Tensor spec = logmel(clip, fe);
    if (!out.empty()) save_array_container(out, {{"spectrogram", spec}});
    std::printf("%s\n", shape_to_string(spec.shape).c_str());
    return 0;
}

int cmd_gen_data(const std::string& out_dir, int clips, int classes, double seconds,
                 unsigned seed) {
    SyntheticConfig cfg;
    cfg.n_clips = clips;
    cfg.n_classes = classes;
    cfg.seconds = seconds;
    cfg.seed = seed;
    Manifest m = gen_synthetic(out_dir, cfg);
    std::printf("wrote %zu clips, %zu classes -> %s/manifest.csv\n", m.entries.size(),
                m.vocabulary.size(), out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& train_manifest, const std::string& labels,
              const std::string& eval_manifest, const std::string& arch,
              const std::string& spec_path, const std::string& conv,
              const std::string& config_path, const std::string& init_ckpt,
              const std::string& out_ckpt, const std::string& history_path,
              const std::map<std::string, double>& overrides, unsigned seed) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = parse_train_config(config_path);
    cfg.seed = seed;
    for (const auto& [k, v] : overrides) {
        if (k == "epochs") cfg.epochs = (int)v;
        else if (k == "warmup_epochs") cfg.warmup_epochs = (int)v;
        else if (k == "batch_size") cfg.batch_size = (int)v;
        else if (k == "lr") cfg.base_lr = v;
        else if (k == "mixup") cfg.mixup_alpha = v;
        else if (k == "clip_seconds") cfg.clip_seconds = v;
        else if (k == "norm_mean") cfg.norm_mean = v;
        else if (k == "norm_std") cfg.norm_std = v;
        else if (k == "pos_lr_mult") cfg.pos_lr_mult = v;
        else if (k == "sig_lr_mult") cfg.sig_lr_mult = v;
        else if (k == "roll_p") cfg.roll_p = v;
        else if (k == "speed_p") cfg.speed_p = v;
        else if (k == "erase_p") cfg.erase_p = v;
        else if (k == "target_map") cfg.target_map = v;
    }
    cfg.validate();

    Manifest train_set = load_manifest(train_manifest, labels);
    Manifest eval_set;
    if (!eval_manifest.empty()) eval_set = load_manifest(eval_manifest, labels);

    Model model;
    if (!init_ckpt.empty()) {
        model = load_checkpoint(init_ckpt);
    } else {
        ModelSpec spec = resolve_spec(arch, spec_path, conv);
        spec.num_classes = (int)train_set.vocabulary.size();
        std::mt19937 rng(cfg.seed);
        model = build_model<float>(spec, rng);
    }
    if ((std::size_t)model.spec.num_classes != train_set.vocabulary.size())
        throw std::runtime_error("model classes disagree with labels vocabulary");

    TrainHistory hist = train_loop(model, train_set, eval_set, cfg);
    if (!history_path.empty()) hist.write_csv(history_path);
    if (!out_ckpt.empty()) save_checkpoint(model, out_ckpt);
    if (!hist.rows.empty()) {
        const auto& last = hist.rows.back();
        std::printf("epochs=%d final_loss=%.6f", last.epoch + 1, last.loss);
        if (!std::isnan(last.map)) std::printf(" eval_map=%.4f", last.map);
        std::printf("\n");
    } else {
        std::printf("epochs=0 (initial checkpoint written, empty history)\n");
    }
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path,
             const std::string& labels, const std::string& report_path, int batch_size,
             double clip_seconds, double norm_mean, double norm_std) {
    Model model = load_checkpoint(ckpt);
    Manifest manifest = load_manifest(manifest_path, labels);
    TrainConfig cfg;
    cfg.batch_size = batch_size;
    cfg.clip_seconds = clip_seconds;
    FrontendConfig fe;
    fe.norm_mean = norm_mean;
    fe.norm_std = norm_std;
    const std::size_t N = manifest.entries.size(), C = manifest.vocabulary.size();
    EvalBuffer buf;
    buf.scores = Tensor({N, C});
    buf.labels = Tensor({N, C});
    std::mt19937 rng(0);
    for (std::size_t start = 0; start < N; start += (std::size_t)batch_size) {
        const std::size_t stop = std::min(N, start + (std::size_t)batch_size);
        Tensor batch;
        for (std::size_t i = start; i < stop; ++i) {
            AudioClip clip = load_wav(manifest.entries[i].path, fe.sample_rate, false);
            clip = pad_or_truncate(clip,
                                   (std::size_t)std::llround(clip_seconds * fe.sample_rate));
            Tensor spec = logmel(clip, fe);
            if (i == start) batch = Tensor({stop - start, 1, spec.dim(1), spec.dim(2)});
            std::copy(spec.data.begin(), spec.data.end(),
                      batch.data.begin() + (std::ptrdiff_t)((i - start) * spec.numel()));
        }
        Tensor logits = model.forward(batch, RunMode::Eval, rng, nullptr);
        for (std::size_t i = start; i < stop; ++i)
            for (std::size_t c = 0; c < C; ++c)
                buf.scores.at2(i, c) = 1.0f / (1.0f + std::exp(-logits.at2(i - start, c)));
    }
    for (std::size_t i = 0; i < N; ++i)
        for (int l : manifest.entries[i].labels) buf.labels.at2(i, (std::size_t)l) = 1.0f;
    const double map = mean_average_precision(buf);
    if (!report_path.empty())
        write_eval_report(report_path, per_class_report(buf, manifest.vocabulary), map);
    std::printf("mAP %.6f over %zu clips, %zu classes\n", map, N, C);
    return 0;
}

int cmd_surgery(const std::string& in, const std::string& out, int size, int count,
                const std::string& version, unsigned seed) {
    Model model = load_checkpoint(in);
    std::mt19937 rng(seed);
    SurgeryReport rep = surgery_replace_dsc_with_dcls(model, size, count,
                                                      dcls_version_from_name(version), rng);
    for (const auto& l : rep.lines) std::printf("%s\n", l.c_str());
    std::printf("%d replacements, %d shared position groups\n", rep.replaced, rep.shared_groups);
    std::printf("params: %zu -> %zu (delta %lld)\n", rep.params_before, rep.params_after,
                (long long)rep.params_after - (long long)rep.params_before);
    save_checkpoint(model, out);
    return 0;
}

int cmd_gradcheck(int seeds) {
    auto results = verify::run_all(seeds);
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-24s max rel err %.3e (tol %.0e): %s\n", r.name.c_str(), r.max_rel_err,
                    r.tolerance, r.pass() ? "PASS" : "FAIL");
        ok = ok && r.pass();
    }
    std::printf("gradcheck: max rel err < 1e-4: %s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : 3;
}

int cmd_paramcount(const std::string& arch, const std::string& spec_path,
                   const std::string& conv, const std::string& ckpt, bool breakdown) {
    Model model;
    if (!ckpt.empty()) {
        model = load_checkpoint(ckpt);
    } else {
        ModelSpec spec = resolve_spec(arch, spec_path, conv);
        std::mt19937 rng(0);
        model = build_model<float>(spec, rng);
    }
    if (breakdown)
        for (const auto& [name, n] : model.param_breakdown())
            std::printf("%-48s %10zu\n", name.c_str(), n);
    const std::size_t total = model.count_params();
    std::printf("total parameters: %zu (%.2f M)\n", total, (double)total / 1e6);
    return 0;
}

double measure_throughput(Model& model, int batch, int warmup, int iters, unsigned seed,
                          std::size_t in_h, std::size_t in_w) {
    std::mt19937 rng(seed);
    Tensor input = random_normal<float>({(std::size_t)batch, 1, in_h, in_w}, 0.0f, 1.0f, rng);
    for (int i = 0; i < warmup; ++i) model.forward(input, RunMode::Eval, rng, nullptr);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) model.forward(input, RunMode::Eval, rng, nullptr);
    const auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    return (double)batch * iters / sec;
}

int cmd_bench(const std::string& arch, const std::string& spec_path, int batch, int warmup,
              int iters, int in_h, int in_w, unsigned seed) {
    ModelSpec base_spec = resolve_spec(arch, spec_path, "dsc");
    std::mt19937 rng(seed);
    Model baseline = build_model<float>(base_spec, rng);
    Model dcls = baseline;
    std::mt19937 rng2(seed + 1);
    surgery_replace_dsc_with_dcls(dcls, base_spec.dcls.size, base_spec.dcls.count,
                                  base_spec.dcls.version, rng2);
    const double tp_base = measure_throughput(baseline, batch, warmup, iters, seed,
                                              (std::size_t)in_h, (std::size_t)in_w);
    const double tp_dcls = measure_throughput(dcls, batch, warmup, iters, seed,
                                              (std::size_t)in_h, (std::size_t)in_w);
    std::printf("baseline dsc7:   %.2f samples/s\n", tp_base);
    std::printf("dcls-%s:      %.2f samples/s\n", dcls_version_name(base_spec.dcls.version),
                tp_dcls);
    std::printf("throughput ratio (dcls/baseline): %.4f\n", tp_dcls / tp_base);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DCLS audio-tagging workbench"};
    app.require_subcommand(1);
    unsigned seed = 0;
    int threads = 1;
    app.add_option("--seed", seed, "global RNG seed");
    app.add_option("--threads", threads, "worker-thread cap (compute is single-threaded)")
        ->check(CLI::PositiveNumber);

    // spectrogram
    auto* sp = app.add_subcommand("spectrogram", "compute a normalized log-mel spectrogram");
    std::string sp_in, sp_out;
    bool sp_resample = false;
    sp->add_option("--in", sp_in, "input wav file")->required();
    sp->add_option("--out", sp_out, "output array container");
    sp->add_flag("--resample", sp_resample, "linearly resample to 32 kHz when needed");

    // gen-data
    auto* gd = app.add_subcommand("gen-data", "generate a synthetic tagging dataset");
    std::string gd_out;
    int gd_clips = 2048, gd_classes = 8;
    double gd_seconds = 1.0;
    gd->add_option("--out", gd_out, "output directory")->required();
    gd->add_option("--clips", gd_clips, "number of clips");
    gd->add_option("--classes", gd_classes, "number of classes (<= 16)");
    gd->add_option("--seconds", gd_seconds, "clip length in seconds");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_manifest, tr_labels, tr_eval, tr_arch = "toy", tr_spec, tr_conv = "dsc";
    std::string tr_config, tr_init, tr_out, tr_history;
    std::map<std::string, double> tr_over;
    tr->add_option("--train-manifest", tr_manifest, "training manifest CSV")->required();
    tr->add_option("--labels", tr_labels, "labels vocabulary file")->required();
    tr->add_option("--eval-manifest", tr_eval, "evaluation manifest CSV");
    tr->add_option("--arch", tr_arch, "architecture preset: convnext-t, mini, or toy");
    tr->add_option("--spec", tr_spec, "model spec file (overrides --arch)");
    tr->add_option("--conv", tr_conv, "depthwise conv method: dsc or dcls");
    tr->add_option("--config", tr_config, "training config file");
    tr->add_option("--init", tr_init, "initial checkpoint (resume or post-surgery)");
    tr->add_option("--out", tr_out, "output checkpoint path");
    tr->add_option("--history", tr_history, "history CSV path");
    double tr_epochs = -1, tr_warmup = -1, tr_batch = -1, tr_lr = -1, tr_mixup = -1,
           tr_clipsec = -1, tr_roll = -1, tr_speed = -1, tr_erase = -1, tr_target = -1,
           tr_norm_mean = std::nan(""), tr_norm_std = -1, tr_posmult = -1, tr_sigmult = -1;
    tr->add_option("--epochs", tr_epochs, "epoch count override");
    tr->add_option("--warmup-epochs", tr_warmup, "warmup epoch override");
    tr->add_option("--batch-size", tr_batch, "batch size override");
    tr->add_option("--lr", tr_lr, "base learning rate override");
    tr->add_option("--mixup", tr_mixup, "mixup alpha override (0 disables)");
    tr->add_option("--clip-seconds", tr_clipsec, "clip length override");
    tr->add_option("--roll-p", tr_roll, "random-roll probability override");
    tr->add_option("--speed-p", tr_speed, "speed-perturbation probability override");
    tr->add_option("--erase-p", tr_erase, "random-erasing probability override");
    tr->add_option("--target-map", tr_target, "early-stop eval mAP target");
    tr->add_option("--norm-mean", tr_norm_mean, "log-mel standardization mean override");
    tr->add_option("--norm-std", tr_norm_std, "log-mel standardization std override");
    tr->add_option("--pos-lr-mult", tr_posmult, "DCLS position lr multiplier override");
    tr->add_option("--sig-lr-mult", tr_sigmult, "DCLS sigma lr multiplier override");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (mAP report)");
    std::string ev_ckpt, ev_manifest, ev_labels, ev_report;
    int ev_batch = 32;
    double ev_clipsec = 10.0;
    FrontendConfig fe_defaults;
    double ev_norm_mean = fe_defaults.norm_mean, ev_norm_std = fe_defaults.norm_std;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--manifest", ev_manifest, "evaluation manifest CSV")->required();
    ev->add_option("--labels", ev_labels, "labels vocabulary file")->required();
    ev->add_option("--report", ev_report, "per-class AP report CSV");
    ev->add_option("--batch-size", ev_batch, "batch size");
    ev->add_option("--clip-seconds", ev_clipsec, "clip length in seconds");
    ev->add_option("--norm-mean", ev_norm_mean, "log-mel standardization mean");
    ev->add_option("--norm-std", ev_norm_std, "log-mel standardization std");

    // surgery
    auto* su = app.add_subcommand("surgery", "replace 7x7 depthwise convs by DCLS");
    std::string su_in, su_out, su_version = "gauss";
    int su_size = 23, su_count = 26;
    su->add_option("--in", su_in, "input checkpoint")->required();
    su->add_option("--out", su_out, "output checkpoint")->required();
    su->add_option("--size", su_size, "dilated kernel size S (odd)");
    su->add_option("--count", su_count, "kernel element count m");
    su->add_option("--version", su_version, "interpolation: gauss or bilinear");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "run the 64-bit finite-difference suites");
    int gc_seeds = 10;
    gc->add_option("--seeds", gc_seeds, "random seeds per suite");

    // paramcount
    auto* pc = app.add_subcommand("paramcount", "parameter-count ledger");
    std::string pc_arch = "convnext-t", pc_spec, pc_conv = "dsc", pc_ckpt;
    bool pc_breakdown = false;
    pc->add_option("--arch", pc_arch, "architecture preset");
    pc->add_option("--spec", pc_spec, "model spec file");
    pc->add_option("--conv", pc_conv, "depthwise conv method: dsc or dcls");
    pc->add_option("--ckpt", pc_ckpt, "count an existing checkpoint instead");
    pc->add_flag("--breakdown", pc_breakdown, "print per-tensor sizes");

    // bench
    auto* be = app.add_subcommand("bench", "eval-mode throughput, dsc7 baseline vs DCLS");
    std::string be_arch = "toy", be_spec;
    int be_batch = 4, be_warmup = 5, be_iters = 20, be_h = 128, be_w = 101;
    be->add_option("--arch", be_arch, "architecture preset");
    be->add_option("--spec", be_spec, "model spec file");
    be->add_option("--batch", be_batch, "batch size");
    be->add_option("--warmup", be_warmup, "warmup iterations (excluded from timing)");
    be->add_option("--iters", be_iters, "timed iterations");
    be->add_option("--height", be_h, "input spectrogram height");
    be->add_option("--width", be_w, "input spectrogram width");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sp) return cmd_spectrogram(sp_in, sp_out, sp_resample);
        if (*gd) return cmd_gen_data(gd_out, gd_clips, gd_classes, gd_seconds, seed);
        if (*tr) {
            if (tr_epochs >= 0) tr_over["epochs"] = tr_epochs;
            if (tr_warmup >= 0) tr_over["warmup_epochs"] = tr_warmup;
            if (tr_batch >= 0) tr_over["batch_size"] = tr_batch;
            if (tr_lr >= 0) tr_over["lr"] = tr_lr;
            if (tr_mixup >= 0) tr_over["mixup"] = tr_mixup;
            if (tr_clipsec >= 0) tr_over["clip_seconds"] = tr_clipsec;
            if (tr_roll >= 0) tr_over["roll_p"] = tr_roll;
            if (tr_speed >= 0) tr_over["speed_p"] = tr_speed;
            if (tr_erase >= 0) tr_over["erase_p"] = tr_erase;
            if (tr_target >= 0) tr_over["target_map"] = tr_target;
            if (!std::isnan(tr_norm_mean)) tr_over["norm_mean"] = tr_norm_mean;
            if (tr_norm_std > 0) tr_over["norm_std"] = tr_norm_std;
            if (tr_posmult >= 0) tr_over["pos_lr_mult"] = tr_posmult;
            if (tr_sigmult >= 0) tr_over["sig_lr_mult"] = tr_sigmult;
            return cmd_train(tr_manifest, tr_labels, tr_eval, tr_arch, tr_spec, tr_conv,
                             tr_config, tr_init, tr_out, tr_history, tr_over, seed);
        }
        if (*ev) return cmd_eval(ev_ckpt, ev_manifest, ev_labels, ev_report, ev_batch, ev_clipsec,
                                 ev_norm_mean, ev_norm_std);
        if (*su) return cmd_surgery(su_in, su_out, su_size, su_count, su_version, seed);
        if (*gc) return cmd_gradcheck(gc_seeds);
        if (*pc) return cmd_paramcount(pc_arch, pc_spec, pc_conv, pc_ckpt, pc_breakdown);
        if (*be) return cmd_bench(be_arch, be_spec, be_batch, be_warmup, be_iters, be_h, be_w, seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
