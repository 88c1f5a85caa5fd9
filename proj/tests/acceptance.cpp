// End-to-end acceptance gate. Runs every release criterion with its stated
// tolerance and prints one PASS/FAIL line each; exits non-zero on any failure.
// argv[1] must point at the dclsnet CLI binary (used for bench/determinism).

#include <unistd.h>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dclsnet/audio.hpp"
#include "dclsnet/datasets.hpp"
#include "dclsnet/dcls.hpp"
#include "dclsnet/metrics.hpp"
#include "dclsnet/model.hpp"
#include "dclsnet/ops.hpp"
#include "dclsnet/train.hpp"
#include "dclsnet/verify.hpp"

namespace {

using namespace dclsnet;
using Clock = std::chrono::steady_clock;

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s: %s (%s)\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

int run_cli(const std::string& cli, const std::string& args, const std::string& out_path) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + out_path + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc;
}

// ---- criterion 1: gradient exactness --------------------------------------

void check_gradients() {
    const auto t0 = Clock::now();
    auto results = verify::run_all(10);
    const double elapsed = seconds_since(t0);
    double worst = 0.0;
    bool all = true;
    for (const auto& r : results) {
        worst = std::max(worst, r.max_rel_err);
        all = all && r.pass();
    }
    std::ostringstream d;
    d << results.size() << " suites, 10 seeds each, worst rel err " << worst << ", "
      << elapsed << " s";
    report("gradient exactness < 1e-4 across all suites, < 2 min", all && elapsed < 120.0,
           d.str());
}

// ---- criterion 2: interpolation-weight normalization -----------------------

void check_normalization() {
    std::mt19937 rng(11);
    const int C = 2, m = 3, S = 9;
    double worst = 0.0;
    for (int draw = 0; draw < 1000; ++draw) {
        DclsParamsT<double> p;
        p.channels = C;
        p.kernel_count = m;
        p.dilated_size = S;
        p.version = DclsVersion::Gauss;
        p.positions = random_uniform<double>({2, C, m}, -4.0, 4.0, rng);
        p.sigmas = random_uniform<double>({2, C, m}, -3.0, 3.0, rng);
        for (int c = 0; c < C; ++c)
            for (int k = 0; k < m; ++k) {
                p.weights = Tensor64({C, m});
                p.weights.at2((std::size_t)c, (std::size_t)k) = 1.0;
                Tensor64 K = construct_kernel(p);
                for (int ch = 0; ch < C; ++ch) {
                    double s = 0.0;
                    for (int i = 0; i < S * S; ++i) s += K.data[(std::size_t)(ch * S * S + i)];
                    worst = std::max(worst, std::fabs(s - (ch == c ? 1.0 : 0.0)));
                }
            }
    }
    std::ostringstream d;
    d << "1000 random (P, SIG) draws, per (channel, element) grid sum, worst |sum-1| = "
      << worst;
    report("DCLS interpolation weights sum to 1 within 1e-6", worst < 1e-6, d.str());
}

// ---- criterion 3: lattice equivalence --------------------------------------

void check_lattice_equivalence() {
    std::mt19937 rng(17);
    const int S = 7, C = 2, m = 4;
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        auto p = init_dcls<double>(C, m, S, DclsVersion::Bilinear, rng);
        std::uniform_int_distribution<int> pos(-(S - 1) / 2, (S - 1) / 2);
        for (double& v : p.positions.data) v = (double)pos(rng);

        Tensor64 ref({C, 1, S, S});
        for (int c = 0; c < C; ++c)
            for (int k = 0; k < m; ++k) {
                const int i = (int)p.positions.at3(0, (std::size_t)c, (std::size_t)k) + (S - 1) / 2;
                const int j = (int)p.positions.at3(1, (std::size_t)c, (std::size_t)k) + (S - 1) / 2;
                ref.at4((std::size_t)c, 0, (std::size_t)i, (std::size_t)j) +=
                    p.weights.at2((std::size_t)c, (std::size_t)k);
            }

        Tensor64 K = construct_kernel(p);
        Tensor64 x = random_normal<double>({1, C, 10, 10}, 0.0, 1.0, rng);
        ConvGeometry g{S, S, 1, 1, S / 2, S / 2, C};
        Tensor64 y_dcls = ops::depthwise_conv2d(x, K, g);
        Tensor64 y_ref = ops::depthwise_conv2d(x, ref, g);
        for (std::size_t i = 0; i < y_ref.numel(); ++i)
            worst = std::max(worst, std::fabs(y_dcls.data[i] - y_ref.data[i]));
    }
    std::ostringstream d;
    d << "10 random cases vs direct dilated depthwise conv, worst |diff| = " << worst;
    report("bilinear DCLS at integer positions == dilated conv within 1e-6", worst < 1e-6,
           d.str());
}

// ---- criterion 4: pipeline shapes -------------------------------------------

void check_shapes() {
    FrontendConfig fe;
    AudioClip clip;
    clip.sample_rate = fe.sample_rate;
    clip.samples.resize((std::size_t)fe.sample_rate * 10);
    for (std::size_t i = 0; i < clip.samples.size(); ++i)
        clip.samples[i] = 0.5f * std::sin(2.0 * M_PI * 440.0 * (double)i / fe.sample_rate);
    Tensor spec = logmel(clip, fe);
    const bool spec_ok = spec.shape == Shape{1, 128, 1001};

    Tensor x({1, 1, spec.dim(1), spec.dim(2)}, spec.data);
    std::mt19937 rng(0);
    Tensor stem_w = random_normal<float>({96, 1, 2, 16}, 0.0f, 0.02f, rng);
    Tensor y = ops::dense_conv2d(x, stem_w, ConvGeometry{2, 16, 2, 16, 0, 0, 1});
    const bool stem_ok = y.shape == Shape{1, 96, 64, 62};

    std::ostringstream d;
    d << "spectrogram " << shape_to_string(spec.shape) << ", stem output "
      << shape_to_string(y.shape);
    report("10 s @ 32 kHz -> 128x1001 spectrogram, 64x62 stem maps (exact)",
           spec_ok && stem_ok, d.str());
}

// ---- criteria 5 & 6: parameter accounting, surgery sharing ------------------

std::size_t depthwise_ledger(const Model& model) {
    std::size_t total = 0;
    for (const auto& [name, n] : model.param_breakdown()) {
        const bool dsc = name.ends_with(".dw.weight");
        const bool dcls = name.ends_with(".dw.w") || name.starts_with("dcls.");
        if (dsc || dcls) total += n;
    }
    return total;
}

void check_param_accounting() {
    std::mt19937 rng(0);
    Model model = build_model<float>(ModelSpec::convnext_t_audio(ConvMethod::Dsc), rng);
    const std::size_t baseline = model.count_params();
    const std::size_t ledger_before = depthwise_ledger(model);

    Model converted = model;
    std::mt19937 rng2(1);
    SurgeryReport rep =
        surgery_replace_dsc_with_dcls(converted, 23, 26, DclsVersion::Gauss, rng2);
    const std::size_t after = converted.count_params();
    const std::size_t ledger_after = depthwise_ledger(converted);

    {
        const double lo = 28.6e6 * 0.98, hi = 28.6e6 * 1.02;
        const bool ok = (double)baseline >= lo && (double)baseline <= hi &&
                        after <= baseline && ledger_before == 324576 &&
                        ledger_after == 321984;
        std::ostringstream d;
        d << "baseline " << baseline << ", post-surgery " << after << ", depthwise ledger "
          << ledger_before << " -> " << ledger_after;
        report("ConvNeXt-T audio: 28.6M +/- 2%, surgery <= baseline, ledger 324576/321984",
               ok, d.str());
    }
    {
        const bool ok = rep.replaced == 18 && rep.shared_groups == 4;
        std::ostringstream d;
        d << rep.replaced << " layers replaced, " << rep.shared_groups
          << " shared position groups";
        report("surgery: exactly 18 replacements and 4 shared (P, SIG) groups", ok, d.str());
    }
}

// ---- criterion 7: mini training ------------------------------------------------

void check_mini_training(const std::string& work_dir) {
    SyntheticConfig ds;
    ds.n_clips = 2048;
    ds.n_classes = 8;
    ds.seconds = 1.0;
    ds.seed = 901;
    Manifest train_set = gen_synthetic(work_dir + "/train", ds);
    ds.n_clips = 256;
    ds.seed = 902;
    Manifest eval_set = gen_synthetic(work_dir + "/eval", ds);

    bool all_ok = true;
    std::ostringstream d;
    for (ConvMethod method : {ConvMethod::Dsc, ConvMethod::Dcls}) {
        for (unsigned seed : {1u, 2u, 3u}) {
            ModelSpec spec = ModelSpec::mini(8, method);
            std::mt19937 rng(seed);
            Model model = build_model<float>(spec, rng);

            std::vector<float> init_positions;
            for (const auto& p : model.params)
                if (p.active && p.kind == ParamKind::Position)
                    init_positions.insert(init_positions.end(), p.value.data.begin(),
                                          p.value.data.end());

            TrainConfig cfg;
            cfg.epochs = 30;
            cfg.warmup_epochs = 1;
            cfg.batch_size = 16;
            cfg.base_lr = 3e-4;
            cfg.mixup_alpha = 0.0;
            cfg.clip_seconds = 1.0;
            cfg.roll_p = cfg.speed_p = cfg.erase_p = 0.0;
            cfg.norm_mean = 8.34;  // synthetic-corpus log-mel statistics
            cfg.norm_std = 8.475;
            // both variants exceed 0.90 within a few epochs; the full budget
            // without early stopping is what lets the DCLS positions migrate
            // measurably (the sigma_init = S/4 blur keeps position gradients
            // small, hence the multiplier)
            cfg.pos_lr_mult = 10.0;
            cfg.seed = seed;
            cfg.target_map = 0.0;

            const auto t0 = Clock::now();
            TrainHistory hist = train_loop(model, train_set, eval_set, cfg);
            const double elapsed = seconds_since(t0);
            const double final_map = hist.rows.empty() ? 0.0 : hist.rows.back().map;
            bool ok = final_map >= 0.90 && (int)hist.rows.size() <= 30 && elapsed < 1800.0;

            double mean_dp = 0.0;
            bool in_extent = true;
            if (method == ConvMethod::Dcls) {
                std::vector<float> final_positions;
                for (const auto& p : model.params)
                    if (p.active && p.kind == ParamKind::Position)
                        final_positions.insert(final_positions.end(), p.value.data.begin(),
                                               p.value.data.end());
                for (std::size_t i = 0; i < final_positions.size(); ++i) {
                    mean_dp += std::fabs(final_positions[i] - init_positions[i]);
                    in_extent = in_extent && final_positions[i] >= -11.0f &&
                                final_positions[i] <= 11.0f;
                }
                mean_dp /= (double)final_positions.size();
                ok = ok && mean_dp > 0.1 && in_extent;
            }

            d << (method == ConvMethod::Dsc ? "dsc7" : "dcls") << "/seed" << seed << ": mAP "
              << final_map << " in " << hist.rows.size() << " ep, " << (int)elapsed << " s";
            if (method == ConvMethod::Dcls)
                d << ", mean|dP| " << mean_dp << (in_extent ? "" : ", OUT OF EXTENT");
            d << "; ";
            all_ok = all_ok && ok;
        }
    }
    report("mini training: mAP >= 0.90 within 30 epochs, both variants, 3 seeds; "
           "DCLS positions move > 0.1 and stay in [-11, 11]",
           all_ok, d.str());
}

// ---- criterion 8: mAP oracle --------------------------------------------------

double reference_ap(const std::vector<float>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    double ap = 0.0;
    std::size_t positives = 0;
    for (int l : labels) positives += (std::size_t)l;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 1) continue;
        std::size_t rank = 0, hits = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (scores[j] > scores[i] || (scores[j] == scores[i] && j <= i)) {
                ++rank;
                if (labels[j] == 1) ++hits;
            }
        }
        ap += (double)hits / (double)rank;
    }
    return ap / (double)positives;
}

void check_map_oracle() {
    std::mt19937 rng(9);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 50;
        std::vector<float> s(n);
        std::vector<int> l(n);
        int pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = (trial % 3 == 0) ? std::round(u(rng) * 4.0f) / 4.0f : u(rng);
            pos += (l[i] = u(rng) < 0.25f ? 1 : 0);
        }
        if (pos == 0) l[n / 2] = 1;
        worst = std::max(worst, std::fabs(*average_precision(s, l) - reference_ap(s, l)));
    }
    const double worked = *average_precision({0.9f, 0.8f, 0.1f}, {1, 0, 1});
    const bool worked_ok = std::fabs(worked - 5.0 / 6.0) < 1e-12;
    std::ostringstream d;
    d << "100 random rankings, worst |diff| = " << worst << "; worked example AP = " << worked;
    report("AP matches brute-force rank enumeration within 1e-9", worst < 1e-9 && worked_ok,
           d.str());
}

// ---- criterion 9: throughput ordering -----------------------------------------

void check_throughput(const std::string& cli, const std::string& work_dir) {
    const std::string out = work_dir + "/bench.txt";
    const int rc =
        run_cli(cli, "bench --arch toy --batch 2 --warmup 2 --iters 6 --height 64 --width 101",
                out);
    const std::string text = read_file(out);
    double ratio = -1.0;
    const std::string key = "throughput ratio (dcls/baseline):";
    if (const auto at = text.find(key); at != std::string::npos)
        ratio = std::atof(text.c_str() + at + key.size());
    std::ostringstream d;
    d << "exit " << rc << ", ratio " << ratio;
    report("bench: DCLS eval throughput strictly below the dsc7 baseline",
           rc == 0 && ratio > 0.0 && ratio < 1.0, d.str());
}

// ---- criterion 10: CLI determinism ---------------------------------------------

void check_determinism(const std::string& cli, const std::string& work_dir) {
    const std::string data = work_dir + "/det_data";
    int rc = run_cli(cli, "gen-data --out \"" + data + "\" --clips 64 --classes 4 --seconds 0.5",
                     work_dir + "/gen.txt");
    std::string h[2];
    for (int i = 0; i < 2 && rc == 0; ++i) {
        const std::string hist = work_dir + "/hist" + std::to_string(i) + ".csv";
        rc = run_cli(cli,
                     "--seed 7 --threads 1 train --train-manifest \"" + data +
                         "/manifest.csv\" --labels \"" + data +
                         "/labels.txt\" --arch toy --conv dsc --epochs 2 --warmup-epochs 1 "
                         "--batch-size 16 --clip-seconds 0.5 --mixup 0 --roll-p 0 --speed-p 0 "
                         "--erase-p 0 --history \"" + hist + "\"",
                     work_dir + "/train" + std::to_string(i) + ".txt");
        h[i] = read_file(hist);
    }
    const bool ok = rc == 0 && !h[0].empty() && h[0] == h[1];
    std::ostringstream d;
    d << "exit " << rc << ", history CSVs " << (h[0] == h[1] ? "identical" : "differ") << " ("
      << h[0].size() << " bytes)";
    report("cmd_train with fixed seed and --threads 1 is bitwise reproducible", ok, d.str());
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <path-to-dclsnet-cli>\n");
        return 2;
    }
    const std::string cli = argv[1];
    const std::string work_dir =
        "/tmp/dclsnet_acceptance_" + std::to_string((unsigned)::getpid());
    std::filesystem::create_directories(work_dir);

    try {
        check_gradients();
        check_normalization();
        check_lattice_equivalence();
        check_shapes();
        check_param_accounting();
        check_map_oracle();
        check_throughput(cli, work_dir);
        check_determinism(cli, work_dir);
        check_mini_training(work_dir);
    } catch (const std::exception& e) {
        std::printf("FAIL: unexpected exception (%s)\n", e.what());
        ++g_failures;
    }

    std::filesystem::remove_all(work_dir);
    std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "ALL PASS" : "RESULT",
                g_failures);
    return g_failures == 0 ? 0 : 1;
}
