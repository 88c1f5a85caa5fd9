#include "dclsnet/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "dclsnet/audio.hpp"

namespace dclsnet {

Manifest load_manifest(const std::string& csv_path, const std::string& labels_path) {
    Manifest m;
    {
        std::ifstream f(labels_path);
        if (!f) throw std::runtime_error("cannot open labels file: " + labels_path);
        std::string line;
        while (std::getline(f, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            m.vocabulary.push_back(line);
        }
        while (!m.vocabulary.empty() && m.vocabulary.back().empty()) m.vocabulary.pop_back();
    }
    std::ifstream f(csv_path);
    if (!f) throw std::runtime_error("cannot open manifest: " + csv_path);
    std::string line;
    int row = 0;
    std::unordered_set<std::string> seen;
    while (std::getline(f, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (row == 1 && line == "path,labels") continue;  // optional header
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("malformed manifest row " + std::to_string(row) + ": " + line);
        ManifestEntry e;
        e.path = line.substr(0, comma);
        if (e.path.empty())
            throw std::runtime_error("empty path at manifest row " + std::to_string(row));
        if (!seen.insert(e.path).second)
            throw std::runtime_error("duplicate path at manifest row " + std::to_string(row) +
                                     ": " + e.path);
        std::stringstream labels(line.substr(comma + 1));
        std::string tok;
        while (std::getline(labels, tok, ';')) {
            if (tok.empty()) continue;
            int idx;
            try {
                std::size_t used = 0;
                idx = std::stoi(tok, &used);
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw std::runtime_error("malformed label at manifest row " + std::to_string(row) +
                                         ": '" + tok + "'");
            }
            if (idx < 0 || (std::size_t)idx >= m.vocabulary.size())
                throw std::runtime_error("label index out of range at row " + std::to_string(row));
            e.labels.insert(idx);
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

void save_manifest(const Manifest& m, const std::string& csv_path,
                   const std::string& labels_path) {
    {
        std::ofstream f(labels_path);
        if (!f) throw std::runtime_error("cannot write labels file: " + labels_path);
        for (const auto& name : m.vocabulary) f << name << "\n";
    }
    std::ofstream f(csv_path);
    if (!f) throw std::runtime_error("cannot write manifest: " + csv_path);
    f << "path,labels\n";
    for (const auto& e : m.entries) {
        f << e.path << ",";
        bool first = true;
        for (int l : e.labels) {
            if (!first) f << ";";
            f << l;
            first = false;
        }
        f << "\n";
    }
}

double synthetic_class_frequency(int k) { return 200.0 * std::pow(2.0, k / 2.0); }

// Signed sweep extent in octaves over the clip. Classes alternate direction;
// the mel warp spreads a fixed octave extent into distinct slopes per class,
// so classes stay separable by a local (shift-invariant) time-frequency cue
// and not only by absolute peak position.
double synthetic_class_sweep(int k) { return (k % 2 == 0 ? 0.4 : -0.4); }

Manifest gen_synthetic(const std::string& out_dir, const SyntheticConfig& cfg) {
    if (cfg.n_classes < 1 || cfg.n_classes > 16)
        throw std::invalid_argument("gen_synthetic: n_classes must be in [1, 16]");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw std::runtime_error("gen_synthetic: cannot create directory " + out_dir);

    Manifest m;
    for (int k = 0; k < cfg.n_classes; ++k)
        m.vocabulary.push_back("chirp_" + std::to_string((int)std::lround(synthetic_class_frequency(k))) + "hz");

    const std::size_t n_samples = (std::size_t)std::llround(cfg.seconds * cfg.sample_rate);
    for (int idx = 0; idx < cfg.n_clips; ++idx) {
        // independent stream per clip index, so generation order is immaterial
        std::seed_seq seq{cfg.seed, (unsigned)idx};
        std::mt19937 rng(seq);

        std::uniform_int_distribution<int> n_sig_dist(1, std::min(3, cfg.n_classes));
        const int n_sigs = n_sig_dist(rng);
        std::vector<int> classes(cfg.n_classes);
        for (int k = 0; k < cfg.n_classes; ++k) classes[k] = k;
        std::shuffle(classes.begin(), classes.end(), rng);
        classes.resize(n_sigs);

        std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * M_PI);
        std::uniform_real_distribution<double> amp_dist(0.5, 1.0);
        std::vector<double> signal(n_samples, 0.0);
        for (int k : classes) {
            const double f_center = synthetic_class_frequency(k);
            const double sweep = synthetic_class_sweep(k);
            const double amp = amp_dist(rng);
            double phase = phase_dist(rng);
            for (std::size_t i = 0; i < n_samples; ++i) {
                const double t = (double)i / (double)(n_samples > 1 ? n_samples - 1 : 1);
                const double freq = f_center * std::pow(2.0, sweep * (t - 0.5));
                signal[i] += amp * std::sin(phase);
                phase += 2.0 * M_PI * freq / cfg.sample_rate;
            }
        }
        double sig_power = 0.0;
        for (double v : signal) sig_power += v * v;
        sig_power /= (double)n_samples;

        std::uniform_real_distribution<double> snr_dist(cfg.snr_db_min, cfg.snr_db_max);
        const double snr_db = snr_dist(rng);
        const double noise_power = sig_power / std::pow(10.0, snr_db / 10.0);
        std::normal_distribution<double> noise(0.0, std::sqrt(noise_power));
        for (std::size_t i = 0; i < n_samples; ++i) signal[i] += noise(rng);

        double peak = 1e-9;
        for (double v : signal) peak = std::max(peak, std::fabs(v));
        const double scale = peak > 0.99 ? 0.99 / peak : 1.0;

        AudioClip clip;
        clip.sample_rate = cfg.sample_rate;
        clip.samples.resize(n_samples);
        for (std::size_t i = 0; i < n_samples; ++i)
            clip.samples[i] = (float)(signal[i] * scale);

        char name[32];
        std::snprintf(name, sizeof(name), "clip_%05d.wav", idx);
        const std::string path = out_dir + "/" + name;
        save_wav_pcm16(path, clip);

        ManifestEntry e;
        e.path = path;
        e.labels.insert(classes.begin(), classes.end());
        m.entries.push_back(std::move(e));
    }
    save_manifest(m, out_dir + "/manifest.csv", out_dir + "/labels.txt");
    return m;
}

}  // namespace dclsnet
