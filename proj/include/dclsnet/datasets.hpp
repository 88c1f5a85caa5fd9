#pragma once

#include <set>
#include <string>
#include <vector>

namespace dclsnet {

struct ManifestEntry {
    std::string path;
    std::set<int> labels;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> vocabulary;
};

// CSV with columns path,labels; labels are semicolon-separated indices into
// the vocabulary file (one class name per line).
Manifest load_manifest(const std::string& csv_path, const std::string& labels_path);
void save_manifest(const Manifest& m, const std::string& csv_path,
                   const std::string& labels_path);

struct SyntheticConfig {
    int n_clips = 2048;
    int n_classes = 8;      // <= 16
    double seconds = 1.0;
    int sample_rate = 32000;
    double snr_db_min = 5.0, snr_db_max = 20.0;
    unsigned seed = 0;
};

// Each class k is an exponential chirp centered at 200 * 2^(k/2) Hz; a clip
// mixes 1-3 class signatures plus white noise at a uniform random SNR.
// Deterministic per seed (one RNG stream per clip index).
Manifest gen_synthetic(const std::string& out_dir, const SyntheticConfig& cfg);

double synthetic_class_frequency(int k);
double synthetic_class_sweep(int k);

}  // namespace dclsnet
