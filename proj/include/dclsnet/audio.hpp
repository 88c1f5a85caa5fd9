#pragma once

#include <random>
#include <string>
#include <vector>

#include "dclsnet/tensor.hpp"

namespace dclsnet {

struct AudioClip {
    std::vector<float> samples;  // mono, in [-1, 1]
    int sample_rate = 0;
};

// Table-style frontend settings; defaults reproduce the 128 x 1001 pipeline.
struct FrontendConfig {
    int n_fft = 1024;
    int hop = 320;
    int power = 2;
    int n_mels = 128;
    int sample_rate = 32000;
    double f_min = 50.0;
    double f_max = 14000.0;
    double amin = 1e-10;
    double norm_mean = -18.2696;
    double norm_std = 30.5735;
    bool slaney_mel = false;  // default: HTK mel scale, peak-1 filters

    void validate() const;
};

// ---- WAV ingestion -------------------------------------------------------

// RIFF/WAVE, PCM 16-bit or IEEE float 32-bit, any channel count (averaged to
// mono). Rejects files whose rate differs from expected_rate unless
// allow_resample is set, in which case they are linearly resampled.
AudioClip load_wav(const std::string& path, int expected_rate = 32000,
                   bool allow_resample = false);

void save_wav_pcm16(const std::string& path, const AudioClip& clip);

AudioClip resample_linear(const AudioClip& clip, int target_rate);

// Truncation keeps the head; padding appends zeros.
AudioClip pad_or_truncate(const AudioClip& clip, std::size_t target_len);

// ---- Frontend ------------------------------------------------------------

// mel(f) = 2595 log10(1 + f/700)
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters, peak value 1, rows n_mels x (n_fft/2 + 1).
TensorT<double> mel_filterbank(const FrontendConfig& cfg);

// Hann-windowed centered STFT (reflect padding) -> power -> mel -> dB ->
// dataset normalization. Output 1 x n_mels x T with T = floor(n/hop) + 1.
Tensor logmel(const AudioClip& clip, const FrontendConfig& cfg);

// ---- Augmentations -------------------------------------------------------

// Circular shift by an integer drawn uniformly from [-N, N].
AudioClip augment_random_roll(const AudioClip& clip, std::mt19937& rng);

struct SpeedConfig {
    double rate_min = 0.5;
    double rate_max = 1.5;
    double prob = 0.5;
};
AudioClip augment_speed(const AudioClip& clip, std::mt19937& rng,
                        const SpeedConfig& cfg = {});

struct EraseConfig {
    double prob = 0.25;
    double area_min = 0.02, area_max = 0.33;
    double aspect_min = 0.3, aspect_max = 3.3;
    float fill = 0.0f;  // post-normalization mean
};
Tensor augment_erase(const Tensor& spec, std::mt19937& rng, const EraseConfig& cfg = {});

}  // namespace dclsnet
