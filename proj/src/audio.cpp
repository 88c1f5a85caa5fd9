#include "dclsnet/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dclsnet/fft.hpp"

namespace dclsnet {

void FrontendConfig::validate() const {
    if (n_fft <= 0 || (n_fft & (n_fft - 1)) != 0)
        throw std::invalid_argument("frontend: n_fft must be a power of two");
    if (hop <= 0 || hop > n_fft) throw std::invalid_argument("frontend: hop must be in [1, n_fft]");
    if (n_mels <= 0) throw std::invalid_argument("frontend: n_mels must be >= 1");
    if (sample_rate <= 0) throw std::invalid_argument("frontend: sample_rate must be > 0");
    if (!(f_min < f_max) || f_max > sample_rate / 2.0)
        throw std::invalid_argument("frontend: need f_min < f_max <= sample_rate/2");
    if (norm_std <= 0) throw std::invalid_argument("frontend: norm_std must be > 0");
}

// ---- WAV -------------------------------------------------------------------

namespace {

uint32_t read_u32(const unsigned char* p) {
    return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) | ((uint32_t)p[3] << 24);
}
uint16_t read_u16(const unsigned char* p) { return (uint16_t)((uint32_t)p[0] | ((uint32_t)p[1] << 8)); }

}  // namespace

AudioClip load_wav(const std::string& path, int expected_rate, bool allow_resample) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open wav file: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("malformed wav header: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const char* id = (const char*)&buf[pos];
        const uint32_t sz = read_u32(&buf[pos + 4]);
        if (pos + 8 + sz > buf.size()) throw std::runtime_error("malformed wav chunk: " + path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (sz < 16) throw std::runtime_error("malformed wav fmt chunk: " + path);
            format = read_u16(&buf[pos + 8]);
            channels = read_u16(&buf[pos + 10]);
            rate = read_u32(&buf[pos + 12]);
            bits = read_u16(&buf[pos + 22]);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = &buf[pos + 8];
            data_len = sz;
        }
        pos += 8 + sz + (sz & 1);  // chunks are word-aligned
    }
    if (!data || channels == 0 || rate == 0)
        throw std::runtime_error("malformed wav file: " + path);
    const bool pcm16 = format == 1 && bits == 16;
    const bool f32 = format == 3 && bits == 32;
    if (!pcm16 && !f32)
        throw std::runtime_error("unsupported wav codec (want PCM16 or float32): " + path);

    const std::size_t bytes_per = bits / 8;
    const std::size_t frames = data_len / (bytes_per * channels);
    AudioClip clip;
    clip.sample_rate = (int)rate;
    clip.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (unsigned ch = 0; ch < channels; ++ch) {
            const unsigned char* p = data + (i * channels + ch) * bytes_per;
            if (pcm16) {
                int16_t v;
                std::memcpy(&v, p, 2);
                acc += (double)v / 32768.0;
            } else {
                float v;
                std::memcpy(&v, p, 4);
                acc += (double)v;
            }
        }
        clip.samples[i] = (float)(acc / channels);
    }
    if (clip.sample_rate != expected_rate) {
        if (!allow_resample)
            throw std::runtime_error("sample-rate mismatch: got " +
                                     std::to_string(clip.sample_rate) + " Hz, expected " +
                                     std::to_string(expected_rate) + " Hz (use --resample)");
        clip = resample_linear(clip, expected_rate);
    }
    return clip;
}

void save_wav_pcm16(const std::string& path, const AudioClip& clip) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write wav file: " + path);
    const uint32_t n = (uint32_t)clip.samples.size();
    const uint32_t data_bytes = n * 2;
    const uint32_t rate = (uint32_t)clip.sample_rate;
    unsigned char hdr[44];
    std::memcpy(hdr, "RIFF", 4);
    const uint32_t riff_sz = 36 + data_bytes;
    std::memcpy(hdr + 4, &riff_sz, 4);
    std::memcpy(hdr + 8, "WAVEfmt ", 8);
    const uint32_t fmt_sz = 16;
    std::memcpy(hdr + 16, &fmt_sz, 4);
    const uint16_t format = 1, channels = 1, bits = 16;
    const uint32_t byte_rate = rate * 2;
    const uint16_t block_align = 2;
    std::memcpy(hdr + 20, &format, 2);
    std::memcpy(hdr + 22, &channels, 2);
    std::memcpy(hdr + 24, &rate, 4);
    std::memcpy(hdr + 28, &byte_rate, 4);
    std::memcpy(hdr + 32, &block_align, 2);
    std::memcpy(hdr + 34, &bits, 2);
    std::memcpy(hdr + 36, "data", 4);
    std::memcpy(hdr + 40, &data_bytes, 4);
    f.write((const char*)hdr, 44);
    for (uint32_t i = 0; i < n; ++i) {
        const float x = std::min(1.0f, std::max(-1.0f, clip.samples[i]));
        const int16_t v = (int16_t)std::lrint(x * 32767.0f);
        f.write((const char*)&v, 2);
    }
    if (!f) throw std::runtime_error("short write to wav file: " + path);
}

AudioClip resample_linear(const AudioClip& clip, int target_rate) {
    if (target_rate <= 0) throw std::invalid_argument("resample: target rate must be > 0");
    if (target_rate == clip.sample_rate || clip.samples.empty()) {
        AudioClip out = clip;
        out.sample_rate = target_rate;
        return out;
    }
    const std::size_t n = clip.samples.size();
    const std::size_t out_n =
        (std::size_t)std::llround((double)n * target_rate / clip.sample_rate);
    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(out_n);
    const double step = (double)clip.sample_rate / target_rate;
    for (std::size_t i = 0; i < out_n; ++i) {
        const double pos = i * step;
        const std::size_t i0 = std::min((std::size_t)pos, n - 1);
        const std::size_t i1 = std::min(i0 + 1, n - 1);
        const double frac = pos - (double)i0;
        out.samples[i] = (float)((1.0 - frac) * clip.samples[i0] + frac * clip.samples[i1]);
    }
    return out;
}

AudioClip pad_or_truncate(const AudioClip& clip, std::size_t target_len) {
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples = clip.samples;
    out.samples.resize(target_len, 0.0f);
    return out;
}

// ---- Frontend ----------------------------------------------------------------

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

double hz_to_mel_slaney(double hz) {
    if (hz < 1000.0) return hz * 3.0 / 200.0;
    return 15.0 + 27.0 * std::log(hz / 1000.0) / std::log(6.4);
}
double mel_to_hz_slaney(double mel) {
    if (mel < 15.0) return mel * 200.0 / 3.0;
    return 1000.0 * std::exp((mel - 15.0) * std::log(6.4) / 27.0);
}

// Fold an out-of-range index back into [0, n) by reflection without
// repeating the edge sample.
std::size_t reflect_index(long long i, long long n) {
    if (n == 1) return 0;
    const long long period = 2 * (n - 1);
    long long j = i % period;
    if (j < 0) j += period;
    if (j >= n) j = period - j;
    return (std::size_t)j;
}

}  // namespace

TensorT<double> mel_filterbank(const FrontendConfig& cfg) {
    cfg.validate();
    const int bins = cfg.n_fft / 2 + 1;
    auto to_mel = cfg.slaney_mel ? hz_to_mel_slaney : hz_to_mel;
    auto to_hz = cfg.slaney_mel ? mel_to_hz_slaney : mel_to_hz;
    const double mel_lo = to_mel(cfg.f_min), mel_hi = to_mel(cfg.f_max);
    std::vector<double> edges(cfg.n_mels + 2);
    for (int m = 0; m < cfg.n_mels + 2; ++m)
        edges[m] = to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.n_mels + 1));
    TensorT<double> fb({(std::size_t)cfg.n_mels, (std::size_t)bins});
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double fl = edges[m], fc = edges[m + 1], fr = edges[m + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = (double)k * cfg.sample_rate / cfg.n_fft;
            double v = 0.0;
            if (f > fl && f < fr) v = f <= fc ? (f - fl) / (fc - fl) : (fr - f) / (fr - fc);
            fb.at2((std::size_t)m, (std::size_t)k) = v;
        }
    }
    return fb;
}

Tensor logmel(const AudioClip& clip, const FrontendConfig& cfg) {
    cfg.validate();
    if (clip.sample_rate != cfg.sample_rate)
        throw std::invalid_argument("logmel: clip rate disagrees with config");
    const std::size_t n = clip.samples.size();
    if ((int)n < cfg.hop) throw std::invalid_argument("logmel: clip shorter than one hop");
    const int frames = (int)(n / (std::size_t)cfg.hop) + 1;
    const int bins = cfg.n_fft / 2 + 1;
    const int pad = cfg.n_fft / 2;

    std::vector<double> window(cfg.n_fft);
    for (int i = 0; i < cfg.n_fft; ++i)
        window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / cfg.n_fft));

    const TensorT<double> fb = mel_filterbank(cfg);
    // nonzero column range per mel row, for a sparse projection
    std::vector<int> row_lo(cfg.n_mels, bins), row_hi(cfg.n_mels, 0);
    for (int m = 0; m < cfg.n_mels; ++m)
        for (int k = 0; k < bins; ++k)
            if (fb.at2((std::size_t)m, (std::size_t)k) != 0.0) {
                row_lo[m] = std::min(row_lo[m], k);
                row_hi[m] = std::max(row_hi[m], k + 1);
            }

    Tensor out({1, (std::size_t)cfg.n_mels, (std::size_t)frames});
    std::vector<std::complex<double>> frame(cfg.n_fft);
    std::vector<double> power(bins);
    for (int t = 0; t < frames; ++t) {
        const long long start = (long long)t * cfg.hop - pad;
        for (int i = 0; i < cfg.n_fft; ++i)
            frame[i] = window[i] * clip.samples[reflect_index(start + i, (long long)n)];
        fft_radix2(frame);
        for (int k = 0; k < bins; ++k) {
            const double mag2 = std::norm(frame[k]);
            power[k] = cfg.power == 2 ? mag2 : std::pow(std::sqrt(mag2), cfg.power);
        }
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            for (int k = row_lo[m]; k < row_hi[m]; ++k)
                acc += fb.at2((std::size_t)m, (std::size_t)k) * power[k];
            const double db = 10.0 * std::log10(std::max(acc, cfg.amin));
            out.at3(0, (std::size_t)m, (std::size_t)t) =
                (float)((db - cfg.norm_mean) / cfg.norm_std);
        }
    }
    ensure_finite(out, "logmel");
    return out;
}

// ---- Augmentations -------------------------------------------------------

AudioClip augment_random_roll(const AudioClip& clip, std::mt19937& rng) {
    const long long n = (long long)clip.samples.size();
    if (n == 0) return clip;
    std::uniform_int_distribution<long long> dist(-n, n);
    const long long shift = dist(rng);
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.resize((std::size_t)n);
    for (long long i = 0; i < n; ++i) {
        long long j = (i + shift) % n;
        if (j < 0) j += n;
        out.samples[(std::size_t)j] = clip.samples[(std::size_t)i];
    }
    return out;
}

AudioClip augment_speed(const AudioClip& clip, std::mt19937& rng, const SpeedConfig& cfg) {
    std::uniform_real_distribution<double> gate(0.0, 1.0);
    if (gate(rng) >= cfg.prob) return clip;
    std::uniform_real_distribution<double> rate_dist(cfg.rate_min, cfg.rate_max);
    const double r = rate_dist(rng);
    const std::size_t n = clip.samples.size();
    const std::size_t out_n = (std::size_t)std::llround((double)n / r);
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.resize(out_n);
    if (n == 0 || out_n == 0) return out;
    for (std::size_t i = 0; i < out_n; ++i) {
        const double pos = i * r;
        const std::size_t i0 = std::min((std::size_t)pos, n - 1);
        const std::size_t i1 = std::min(i0 + 1, n - 1);
        const double frac = pos - (double)i0;
        out.samples[i] = (float)((1.0 - frac) * clip.samples[i0] + frac * clip.samples[i1]);
    }
    return out;
}

Tensor augment_erase(const Tensor& spec, std::mt19937& rng, const EraseConfig& cfg) {
    std::uniform_real_distribution<double> gate(0.0, 1.0);
    if (gate(rng) >= cfg.prob) return spec;
    Tensor out = spec;
    const std::size_t F = spec.dim(1), T = spec.dim(2);
    std::uniform_real_distribution<double> area_dist(cfg.area_min, cfg.area_max);
    std::uniform_real_distribution<double> aspect_dist(std::log(cfg.aspect_min),
                                                       std::log(cfg.aspect_max));
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double area = area_dist(rng) * (double)(F * T);
        const double aspect = std::exp(aspect_dist(rng));
        const std::size_t h = (std::size_t)std::lround(std::sqrt(area * aspect));
        const std::size_t w = (std::size_t)std::lround(std::sqrt(area / aspect));
        if (h == 0 || w == 0 || h > F || w > T) continue;
        std::uniform_int_distribution<std::size_t> top_dist(0, F - h), left_dist(0, T - w);
        const std::size_t top = top_dist(rng), left = left_dist(rng);
        for (std::size_t i = top; i < top + h; ++i)
            for (std::size_t j = left; j < left + w; ++j)
                out.at3(0, i, j) = cfg.fill;
        break;
    }
    return out;
}

}  // namespace dclsnet
