#include <unistd.h>
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

#include "dclsnet/audio.hpp"
#include "dclsnet/fft.hpp"

using namespace dclsnet;

namespace {

std::string temp_path(const char* stem) {
    return std::string("/tmp/dclsnet_audio_") + stem + "_" + std::to_string(::getpid()) + ".wav";
}

// hand-rolled writer so load_wav is tested against raw bytes, not save_wav
void write_raw_wav(const std::string& path, uint16_t format, uint16_t channels, uint32_t rate,
                   uint16_t bits, const std::vector<unsigned char>& payload) {
    std::ofstream f(path, std::ios::binary);
    auto w16 = [&](uint16_t v) { f.write((const char*)&v, 2); };
    auto w32 = [&](uint32_t v) { f.write((const char*)&v, 4); };
    f.write("RIFF", 4);
    w32(36 + (uint32_t)payload.size());
    f.write("WAVEfmt ", 8);
    w32(16);
    w16(format);
    w16(channels);
    w32(rate);
    w32(rate * channels * bits / 8);
    w16((uint16_t)(channels * bits / 8));
    w16(bits);
    f.write("data", 4);
    w32((uint32_t)payload.size());
    f.write((const char*)payload.data(), (std::streamsize)payload.size());
}

AudioClip sine_clip(double freq, double seconds, int rate, float amp = 1.0f) {
    AudioClip c;
    c.sample_rate = rate;
    c.samples.resize((std::size_t)(seconds * rate));
    for (std::size_t i = 0; i < c.samples.size(); ++i)
        c.samples[i] = amp * (float)std::sin(2.0 * M_PI * freq * i / rate);
    return c;
}

}  // namespace

TEST_CASE("load_wav: PCM16 scaling by 1/32768") {
    const std::string path = temp_path("pcm16");
    std::vector<unsigned char> payload(4);
    const int16_t a = 16384, b = -32768;
    std::memcpy(payload.data(), &a, 2);
    std::memcpy(payload.data() + 2, &b, 2);
    write_raw_wav(path, 1, 1, 32000, 16, payload);
    AudioClip c = load_wav(path);
    REQUIRE(c.samples.size() == 2);
    CHECK(c.samples[0] == doctest::Approx(0.5));
    CHECK(c.samples[1] == doctest::Approx(-1.0));
    std::remove(path.c_str());
}

TEST_CASE("load_wav: stereo float32 averaged to mono") {
    const std::string path = temp_path("stereo");
    std::vector<unsigned char> payload(8);
    const float l = 0.2f, r = 0.4f;
    std::memcpy(payload.data(), &l, 4);
    std::memcpy(payload.data() + 4, &r, 4);
    write_raw_wav(path, 3, 2, 32000, 32, payload);
    AudioClip c = load_wav(path);
    REQUIRE(c.samples.size() == 1);
    CHECK(c.samples[0] == doctest::Approx(0.3));
    std::remove(path.c_str());
}

TEST_CASE("load_wav: rate mismatch without resample is an error") {
    const std::string path = temp_path("badrate");
    std::vector<unsigned char> payload(2, 0);
    write_raw_wav(path, 1, 1, 44100, 16, payload);
    CHECK_THROWS_WITH_AS(load_wav(path), doctest::Contains("sample-rate mismatch"),
                         std::runtime_error);
    AudioClip c = load_wav(path, 32000, true);
    CHECK(c.sample_rate == 32000);
    std::remove(path.c_str());
}

TEST_CASE("load_wav: malformed header and unsupported codec") {
    const std::string path = temp_path("malformed");
    {
        std::ofstream f(path, std::ios::binary);
        f << "not a wav file at all, just text filling some bytes ................";
    }
    CHECK_THROWS_WITH_AS(load_wav(path), doctest::Contains("malformed wav"), std::runtime_error);
    write_raw_wav(path, 7, 1, 32000, 16, std::vector<unsigned char>(2, 0));
    CHECK_THROWS_WITH_AS(load_wav(path), doctest::Contains("unsupported wav codec"),
                         std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("wav round trip stays within one quantization step") {
    std::mt19937 rng(1);
    AudioClip c;
    c.sample_rate = 32000;
    std::uniform_real_distribution<float> u(-0.9f, 0.9f);
    c.samples.resize(1000);
    for (auto& s : c.samples) s = u(rng);
    const std::string path = temp_path("rt");
    save_wav_pcm16(path, c);
    AudioClip back = load_wav(path);
    REQUIRE(back.samples.size() == c.samples.size());
    for (std::size_t i = 0; i < c.samples.size(); ++i)
        // write scales by 32767, read divides by 32768: error <= 1.5 LSB
        CHECK(std::fabs(back.samples[i] - c.samples[i]) <= 1.5f / 32768.0f);
    std::remove(path.c_str());
}

TEST_CASE("resample_linear basics") {
    AudioClip c = sine_clip(1000.0, 0.25, 32000);
    AudioClip same = resample_linear(c, 32000);
    CHECK(same.samples == c.samples);

    AudioClip flat;
    flat.sample_rate = 32000;
    flat.samples.assign(4000, 0.25f);
    AudioClip down = resample_linear(flat, 16000);
    CHECK(down.samples.size() == 2000);
    for (float v : down.samples) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("resample keeps the dominant frequency (FFT oracle)") {
    AudioClip c = sine_clip(1000.0, 0.5, 32000);
    AudioClip half = resample_linear(c, 16000);
    CHECK(half.samples.size() == c.samples.size() / 2);
    std::vector<double> d(half.samples.begin(), half.samples.end());
    const double freq = dominant_frequency(d, 16000.0);
    CHECK(freq == doctest::Approx(1000.0).epsilon(0.01));
}

TEST_CASE("pad_or_truncate") {
    AudioClip five = sine_clip(440.0, 5.0, 32000);
    AudioClip padded = pad_or_truncate(five, 320000);
    CHECK(padded.samples.size() == 320000);
    for (std::size_t i = 5 * 32000; i < padded.samples.size(); ++i)
        CHECK(padded.samples[i] == 0.0f);
    for (std::size_t i = 0; i < five.samples.size(); ++i)
        CHECK(padded.samples[i] == five.samples[i]);

    AudioClip twelve = sine_clip(440.0, 12.0, 32000);
    AudioClip cut = pad_or_truncate(twelve, 320000);
    CHECK(cut.samples.size() == 320000);
    for (std::size_t i = 0; i < 1000; ++i) CHECK(cut.samples[i] == twelve.samples[i]);

    AudioClip exact = pad_or_truncate(padded, 320000);
    CHECK(exact.samples == padded.samples);
}

TEST_CASE("logmel: 10 s at 32 kHz gives 1 x 128 x 1001") {
    AudioClip c = sine_clip(1000.0, 10.0, 32000, 0.5f);
    FrontendConfig cfg;
    Tensor spec = logmel(c, cfg);
    CHECK(spec.shape == Shape{1, 128, 1001});
}

TEST_CASE("logmel shape law: T = floor(n/hop) + 1") {
    FrontendConfig cfg;
    cfg.n_fft = 256;
    cfg.hop = 64;
    cfg.n_mels = 16;
    std::mt19937 rng(3);
    std::uniform_int_distribution<int> len(64, 5000);
    for (int trial = 0; trial < 8; ++trial) {
        const int n = len(rng);
        AudioClip c = sine_clip(500.0, (double)n / 32000.0, 32000);
        c.samples.resize((std::size_t)n, 0.0f);
        Tensor spec = logmel(c, cfg);
        CHECK(spec.dim(2) == (std::size_t)(n / cfg.hop + 1));
    }
    AudioClip tiny;
    tiny.sample_rate = 32000;
    tiny.samples.assign(10, 0.0f);
    CHECK_THROWS(logmel(tiny, cfg));
}

TEST_CASE("logmel on silence: dB floor from amin, and normalization inverts") {
    AudioClip c;
    c.sample_rate = 32000;
    c.samples.assign(32000, 0.0f);
    FrontendConfig cfg;
    Tensor spec = logmel(c, cfg);
    const double expected = (-100.0 - cfg.norm_mean) / cfg.norm_std;
    for (float v : spec.data) {
        CHECK(v == doctest::Approx(expected).epsilon(1e-5));
        // denormalize recovers the -100 dB floor (10*log10(1e-10))
        CHECK((double)v * cfg.norm_std + cfg.norm_mean == doctest::Approx(-100.0).epsilon(1e-5));
    }
}

TEST_CASE("logmel localizes a pure tone in the expected mel band") {
    FrontendConfig cfg;
    AudioClip c = sine_clip(1000.0, 1.0, 32000, 0.8f);
    Tensor spec = logmel(c, cfg);
    // expected row: the filter with the largest response at the 1000 Hz bin
    TensorT<double> fb = mel_filterbank(cfg);
    const int bin = (int)std::lround(1000.0 * cfg.n_fft / cfg.sample_rate);
    int expected_row = 0;
    double best = -1;
    for (int m = 0; m < cfg.n_mels; ++m)
        if (fb.at2((std::size_t)m, (std::size_t)bin) > best) {
            best = fb.at2((std::size_t)m, (std::size_t)bin);
            expected_row = m;
        }
    // energy argmax over mel rows at a middle frame
    const std::size_t t = spec.dim(2) / 2;
    int got = 0;
    float top = -1e9f;
    for (int m = 0; m < cfg.n_mels; ++m)
        if (spec.at3(0, (std::size_t)m, t) > top) {
            top = spec.at3(0, (std::size_t)m, t);
            got = m;
        }
    CHECK(std::abs(got - expected_row) <= 1);
}

TEST_CASE("windowed FFT of a unit sine concentrates energy around its bin") {
    const int n_fft = 1024, sr = 32000;
    std::vector<std::complex<double>> frame(n_fft);
    for (int i = 0; i < n_fft; ++i) {
        const double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n_fft));
        frame[i] = w * std::sin(2.0 * M_PI * 1000.0 * i / sr);
    }
    fft_radix2(frame);
    const int k0 = (int)std::lround(1000.0 * n_fft / sr);
    double total = 0.0, local = 0.0;
    for (int k = 1; k <= n_fft / 2; ++k) {
        const double p = std::norm(frame[k]);
        total += p;
        if (std::abs(k - k0) <= 1) local += p;
    }
    CHECK(local / total >= 0.9);
}

TEST_CASE("hz/mel conversions") {
    CHECK(hz_to_mel(1000.0) == doctest::Approx(999.99).epsilon(1e-4));
    CHECK(mel_to_hz(hz_to_mel(440.0)) == doctest::Approx(440.0).epsilon(1e-9));
}

TEST_CASE("mel filterbank rows: bounded, unimodal, ordered supports") {
    FrontendConfig cfg;
    TensorT<double> fb = mel_filterbank(cfg);
    CHECK(fb.shape == Shape{128, 513});
    int prev_first = -1;
    for (int m = 0; m < cfg.n_mels; ++m) {
        int first = -1, peak = -1;
        double peak_v = -1;
        bool rising = true;
        for (int k = 0; k < 513; ++k) {
            const double v = fb.at2((std::size_t)m, (std::size_t)k);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            if (v > 0 && first < 0) first = k;
            if (v > peak_v) {
                peak_v = v;
                peak = k;
            }
        }
        (void)rising;
        (void)peak;
        // unimodal: non-increasing after the argmax, non-decreasing before it
        for (int k = 1; k < 513; ++k) {
            const double a = fb.at2((std::size_t)m, (std::size_t)(k - 1));
            const double b = fb.at2((std::size_t)m, (std::size_t)k);
            if (k <= peak) CHECK(b >= a - 1e-12);
            else CHECK(b <= a + 1e-12);
        }
        if (first >= 0) {
            CHECK(first >= prev_first);
            prev_first = first;
            // support inside [f_min, f_max]
            CHECK((double)first * cfg.sample_rate / cfg.n_fft >= cfg.f_min);
        }
    }
}

TEST_CASE("coarse filterbank triangles reach peaks near 1") {
    FrontendConfig cfg;
    cfg.n_mels = 8;
    TensorT<double> fb = mel_filterbank(cfg);
    for (int m = 0; m < 8; ++m) {
        double peak = 0;
        for (int k = 0; k < 513; ++k) peak = std::max(peak, fb.at2((std::size_t)m, (std::size_t)k));
        CHECK(peak > 0.9);
        CHECK(peak <= 1.0);
    }
}

TEST_CASE("random roll preserves the sample multiset and is seed-deterministic") {
    AudioClip c = sine_clip(700.0, 0.1, 32000);
    std::mt19937 r1(9), r2(9);
    AudioClip a = augment_random_roll(c, r1);
    AudioClip b = augment_random_roll(c, r2);
    CHECK(a.samples == b.samples);
    auto sa = a.samples, sc = c.samples;
    std::sort(sa.begin(), sa.end());
    std::sort(sc.begin(), sc.end());
    CHECK(sa == sc);
}

TEST_CASE("speed perturbation: gate, length bounds, worked rounding") {
    AudioClip c = sine_clip(500.0, 1.0, 32000);
    std::mt19937 rng(11);
    SpeedConfig off{0.5, 1.5, 0.0};
    CHECK(augment_speed(c, rng, off).samples == c.samples);

    SpeedConfig on{0.5, 1.5, 1.0};
    for (int i = 0; i < 10; ++i) {
        AudioClip out = augment_speed(c, rng, on);
        CHECK(out.samples.size() >= (std::size_t)std::llround(32000 / 1.5) - 1);
        CHECK(out.samples.size() <= 2 * 32000 + 1);
    }
    // r pinned to 1.5: new length = llround(320000 / 1.5) = 213333
    SpeedConfig fixed{1.5, 1.5, 1.0};
    AudioClip ten = sine_clip(500.0, 10.0, 32000);
    AudioClip fast = augment_speed(ten, rng, fixed);
    CHECK(fast.samples.size() == 213333);
}

TEST_CASE("random erase: gate, fill value, untouched cells") {
    std::mt19937 rng(13);
    Tensor spec = random_normal<float>({1, 16, 40}, 0.0f, 1.0f, rng);
    EraseConfig off;
    off.prob = 0.0;
    CHECK(augment_erase(spec, rng, off).data == spec.data);

    EraseConfig on;
    on.prob = 1.0;
    on.fill = 0.0f;
    Tensor out = augment_erase(spec, rng, on);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < spec.numel(); ++i) {
        if (out.data[i] != spec.data[i]) {
            CHECK(out.data[i] == 0.0f);
            ++changed;
        }
    }
    CHECK(changed > 0);
}
