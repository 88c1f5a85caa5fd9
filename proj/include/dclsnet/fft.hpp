#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace dclsnet {

// In-place iterative radix-2 FFT. n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fft_radix2: length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / (double)len;
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Magnitude spectrum bin index with the largest energy (DC excluded).
inline std::size_t dominant_bin(const std::vector<double>& samples) {
    std::size_t n = 1;
    while (n < samples.size()) n <<= 1;
    std::vector<std::complex<double>> a(n, {0.0, 0.0});
    for (std::size_t i = 0; i < samples.size(); ++i) a[i] = samples[i];
    fft_radix2(a);
    std::size_t best = 1;
    double best_mag = 0.0;
    for (std::size_t i = 1; i <= n / 2; ++i) {
        const double m = std::norm(a[i]);
        if (m > best_mag) {
            best_mag = m;
            best = i;
        }
    }
    return best;
}

inline double dominant_frequency(const std::vector<double>& samples, double sample_rate) {
    std::size_t n = 1;
    while (n < samples.size()) n <<= 1;
    return (double)dominant_bin(samples) * sample_rate / (double)n;
}

}  // namespace dclsnet
