#pragma once

#include <cmath>
#include <vector>

#include "l2s/common.hpp"

namespace l2s::opt {

// DDPM-style squared-cosine schedule in [0, 1]:
//   cos(((t/T + s) / (1 + s)) * pi/2)^2
inline double cosine_lr(double t, double T, double s = 0.008) {
    if (T <= 0) throw ConfigError("cosine_lr: T must be positive");
    const double frac = std::min(1.0, std::max(0.0, t / T));
    const double a = (frac + s) / (1.0 + s) * (M_PI / 2.0);
    const double c = std::cos(a);
    return c * c;
}

// Interleaved positional encoding (sin(2^k pi p), cos(2^k pi p)), k < L.
// p is t/T when normalize is set (the default), raw t otherwise.
inline std::vector<double> time_encoding(double t, double T, int L = 6, bool normalize = true) {
    if (L <= 0) throw ConfigError("time_encoding: L must be positive");
    const double p = normalize ? (T > 0 ? t / T : 0.0) : t;
    std::vector<double> enc(2 * (std::size_t)L);
    double freq = M_PI;
    for (int k = 0; k < L; ++k) {
        enc[2 * (std::size_t)k] = std::sin(freq * p);
        enc[2 * (std::size_t)k + 1] = std::cos(freq * p);
        freq *= 2.0;
    }
    return enc;
}

}  // namespace l2s::opt
