#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "l2s/common.hpp"
#include "l2s/core/view.hpp"

namespace l2s {

struct LossReport {
    double value = 0.0;
    std::vector<std::pair<std::string, double>> terms;

    double term(const std::string& name) const {
        for (const auto& [k, v] : terms)
            if (k == name) return v;
        throw ConfigError("loss report has no term '" + name + "'");
    }
    void set_term(const std::string& name, double v) {
        for (auto& [k, old] : terms)
            if (k == name) {
                old = v;
                return;
            }
        terms.emplace_back(name, v);
    }
};

template <typename T>
inline void check_same_shape(const ImageT<T>& a, const ImageT<T>& b, const char* op) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError(op, (std::size_t)a.height, (std::size_t)a.width, (std::size_t)b.height,
                         (std::size_t)b.width);
}

// Mean absolute error over all pixels and channels.
template <typename T>
double l1_loss(const ImageT<T>& a, const ImageT<T>& b) {
    check_same_shape(a, b, "l1_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) s += std::fabs(double(b.rgb[i]) - double(a.rgb[i]));
    return s / double(a.rgb.size());
}

// Adds scale * dL1/db into grad. sign(0) = 0.
template <typename T>
void l1_backward(const ImageT<T>& a, const ImageT<T>& b, T scale, ImageT<T>& grad) {
    check_same_shape(a, b, "l1_backward");
    const T inv_n = T(1) / T(a.rgb.size());
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const T d = b.rgb[i] - a.rgb[i];
        grad.rgb[i] += scale * inv_n * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
    }
}

namespace detail {

// 11x11 Gaussian window, sigma 1.5, shrunk to the largest odd size that fits.
inline int ssim_window(int w, int h) {
    int win = 11;
    int m = std::min(w, h);
    if (win > m) win = (m % 2 == 1) ? m : m - 1;
    return win;
}

template <typename T>
std::vector<T> ssim_kernel(int win) {
    std::vector<T> k((std::size_t)win * win);
    const double sigma = 1.5;
    const int half = win / 2;
    double sum = 0.0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            double g = std::exp(-((x - half) * (x - half) + (y - half) * (y - half)) / (2 * sigma * sigma));
            k[(std::size_t)y * win + x] = T(g);
            sum += g;
        }
    for (auto& v : k) v = T(double(v) / sum);
    return k;
}

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

}  // namespace detail

// Mean SSIM over valid window positions (original-paper windowing: 11x11
// Gaussian, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2), averaged over channels.
template <typename T>
double ssim(const ImageT<T>& a, const ImageT<T>& b) {
    check_same_shape(a, b, "ssim");
    const int win = detail::ssim_window(a.width, a.height);
    if (win < 1) throw ShapeError("ssim", a.height, a.width, 1, 1);
    const auto k = detail::ssim_kernel<double>(win);
    const int vx = a.width - win + 1, vy = a.height - win + 1;
    double total = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int py = 0; py < vy; ++py)
            for (int px = 0; px < vx; ++px) {
                double m1 = 0, m2 = 0, s11 = 0, s22 = 0, s12 = 0;
                for (int wy = 0; wy < win; ++wy)
                    for (int wx = 0; wx < win; ++wx) {
                        const double wgt = k[(std::size_t)wy * win + wx];
                        const double va = a.px(px + wx, py + wy)[c];
                        const double vb = b.px(px + wx, py + wy)[c];
                        m1 += wgt * va;
                        m2 += wgt * vb;
                        s11 += wgt * va * va;
                        s22 += wgt * vb * vb;
                        s12 += wgt * va * vb;
                    }
                s11 -= m1 * m1;
                s22 -= m2 * m2;
                s12 -= m1 * m2;
                const double A1 = 2 * m1 * m2 + detail::kSsimC1;
                const double A2 = 2 * s12 + detail::kSsimC2;
                const double B1 = m1 * m1 + m2 * m2 + detail::kSsimC1;
                const double B2 = s11 + s22 + detail::kSsimC2;
                total += (A1 * A2) / (B1 * B2);
            }
    return total / double(3 * vx * vy);
}

// Structural dissimilarity (1 - SSIM) / 2.
template <typename T>
double d_ssim(const ImageT<T>& a, const ImageT<T>& b) {
    return (1.0 - ssim(a, b)) / 2.0;
}

// Adds scale * dD-SSIM/db into grad.
template <typename T>
void d_ssim_backward(const ImageT<T>& a, const ImageT<T>& b, T scale, ImageT<T>& grad) {
    check_same_shape(a, b, "d_ssim_backward");
    const int win = detail::ssim_window(a.width, a.height);
    const auto k = detail::ssim_kernel<double>(win);
    const int vx = a.width - win + 1, vy = a.height - win + 1;
    // d(D-SSIM)/dSSIM_p = -0.5 / count
    const double up = -0.5 / double(3 * vx * vy) * double(scale);
    for (int c = 0; c < 3; ++c)
        for (int py = 0; py < vy; ++py)
            for (int px = 0; px < vx; ++px) {
                double m1 = 0, m2 = 0, s11 = 0, s22 = 0, s12 = 0;
                for (int wy = 0; wy < win; ++wy)
                    for (int wx = 0; wx < win; ++wx) {
                        const double wgt = k[(std::size_t)wy * win + wx];
                        const double va = a.px(px + wx, py + wy)[c];
                        const double vb = b.px(px + wx, py + wy)[c];
                        m1 += wgt * va;
                        m2 += wgt * vb;
                        s11 += wgt * va * va;
                        s22 += wgt * vb * vb;
                        s12 += wgt * va * vb;
                    }
                s11 -= m1 * m1;
                s22 -= m2 * m2;
                s12 -= m1 * m2;
                const double A1 = 2 * m1 * m2 + detail::kSsimC1;
                const double A2 = 2 * s12 + detail::kSsimC2;
                const double B1 = m1 * m1 + m2 * m2 + detail::kSsimC1;
                const double B2 = s11 + s22 + detail::kSsimC2;
                const double N = A1 * A2, D = B1 * B2, D2 = D * D;
                // partials of S = N/D w.r.t. mu2, sigma12, sigma2^2
                const double dS_dm2 = (2 * m1 * A2 * D - N * 2 * m2 * B2) / D2;
                const double dS_ds12 = (2 * A1) / D;
                const double dS_ds22 = -N * B1 / D2;
                for (int wy = 0; wy < win; ++wy)
                    for (int wx = 0; wx < win; ++wx) {
                        const double wgt = k[(std::size_t)wy * win + wx];
                        const double va = a.px(px + wx, py + wy)[c];
                        const double vb = b.px(px + wx, py + wy)[c];
                        const double g = wgt * (dS_dm2 + dS_ds12 * (va - m1) + dS_ds22 * 2 * (vb - m2));
                        grad.px(px + wx, py + wy)[c] += T(up * g);
                    }
            }
}

// 0.8 * l1 + 0.2 * D-SSIM, the 3DGS reconstruction loss.
template <typename T>
LossReport inner_loss(const ImageT<T>& ref, const ImageT<T>& rendered) {
    LossReport r;
    const double l1 = l1_loss(ref, rendered);
    const double ds = d_ssim(ref, rendered);
    r.terms = {{"l1", l1}, {"d_ssim", ds}};
    r.value = 0.8 * l1 + 0.2 * ds;
    return r;
}

template <typename T>
void inner_loss_backward(const ImageT<T>& ref, const ImageT<T>& rendered, T scale, ImageT<T>& grad) {
    l1_backward(ref, rendered, T(0.8) * scale, grad);
    d_ssim_backward(ref, rendered, T(0.2) * scale, grad);
}

// Peak signal-to-noise ratio with MAX = 1, capped for (near-)identical images.
template <typename T>
double psnr(const ImageT<T>& a, const ImageT<T>& b, double cap = 99.0) {
    check_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = double(a.rgb[i]) - double(b.rgb[i]);
        mse += d * d;
    }
    mse /= double(a.rgb.size());
    if (mse <= 0.0) return cap;
    return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace l2s
