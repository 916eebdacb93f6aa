#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace vegs::loss {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossResult {
    double value = 0.0;
    Image grad;
};

namespace detail {

inline std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

/// Same-size separable Gaussian filtering of every channel, zero padded.
inline Image blur(const Image& in) {
    static const auto win = gaussian_window();
    constexpr int r = kSsimWindow / 2;
    const int w = in.width, h = in.height, c = in.channels;
    Image tmp(w, h, c), out(w, h, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int k = -r; k <= r; ++k) {
                    const int xx = x + k;
                    if (xx >= 0 && xx < w) s += win[k + r] * in.at(xx, y, ch);
                }
                tmp.at(x, y, ch) = s;
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int k = -r; k <= r; ++k) {
                    const int yy = y + k;
                    if (yy >= 0 && yy < h) s += win[k + r] * tmp.at(x, yy, ch);
                }
                out.at(x, y, ch) = s;
            }
    return out;
}

inline Image product(const Image& a, const Image& b) {
    Image out(a.width, a.height, a.channels);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

} // namespace detail

/// Mean SSIM over pixels and channels; `grad`, when requested, is dSSIM/dx.
inline double ssim(const Image& x, const Image& y, Image* grad = nullptr) {
    require_same_shape(x, y, "ssim");
    const std::size_t n = x.data.size();
    if (n == 0) throw InvalidInput("ssim: empty image");
    const Image mx = detail::blur(x), my = detail::blur(y);
    const Image exx = detail::blur(detail::product(x, x));
    const Image eyy = detail::blur(detail::product(y, y));
    const Image exy = detail::blur(detail::product(x, y));
    double total = 0.0;
    Image da, db, dc;
    if (grad != nullptr) {
        da = Image(x.width, x.height, x.channels);
        db = da;
        dc = da;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ux = mx.data[i], uy = my.data[i];
        const double sxx = exx.data[i] - ux * ux, syy = eyy.data[i] - uy * uy, sxy = exy.data[i] - ux * uy;
        const double n1 = 2.0 * ux * uy + kSsimC1, n2 = 2.0 * sxy + kSsimC2;
        const double d1 = ux * ux + uy * uy + kSsimC1, d2 = sxx + syy + kSsimC2;
        const double s = n1 * n2 / (d1 * d2);
        total += s;
        if (grad == nullptr) continue;
        const double ds_n1 = s / n1, ds_n2 = s / n2, ds_d1 = -s / d1, ds_d2 = -s / d2;
        da.data[i] = inv_n * (ds_n1 * 2.0 * uy - ds_n2 * 2.0 * uy + ds_d1 * 2.0 * ux - ds_d2 * 2.0 * ux);
        db.data[i] = inv_n * ds_d2;
        dc.data[i] = inv_n * 2.0 * ds_n2;
    }
    if (grad != nullptr) {
        const Image fa = detail::blur(da), fb = detail::blur(db), fc = detail::blur(dc);
        *grad = Image(x.width, x.height, x.channels);
        for (std::size_t i = 0; i < n; ++i)
            grad->data[i] = fa.data[i] + 2.0 * x.data[i] * fb.data[i] + y.data[i] * fc.data[i];
    }
    return total * inv_n;
}

/// (1 - lambda) * mean|x - y| + lambda * (1 - SSIM) / 2, with gradient for x.
inline LossResult photometric_loss(const Image& render, const Image& target, double lambda_dssim) {
    require_same_shape(render, target, "photometric_loss");
    if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) throw InvalidParameter("lambda_dssim must be in [0, 1]");
    const std::size_t n = render.data.size();
    if (n == 0) throw InvalidInput("photometric_loss: empty image");
    LossResult r;
    r.grad = Image(render.width, render.height, render.channels);
    double l1 = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = render.data[i] - target.data[i];
        l1 += std::abs(d);
        r.grad.data[i] = (1.0 - lambda_dssim) * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    r.value = (1.0 - lambda_dssim) * l1 * inv_n;
    if (lambda_dssim > 0.0) {
        Image g;
        const double s = ssim(render, target, &g);
        r.value += lambda_dssim * (1.0 - s) / 2.0;
        for (std::size_t i = 0; i < n; ++i) r.grad.data[i] -= lambda_dssim * 0.5 * g.data[i];
    }
    return r;
}

} // namespace vegs::loss
