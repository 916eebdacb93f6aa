#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/loss/photometric.hpp"

#include <cmath>
#include <optional>

namespace vegs::eval {

/// Reported in place of +infinity for identical images.
inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

inline double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    if (a.data.empty()) throw InvalidInput("psnr: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return psnr_from_mse(sum / static_cast<double>(a.data.size()));
}

/// PSNR over pixels where `mask` (one channel, same size) exceeds `threshold`;
/// nullopt when no pixel qualifies.
inline std::optional<double> masked_psnr(const Image& a, const Image& b, const Image& mask, double threshold = 0.5) {
    require_same_shape(a, b, "masked_psnr");
    if (mask.width != a.width || mask.height != a.height || mask.channels != 1)
        throw InvalidInput("masked_psnr: mask must be one channel at image resolution");
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (!(mask.at(x, y) > threshold)) continue;
            for (int c = 0; c < a.channels; ++c) {
                const double d = a.at(x, y, c) - b.at(x, y, c);
                sum += d * d;
            }
            n += static_cast<std::size_t>(a.channels);
        }
    if (n == 0) return std::nullopt;
    return psnr_from_mse(sum / static_cast<double>(n));
}

inline double ssim(const Image& a, const Image& b) { return loss::ssim(a, b); }

} // namespace vegs::eval
