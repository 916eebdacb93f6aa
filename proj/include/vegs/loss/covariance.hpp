#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/core/math.hpp"
#include "vegs/render/rasterizer.hpp"

#include <cmath>

namespace vegs::loss {

struct CovLossResult {
    double value = 0.0;
    std::size_t masked_pixels = 0;
    /// Gradient for the world-frame orientation map (axis loss) or the scale map (scale loss).
    Image grad;
};

/// Per-pixel axis loss for an orientation matrix and a unit normal.
inline double axis_loss_pixel(const Mat3& q_cam, const Vec3& n) {
    return (std::abs(q_cam.col(0).dot(n)) + std::abs(q_cam.col(1).dot(n)) + std::abs(q_cam.col(2).dot(n))) / 3.0;
}

inline double scale_loss_pixel(const Mat3& q_cam, const Vec3& s, const Vec3& n) {
    double v = 0.0;
    for (int i = 0; i < 3; ++i) v += std::abs(s[i] * q_cam.col(i).dot(n));
    return v / 3.0;
}

/// Pixels with alpha above `threshold` and a usable (non-zero) normal.
inline std::vector<std::uint8_t> loss_mask(const render::RenderOutput& out, const Image& normals, double threshold) {
    std::vector<std::uint8_t> mask(out.alpha.pixels(), 0);
    for (int y = 0; y < out.alpha.height; ++y)
        for (int x = 0; x < out.alpha.width; ++x) {
            const Vec3 n(normals.at(x, y, 0), normals.at(x, y, 1), normals.at(x, y, 2));
            mask[static_cast<std::size_t>(y) * out.alpha.width + x] =
                out.alpha.at(x, y) > threshold && n.squaredNorm() > 0.25;
        }
    return mask;
}

namespace detail {

inline void check_normals(const render::RenderOutput& out, const Image& normals) {
    if (normals.width != out.alpha.width || normals.height != out.alpha.height || normals.channels != 3)
        throw InvalidInput("normal map must be HxWx3 at render resolution");
}

inline Vec3 normal_at(const Image& normals, int x, int y) {
    return Vec3(normals.at(x, y, 0), normals.at(x, y, 1), normals.at(x, y, 2)).normalized();
}

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace detail

/// Mean over masked pixels of sum_i |Q[:,i] . n| / 3, Q the camera-frame
/// orientation matrix. Gradient is for the world-frame orientation map.
inline CovLossResult axis_loss(const render::RenderOutput& out, const Image& normals, double threshold = 0.5) {
    detail::check_normals(out, normals);
    const auto mask = loss_mask(out, normals, threshold);
    CovLossResult r;
    for (auto m : mask) r.masked_pixels += m;
    r.grad = Image(out.alpha.width, out.alpha.height, 4);
    if (r.masked_pixels == 0) return r;
    const double inv = 1.0 / static_cast<double>(r.masked_pixels);
    for (int y = 0; y < out.alpha.height; ++y)
        for (int x = 0; x < out.alpha.width; ++x) {
            if (!mask[static_cast<std::size_t>(y) * out.alpha.width + x]) continue;
            const Vec4 q = out.orientation_at(x, y);
            const Mat3 qc = out.world_to_camera * quat_to_matrix(q);
            const Vec3 n = detail::normal_at(normals, x, y);
            r.value += axis_loss_pixel(qc, n) * inv;
            Mat3 dqc;
            for (int i = 0; i < 3; ++i) dqc.col(i) = detail::sgn(qc.col(i).dot(n)) * n * (inv / 3.0);
            const Vec4 dq = quat_to_matrix_backward(q, out.world_to_camera.transpose() * dqc);
            for (int c = 0; c < 4; ++c) r.grad.at(x, y, c) = dq[c];
        }
    return r;
}

/// Mean over masked pixels of sum_i |S[i] (Q[:,i] . n)| / 3 with Q treated as a
/// constant. Gradient is for the scale map only.
inline CovLossResult scale_loss(const render::RenderOutput& out, const Image& normals, double threshold = 0.5) {
    detail::check_normals(out, normals);
    const auto mask = loss_mask(out, normals, threshold);
    CovLossResult r;
    for (auto m : mask) r.masked_pixels += m;
    r.grad = Image(out.alpha.width, out.alpha.height, 3);
    if (r.masked_pixels == 0) return r;
    const double inv = 1.0 / static_cast<double>(r.masked_pixels);
    for (int y = 0; y < out.alpha.height; ++y)
        for (int x = 0; x < out.alpha.width; ++x) {
            if (!mask[static_cast<std::size_t>(y) * out.alpha.width + x]) continue;
            const Mat3 qc = out.orientation_camera(x, y);
            const Vec3 n = detail::normal_at(normals, x, y);
            const Vec3 s(out.scale.at(x, y, 0), out.scale.at(x, y, 1), out.scale.at(x, y, 2));
            r.value += scale_loss_pixel(qc, s, n) * inv;
            for (int i = 0; i < 3; ++i) {
                const double c = qc.col(i).dot(n);
                r.grad.at(x, y, i) = detail::sgn(s[i] * c) * c * (inv / 3.0);
            }
        }
    return r;
}

inline double cov_loss(double axis, double scale, double lambda_axis) {
    if (!(lambda_axis >= 0.0 && lambda_axis <= 1.0)) throw InvalidParameter("lambda_axis must be in [0, 1]");
    return lambda_axis * axis + (1.0 - lambda_axis) * scale;
}

} // namespace vegs::loss
