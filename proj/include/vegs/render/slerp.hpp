#pragma once

#include "vegs/core/math.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace vegs::render {

/// Below this rotation angle slerp degrades to normalized lerp.
inline constexpr double kSlerpLinearAngle = 1e-4;

/// Angle data of a unit quaternion q (q.w >= 0), reused across slerp calls.
struct SlerpAxis {
    Vec4 q = quat_identity();
    Vec3 v = Vec3::Zero();
    double n = 0.0;
    double phi = 0.0;

    SlerpAxis() = default;
    explicit SlerpAxis(const Vec4& quat) : q(quat), v(quat.tail<3>()), n(v.norm()), phi(std::atan2(n, quat[0])) {}
};

/// slerp(identity, q, t).
inline Vec4 slerp_from_identity(const SlerpAxis& a, double t) {
    if (t == 0.0) return quat_identity();
    if (t == 1.0) return a.q;
    if (a.phi < kSlerpLinearAngle) {
        const Vec4 u = (1.0 - t) * quat_identity() + t * a.q;
        return u / u.norm();
    }
    Vec4 r;
    r[0] = std::cos(t * a.phi);
    r.tail<3>() = std::sin(t * a.phi) / a.n * a.v;
    return r;
}

/// slerp(identity, q, t) for a unit quaternion q with q.w >= 0.
inline Vec4 slerp_from_identity(const Vec4& q, double t) { return slerp_from_identity(SlerpAxis(q), t); }

/// Gradients of slerp_from_identity with respect to q and t.
inline std::pair<Vec4, double> slerp_from_identity_backward(const SlerpAxis& a, double t, const Vec4& g) {
    const Vec4& q = a.q;
    const double w = q[0];
    const double n = a.n;
    const double phi = a.phi;
    if (phi < kSlerpLinearAngle) {
        const Vec4 u = (1.0 - t) * quat_identity() + t * q;
        const Vec4 du = normalize_backward(u, g);
        return {t * du, du.dot(q - quat_identity())};
    }
    const Vec3 vhat = a.v / n;
    const Vec3 gv = g.tail<3>();
    const double s = std::sin(t * phi), c = std::cos(t * phi);
    const double dt = -phi * s * g[0] + phi * c * gv.dot(vhat);
    const double gphi = -t * s * g[0] + t * c * gv.dot(vhat);
    const double r2 = w * w + n * n;
    Vec4 dq;
    dq[0] = gphi * (-n / r2);
    dq.tail<3>() = gphi * (w / r2) * vhat + s / n * (gv - vhat * vhat.dot(gv));
    return {dq, dt};
}

inline std::pair<Vec4, double> slerp_from_identity_backward(const Vec4& q, double t, const Vec4& g) {
    return slerp_from_identity_backward(SlerpAxis(q), t, g);
}

/// Unit-norm copy; left untouched when already unit to within rounding.
inline Vec4 renormalize(const Vec4& q) {
    const double n = q.norm();
    return std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() ? q : Vec4(q / n);
}

struct SlerpEntry {
    Vec4 q;
    double weight;
};

/// Front-to-back product: acc <- slerp(I, q_j, w_j) * acc, renormalized at the end.
inline Vec4 slerp_accumulate(std::span<const SlerpEntry> entries) {
    Vec4 acc = quat_identity();
    for (const auto& e : entries) acc = quat_mul(slerp_from_identity(e.q, e.weight), acc);
    return renormalize(acc);
}

inline Vec4 slerp_accumulate(const std::vector<SlerpEntry>& entries) {
    return slerp_accumulate(std::span<const SlerpEntry>(entries));
}

} // namespace vegs::render
