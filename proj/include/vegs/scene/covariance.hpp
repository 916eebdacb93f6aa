#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/math.hpp"

#include <cmath>

namespace vegs {

inline constexpr double kUnitQuatTolerance = 1e-6;

/// Sigma = R S S^T R^T for a unit (w, x, y, z) quaternion and per-axis std-devs.
inline Mat3 compose_covariance(const Vec4& rotation, const Vec3& scales) {
    if (std::abs(rotation.norm() - 1.0) > kUnitQuatTolerance)
        throw InvalidParameter("compose_covariance: quaternion is not unit-norm");
    if ((scales.array() <= 0.0).any()) throw InvalidParameter("compose_covariance: scales must be positive");
    const Mat3 m = quat_to_matrix(rotation) * scales.asDiagonal();
    return m * m.transpose();
}

inline Mat3 compose_covariance(const Quat& rotation, const Vec3& scales) {
    return compose_covariance(to_wxyz(rotation), scales);
}

} // namespace vegs
