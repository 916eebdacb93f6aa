#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

namespace vegs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// Parameter quaternions are stored as Vec4 in (w, x, y, z) order. The helpers
// below work on that layout so gradients can be expressed per component.

inline Vec4 quat_identity() { return {1.0, 0.0, 0.0, 0.0}; }

inline Vec4 to_wxyz(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
inline Quat from_wxyz(const Vec4& q) { return Quat(q[0], q[1], q[2], q[3]); }

/// Flip to the scalar-non-negative hemisphere.
inline Vec4 canonical_hemisphere(const Vec4& q) { return q[0] < 0.0 ? Vec4(-q) : q; }

inline Quat canonical_hemisphere(const Quat& q) {
    return q.w() < 0.0 ? Quat(-q.w(), -q.x(), -q.y(), -q.z()) : q;
}

/// Hamilton product a*b.
inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

/// L(a) with a*b = L(a) b.
inline Mat4 quat_left_matrix(const Vec4& a) {
    Mat4 m;
    m << a[0], -a[1], -a[2], -a[3],
         a[1],  a[0], -a[3],  a[2],
         a[2],  a[3],  a[0], -a[1],
         a[3], -a[2],  a[1],  a[0];
    return m;
}

/// R(b) with a*b = R(b) a.
inline Mat4 quat_right_matrix(const Vec4& b) {
    Mat4 m;
    m << b[0], -b[1], -b[2], -b[3],
         b[1],  b[0],  b[3], -b[2],
         b[2], -b[3],  b[0],  b[1],
         b[3],  b[2], -b[1],  b[0];
    return m;
}

inline Vec4 quat_conjugate(const Vec4& q) { return {q[0], -q[1], -q[2], -q[3]}; }

/// Rotation matrix of a unit quaternion. No normalization is applied.
inline Mat3 quat_to_matrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
         2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
         2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

/// Pulls dL/dR back through quat_to_matrix (component-wise, without normalization).
inline Vec4 quat_to_matrix_backward(const Vec4& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 d;
    d[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                  w * g(2, 1) - 2.0 * x * g(2, 2));
    d[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                  z * g(2, 1) - 2.0 * y * g(2, 2));
    d[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                  y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

/// Backward of n = v / |v|.
template <typename DerivedV, typename DerivedG>
auto normalize_backward(const Eigen::MatrixBase<DerivedV>& v, const Eigen::MatrixBase<DerivedG>& g) {
    using Vec = typename DerivedV::PlainObject;
    const double len = v.norm();
    const Vec n = v / len;
    return Vec((g - n * n.dot(g)) / len);
}

inline Mat3 rotation_z(double radians) { return Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix(); }
inline Mat3 rotation_x(double radians) { return Eigen::AngleAxisd(radians, Vec3::UnitX()).toRotationMatrix(); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double inverse_sigmoid(double y) { return std::log(y / (1.0 - y)); }

/// Rounds to the nearest float32 value.
inline double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

template <typename Derived>
void round_f32_inplace(Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.coeffRef(i) = round_f32(m.coeff(i));
}

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

} // namespace vegs
