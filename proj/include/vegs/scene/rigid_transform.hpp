#pragma once

#include "vegs/core/math.hpp"

namespace vegs {

/// Proper rigid motion x -> R x + t with R stored as a unit quaternion.
struct RigidTransform {
    Quat rotation = Quat::Identity();
    Vec3 translation = Vec3::Zero();

    RigidTransform() = default;
    RigidTransform(const Quat& q, const Vec3& t) : rotation(q.normalized()), translation(t) {}
    RigidTransform(const Mat3& r, const Vec3& t) : rotation(Quat(r).normalized()), translation(t) {}

    static RigidTransform identity() { return {}; }
    static RigidTransform from_translation(const Vec3& t) { return {Quat::Identity(), t}; }
    static RigidTransform from_rotation(const Quat& q) { return {q, Vec3::Zero()}; }

    [[nodiscard]] Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

    [[nodiscard]] Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = rotation_matrix();
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    [[nodiscard]] Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    [[nodiscard]] Vec3 apply_direction(const Vec3& d) const { return rotation * d; }

    [[nodiscard]] RigidTransform inverse() const {
        RigidTransform out;
        out.rotation = rotation.conjugate();
        out.translation = -(out.rotation * translation);
        return out;
    }

    /// (a * b).apply(p) == a.apply(b.apply(p))
    friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
        RigidTransform out;
        out.rotation = a.rotation * b.rotation;
        out.translation = a.rotation * b.translation + a.translation;
        return out;
    }

    [[nodiscard]] bool is_approx(const RigidTransform& o, double tol = 1e-9) const {
        return rotation.angularDistance(o.rotation) <= tol && (translation - o.translation).norm() <= tol;
    }
};

} // namespace vegs
