#pragma once

#include "vegs/core/math.hpp"
#include "vegs/scene/rigid_transform.hpp"

#include <cstdint>

namespace vegs {

using InstanceId = std::int32_t;

/// Oriented 3D box of one instance in one frame, in world coordinates.
struct BoundingBox3D {
    Vec3 center = Vec3::Zero();
    Vec3 half_extents = Vec3::Ones();
    Quat rotation = Quat::Identity();
    InstanceId instance_id = 0;
    int frame_index = 0;

    /// Box-canonical to world transform.
    [[nodiscard]] RigidTransform pose() const { return {rotation, center}; }

    [[nodiscard]] double volume() const { return 8.0 * half_extents.prod(); }

    /// Containment with the half-extents inflated by a relative margin.
    [[nodiscard]] bool contains(const Vec3& world, double margin = 0.0) const {
        const Vec3 local = rotation.conjugate() * (world - center);
        const Vec3 limit = half_extents * (1.0 + margin);
        return std::abs(local.x()) <= limit.x() && std::abs(local.y()) <= limit.y() &&
               std::abs(local.z()) <= limit.z();
    }
};

} // namespace vegs
