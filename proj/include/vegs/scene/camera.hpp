#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/math.hpp"
#include "vegs/scene/rigid_transform.hpp"

#include <optional>

namespace vegs {

/// Pinhole intrinsics in pixels. Pixel (i, j) has its center at (i + 0.5, j + 0.5).
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    double skew = 0.0;

    [[nodiscard]] Mat3 matrix() const {
        Mat3 k;
        k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
        return k;
    }
};

/// Camera frame convention: x right, y down, z forward.
struct Camera {
    Intrinsics intrinsics;
    RigidTransform world_to_camera;
    int width = 0;
    int height = 0;

    void validate() const {
        if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0))
            throw InvalidParameter("camera focal lengths must be positive");
        if (width <= 0 || height <= 0) throw InvalidParameter("camera image size must be positive");
    }

    [[nodiscard]] RigidTransform camera_to_world() const { return world_to_camera.inverse(); }
    [[nodiscard]] Vec3 center() const { return camera_to_world().translation; }
    [[nodiscard]] Mat3 rotation_world_to_camera() const { return world_to_camera.rotation_matrix(); }

    /// Optical axis (camera +z) in world coordinates.
    [[nodiscard]] Vec3 forward() const { return camera_to_world().apply_direction(Vec3::UnitZ()); }
    [[nodiscard]] Vec3 right() const { return camera_to_world().apply_direction(Vec3::UnitX()); }

    [[nodiscard]] Vec3 to_camera(const Vec3& world) const { return world_to_camera.apply(world); }

    /// Pixel coordinates and camera depth; nullopt when at or behind the near plane.
    [[nodiscard]] std::optional<Vec3> project(const Vec3& world, double near = 1e-6) const {
        const Vec3 p = to_camera(world);
        if (p.z() <= near) return std::nullopt;
        const double u = intrinsics.fx * p.x() / p.z() + intrinsics.skew * p.y() / p.z() + intrinsics.cx;
        const double v = intrinsics.fy * p.y() / p.z() + intrinsics.cy;
        return Vec3(u, v, p.z());
    }

    [[nodiscard]] bool inside(double u, double v) const { return u >= 0.0 && v >= 0.0 && u < width && v < height; }

    /// World-space ray direction (unit) through a pixel position.
    [[nodiscard]] Vec3 ray_direction(double u, double v) const {
        const double y = (v - intrinsics.cy) / intrinsics.fy;
        const double x = (u - intrinsics.cx - intrinsics.skew * y) / intrinsics.fx;
        return camera_to_world().apply_direction(Vec3(x, y, 1.0).normalized());
    }
};

/// Camera at `eye` looking at `target`; `up` is the world up direction.
inline Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, const Intrinsics& k, int width,
                      int height) {
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = z.cross(up).normalized();
    const Vec3 y = z.cross(x);
    Mat3 r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    Camera cam;
    cam.intrinsics = k;
    cam.world_to_camera = RigidTransform(r, -(r * eye));
    cam.width = width;
    cam.height = height;
    return cam;
}

} // namespace vegs
