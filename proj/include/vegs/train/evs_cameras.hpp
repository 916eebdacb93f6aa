#pragma once

#include "vegs/core/math.hpp"
#include "vegs/scene/camera.hpp"

#include <string>
#include <vector>

namespace vegs::train {

enum class EvsMode { LR, D };

inline constexpr double kEvsYawDeg = 60.0;
inline constexpr double kEvsPitchDeg = 10.0;
inline constexpr double kEvsLift = 1.0;

inline EvsMode parse_evs_mode(const std::string& s) {
    if (s == "LR") return EvsMode::LR;
    if (s == "D") return EvsMode::D;
    throw InvalidParameter("unknown EVS mode: " + s);
}

/// Same camera with its orientation replaced; the center is kept.
inline Camera with_camera_to_world(const Camera& cam, const Mat3& c2w_rotation, const Vec3& center) {
    Camera out = cam;
    const Mat3 r = c2w_rotation.transpose();
    out.world_to_camera = RigidTransform(r, -(r * center));
    return out;
}

/// Yaw about world +Z through the camera center; positive turns left.
inline Camera yaw_camera(const Camera& cam, double degrees) {
    const Mat3 c2w = cam.camera_to_world().rotation_matrix();
    return with_camera_to_world(cam, rotation_z(deg2rad(degrees)) * c2w, cam.center());
}

/// Pitches the optical axis down by `degrees` about the camera x axis, then
/// lifts the center by `lift` along world +Z.
inline Camera pitch_lift_camera(const Camera& cam, double degrees, double lift) {
    const Mat3 c2w = cam.camera_to_world().rotation_matrix();
    // Camera y points down, so rotating z toward +y tilts the view downward.
    return with_camera_to_world(cam, c2w * rotation_x(-deg2rad(degrees)), cam.center() + Vec3(0.0, 0.0, lift));
}

/// LR: two cameras per input (yaw +60 then -60). D: one camera per input.
inline std::vector<Camera> augment_evs_cameras(const std::vector<Camera>& cams, EvsMode mode) {
    std::vector<Camera> out;
    out.reserve(cams.size() * (mode == EvsMode::LR ? 2 : 1));
    for (const auto& c : cams) {
        if (mode == EvsMode::LR) {
            out.push_back(yaw_camera(c, kEvsYawDeg));
            out.push_back(yaw_camera(c, -kEvsYawDeg));
        } else {
            out.push_back(pitch_lift_camera(c, kEvsPitchDeg, kEvsLift));
        }
    }
    return out;
}

} // namespace vegs::train
