#pragma once

#include "vegs/lidar/bundle.hpp"
#include "vegs/synthetic/scene.hpp"

#include <cmath>
#include <vector>

namespace vegs::synthetic {

inline const Vec3 kSkyColor{0.55, 0.7, 0.9};

struct CorridorOptions {
    int frames = 35;
    double length = 40.0;
    double width = 6.0;
    double wall_height = 3.0;
    double camera_height = 1.5;
    double start_x = 0.0;
    double step = 0.5;
    int image_width = 128;
    int image_height = 96;
    double focal = 64.0;
    int supersample = 2;
    LidarPattern lidar;
};

/// Ground plane plus two textured walls along +x.
inline World corridor_world(const CorridorOptions& o) {
    World w;
    const double y0 = -o.width / 2.0, x0 = -5.0;
    Rect ground;
    ground.origin = {x0, y0, 0.0};
    ground.u_axis = Vec3::UnitX();
    ground.v_axis = Vec3::UnitY();
    ground.u_len = o.length;
    ground.v_len = o.width;
    ground.texture = checker_texture({0.35, 0.33, 0.3}, {0.7, 0.68, 0.6}, 1.0);
    w.statics.push_back(ground);
    Rect left;  // y = +width/2, facing -y
    left.origin = {x0, -y0, 0.0};
    left.u_axis = Vec3::UnitZ();
    left.v_axis = Vec3::UnitX();
    left.u_len = o.wall_height;
    left.v_len = o.length;
    left.texture = brick_texture({0.7, 0.3, 0.2}, {0.85, 0.85, 0.8}, 0.9, 0.4);
    w.statics.push_back(left);
    Rect right;  // y = -width/2, facing +y
    right.origin = {x0, y0, 0.0};
    right.u_axis = Vec3::UnitX();
    right.v_axis = Vec3::UnitZ();
    right.u_len = o.length;
    right.v_len = o.wall_height;
    right.texture = stripe_texture({0.2, 0.4, 0.65}, {0.8, 0.85, 0.5}, 1.3);
    w.statics.push_back(right);
    return w;
}

/// Forward-facing cameras along the corridor with a small lateral sway.
inline std::vector<Camera> corridor_cameras(const CorridorOptions& o) {
    std::vector<Camera> cams;
    Intrinsics k{o.focal, o.focal, o.image_width / 2.0, o.image_height / 2.0, 0.0};
    for (int i = 0; i < o.frames; ++i) {
        const Vec3 eye(o.start_x + o.step * i, 0.4 * std::sin(0.35 * i), o.camera_height);
        const double yaw = deg2rad(5.0 * std::sin(0.5 * i));
        const Vec3 dir(std::cos(yaw), std::sin(yaw), 0.0);
        cams.push_back(look_at(eye, eye + dir, Vec3::UnitZ(), k, o.image_width, o.image_height));
    }
    return cams;
}

/// Sensor frame at the camera center: x forward, y left, z up.
inline RigidTransform sensor_pose_for(const Camera& cam) {
    const Vec3 f = cam.forward();
    const Vec3 fwd = Vec3(f.x(), f.y(), 0.0).normalized();
    Mat3 r;
    r.col(0) = fwd;
    r.col(1) = Vec3::UnitZ().cross(fwd);
    r.col(2) = Vec3::UnitZ();
    return RigidTransform(r, cam.center());
}

inline BundleFrame make_frame(const World& w, const BoxPoses& poses, const Camera& cam, int index,
                              const LidarPattern& lidar, int supersample, const Vec3& background) {
    BundleFrame f;
    f.index = index;
    f.camera = cam;
    const auto truth = render_truth(w, poses, cam, background, supersample);
    f.image = truth.color;
    f.normals = truth.normals;
    f.lidar.frame_index = index;
    f.lidar.sensor_to_world = sensor_pose_for(cam);
    f.lidar.points = lidar_scan(w, poses, f.lidar.sensor_to_world, lidar);
    for (const auto& b : w.boxes) {
        const auto it = poses.find(b.id);
        if (it == poses.end()) continue;
        BoundingBox3D box;
        box.center = it->second.translation;
        box.rotation = it->second.rotation;
        box.half_extents = b.half_extents;
        box.instance_id = b.id;
        box.frame_index = index;
        f.boxes.push_back(box);
    }
    return f;
}

inline SceneBundle make_corridor_bundle(const CorridorOptions& o = {}) {
    const World w = corridor_world(o);
    SceneBundle b;
    const auto cams = corridor_cameras(o);
    for (int i = 0; i < o.frames; ++i)
        b.frames.push_back(make_frame(w, {}, cams[static_cast<std::size_t>(i)], i, o.lidar, o.supersample, kSkyColor));
    return b;
}

struct MovingBoxOptions {
    int frames = 8;
    int image_width = 96;
    int image_height = 64;
    double focal = 60.0;
    InstanceId instance_id = 1;
    Vec3 half_extents{1.0, 0.5, 0.45};
    int supersample = 2;
    LidarPattern lidar{-90.0, 90.0, 360, -30.0, 10.0, 24, 40.0};
};

/// Ground, a back wall and one textured box driving along +x.
inline World moving_box_world(const MovingBoxOptions& o) {
    World w;
    Rect ground;
    ground.origin = {-5.0, -6.0, 0.0};
    ground.u_axis = Vec3::UnitX();
    ground.v_axis = Vec3::UnitY();
    ground.u_len = 30.0;
    ground.v_len = 12.0;
    ground.texture = checker_texture({0.3, 0.3, 0.32}, {0.55, 0.55, 0.5}, 1.0);
    w.statics.push_back(ground);
    Rect wall;  // y = +6, facing -y
    wall.origin = {-5.0, 6.0, 0.0};
    wall.u_axis = Vec3::UnitZ();
    wall.v_axis = Vec3::UnitX();
    wall.u_len = 4.0;
    wall.v_len = 30.0;
    wall.texture = brick_texture({0.6, 0.35, 0.25}, {0.8, 0.8, 0.75}, 0.9, 0.4);
    w.statics.push_back(wall);
    TexturedBox box;
    box.id = o.instance_id;
    box.half_extents = o.half_extents;
    box.texture = [](double u, double v) {
        const double s = 0.5 + 0.5 * std::sin(3.0 * u) * std::cos(2.5 * v);
        return Vec3(mix({0.85, 0.15, 0.1}, {0.95, 0.85, 0.2}, s));
    };
    w.boxes.push_back(box);
    return w;
}

inline RigidTransform moving_box_pose(int frame, const MovingBoxOptions& o) {
    const Quat yaw(Eigen::AngleAxisd(deg2rad(4.0 * frame), Vec3::UnitZ()));
    return {yaw, Vec3(5.0 + 0.7 * frame, 1.2, o.half_extents.z())};
}

inline Camera moving_box_camera(int frame, const MovingBoxOptions& o) {
    Intrinsics k{o.focal, o.focal, o.image_width / 2.0, o.image_height / 2.0, 0.0};
    const Vec3 eye(0.4 * frame, -1.5, 1.6);
    return look_at(eye, moving_box_pose(frame, o).translation + Vec3(0.0, 0.0, 0.2), Vec3::UnitZ(), k,
                   o.image_width, o.image_height);
}

inline SceneBundle make_moving_box_bundle(const MovingBoxOptions& o = {}) {
    const World w = moving_box_world(o);
    SceneBundle b;
    for (int i = 0; i < o.frames; ++i) {
        const BoxPoses poses{{o.instance_id, moving_box_pose(i, o)}};
        b.frames.push_back(make_frame(w, poses, moving_box_camera(i, o), i, o.lidar, o.supersample, kSkyColor));
    }
    return b;
}

} // namespace vegs::synthetic
