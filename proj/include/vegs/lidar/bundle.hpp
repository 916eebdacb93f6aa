#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/io/binary.hpp"
#include "vegs/io/png.hpp"
#include "vegs/scene/bounding_box.hpp"
#include "vegs/scene/camera.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace vegs {

struct LidarFrame {
    /// Sensor-frame coordinates in meters.
    std::vector<Vec3> points;
    int frame_index = 0;
    RigidTransform sensor_to_world;
};

struct BundleFrame {
    int index = 0;
    Camera camera;
    LidarFrame lidar;
    std::vector<BoundingBox3D> boxes;
    std::string image_path;
    std::string normal_path;
    std::string lidar_path;
    /// RGB in [0, 1]; empty when not loaded or absent.
    Image image;
    /// Camera-frame unit normals, 3 channels; empty when not loaded or absent.
    Image normals;
};

/// On-disk dataset: posed images, normal maps, LiDAR scans and per-frame boxes.
struct SceneBundle {
    std::vector<BundleFrame> frames;
    double unit_scale_m = 1.0;
    std::filesystem::path root;

    [[nodiscard]] std::vector<InstanceId> instance_ids() const {
        std::vector<InstanceId> ids;
        for (const auto& f : frames)
            for (const auto& b : f.boxes) ids.push_back(b.instance_id);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        return ids;
    }

    /// Position of the frame with a given index, or -1.
    [[nodiscard]] int position_of(int frame_index) const {
        for (std::size_t i = 0; i < frames.size(); ++i)
            if (frames[i].index == frame_index) return static_cast<int>(i);
        return -1;
    }
};

namespace bundle_json {

using nlohmann::json;

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
inline json quat_json(const Quat& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

inline Vec3 to_vec3(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw InvalidInput(std::string("expected 3-vector for ") + what);
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Quat to_quat(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 4) throw InvalidInput(std::string("expected [w,x,y,z] quaternion for ") + what);
    Quat q(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
    if (q.norm() < 1e-12) throw InvalidInput(std::string("zero quaternion for ") + what);
    return q.normalized();
}

inline json transform_json(const RigidTransform& t) {
    return {{"rotation", quat_json(t.rotation)}, {"translation", vec_json(t.translation)}};
}

inline RigidTransform to_transform(const json& j, const char* what) {
    return {to_quat(j.at("rotation"), what), to_vec3(j.at("translation"), what)};
}

inline json intrinsics_json(const Camera& c) {
    return {{"fx", c.intrinsics.fx}, {"fy", c.intrinsics.fy}, {"cx", c.intrinsics.cx},
            {"cy", c.intrinsics.cy}, {"width", c.width},      {"height", c.height}};
}

inline void read_intrinsics(const json& j, Camera& c) {
    c.intrinsics.fx = j.at("fx").get<double>();
    c.intrinsics.fy = j.at("fy").get<double>();
    c.intrinsics.cx = j.at("cx").get<double>();
    c.intrinsics.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
}

} // namespace bundle_json

inline std::string frame_file_name(int index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d.%s", index, ext);
    return buf;
}

struct BundleLoadOptions {
    bool images = true;
    bool normals = true;
    bool lidar = true;
};

/// Reads `bundle.json` and the referenced payloads under `dir`.
inline SceneBundle load_bundle(const std::filesystem::path& dir, const BundleLoadOptions& opts = {}) {
    using bundle_json::json;
    const auto manifest_path = dir / "bundle.json";
    json manifest;
    try {
        manifest = json::parse(io::read_file(manifest_path));
    } catch (const json::exception& e) {
        throw InvalidInput(manifest_path.string() + ": " + e.what());
    }
    SceneBundle bundle;
    bundle.root = dir;
    bundle.unit_scale_m = manifest.value("unit_scale_m", 1.0);
    try {
        Camera shared;
        const bool has_shared = manifest.contains("intrinsics");
        if (has_shared) bundle_json::read_intrinsics(manifest.at("intrinsics"), shared);
        for (const auto& jf : manifest.at("frames")) {
            BundleFrame f;
            f.index = jf.at("index").get<int>();
            f.camera = shared;
            if (jf.contains("intrinsics")) bundle_json::read_intrinsics(jf.at("intrinsics"), f.camera);
            else if (!has_shared) throw InvalidInput("frame " + std::to_string(f.index) + " has no intrinsics");
            f.camera.world_to_camera = bundle_json::to_transform(jf.at("world_to_camera"), "world_to_camera");
            f.camera.validate();
            f.lidar.frame_index = f.index;
            if (jf.contains("sensor_to_world"))
                f.lidar.sensor_to_world = bundle_json::to_transform(jf.at("sensor_to_world"), "sensor_to_world");
            f.image_path = jf.value("image", "");
            f.normal_path = jf.value("normals", "");
            f.lidar_path = jf.value("lidar", "");
            for (const auto& jb : jf.value("boxes", json::array())) {
                BoundingBox3D b;
                b.instance_id = jb.at("instance_id").get<InstanceId>();
                b.center = bundle_json::to_vec3(jb.at("center"), "box center");
                b.half_extents = bundle_json::to_vec3(jb.at("half_extents"), "box half_extents");
                b.rotation = bundle_json::to_quat(jb.at("rotation"), "box rotation");
                b.frame_index = f.index;
                if ((b.half_extents.array() <= 0.0).any()) throw InvalidInput("box half_extents must be positive");
                f.boxes.push_back(b);
            }
            if (opts.images && !f.image_path.empty()) f.image = io::read_png(dir / f.image_path);
            if (opts.normals && !f.normal_path.empty()) {
                f.normals = io::read_plane(dir / f.normal_path);
                if (f.normals.channels != 3) throw InvalidInput(f.normal_path + ": normal map must have 3 channels");
            }
            if (opts.lidar && !f.lidar_path.empty()) f.lidar.points = io::read_lidar(dir / f.lidar_path);
            bundle.frames.push_back(std::move(f));
        }
    } catch (const json::exception& e) {
        throw InvalidInput(manifest_path.string() + ": " + e.what());
    }
    return bundle;
}

/// Writes the manifest plus every loaded payload using the canonical file names.
inline void save_bundle(const SceneBundle& bundle, const std::filesystem::path& dir) {
    using bundle_json::json;
    std::filesystem::create_directories(dir);
    json frames = json::array();
    for (const auto& f : bundle.frames) {
        json jf;
        jf["index"] = f.index;
        jf["intrinsics"] = bundle_json::intrinsics_json(f.camera);
        jf["world_to_camera"] = bundle_json::transform_json(f.camera.world_to_camera);
        jf["sensor_to_world"] = bundle_json::transform_json(f.lidar.sensor_to_world);
        if (!f.image.empty()) {
            jf["image"] = "images/" + frame_file_name(f.index, "png");
            io::write_png(dir / jf["image"].get<std::string>(), f.image);
        }
        if (!f.normals.empty()) {
            jf["normals"] = "normals/" + frame_file_name(f.index, "npyish");
            io::write_plane(dir / jf["normals"].get<std::string>(), f.normals);
        }
        if (!f.lidar.points.empty()) {
            jf["lidar"] = "lidar/" + frame_file_name(f.index, "bin");
            io::write_lidar(dir / jf["lidar"].get<std::string>(), f.lidar.points);
        }
        json boxes = json::array();
        for (const auto& b : f.boxes)
            boxes.push_back({{"instance_id", b.instance_id},
                             {"center", bundle_json::vec_json(b.center)},
                             {"half_extents", bundle_json::vec_json(b.half_extents)},
                             {"rotation", bundle_json::quat_json(b.rotation)}});
        jf["boxes"] = boxes;
        frames.push_back(jf);
    }
    json manifest = {{"format", "vegs-bundle"},
                     {"version", 1},
                     {"unit_scale_m", bundle.unit_scale_m},
                     {"up_axis", "+z"},
                     {"camera_convention", "x right, y down, z forward; world_to_camera rotation as [w,x,y,z]"},
                     {"layouts",
                      {{"images", "8-bit RGB PNG"},
                       {"normals", "uint32 height, uint32 width, then HxWx3 little-endian float32 camera-frame normals"},
                       {"lidar", "little-endian float32 x,y,z triples in sensor coordinates"}}},
                     {"frames", frames}};
    io::write_file(dir / "bundle.json", manifest.dump(2));
}

} // namespace vegs
