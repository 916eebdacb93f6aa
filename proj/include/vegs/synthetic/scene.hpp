#pragma once

#include "vegs/core/image.hpp"
#include "vegs/core/math.hpp"
#include "vegs/lidar/bundle.hpp"
#include "vegs/scene/bounding_box.hpp"
#include "vegs/scene/camera.hpp"
#include "vegs/scene/gaussian_set.hpp"
#include "vegs/scene/sh.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <vector>

namespace vegs::synthetic {

/// Color as a function of surface coordinates in meters.
using Texture = std::function<Vec3(double u, double v)>;

/// Planar rectangle origin + a * u_axis + b * v_axis, a in [0, u_len], b in [0, v_len].
struct Rect {
    Vec3 origin = Vec3::Zero();
    Vec3 u_axis = Vec3::UnitX();
    Vec3 v_axis = Vec3::UnitY();
    double u_len = 1.0;
    double v_len = 1.0;
    Texture texture;

    [[nodiscard]] Vec3 normal() const { return u_axis.cross(v_axis).normalized(); }
};

/// Box in its canonical frame (centered at the origin) with one texture per face.
struct TexturedBox {
    InstanceId id = 0;
    Vec3 half_extents = Vec3::Ones();
    Texture texture;
};

struct World {
    std::vector<Rect> statics;
    std::vector<TexturedBox> boxes;
};

/// Per-frame box placements (canonical -> world).
using BoxPoses = std::map<InstanceId, RigidTransform>;

struct Hit {
    double t = 0.0;
    Vec3 point = Vec3::Zero();
    /// World-space unit normal facing the incoming ray.
    Vec3 normal = Vec3::Zero();
    Vec3 color = Vec3::Zero();
    std::optional<InstanceId> instance;
};

inline std::optional<Hit> intersect(const Rect& r, const Vec3& o, const Vec3& d) {
    const Vec3 n = r.normal();
    const double den = n.dot(d);
    if (std::abs(den) < 1e-12) return std::nullopt;
    const double t = n.dot(r.origin - o) / den;
    if (t <= 1e-9) return std::nullopt;
    const Vec3 p = o + t * d;
    const Vec3 rel = p - r.origin;
    const double a = rel.dot(r.u_axis), b = rel.dot(r.v_axis);
    if (a < 0.0 || a > r.u_len || b < 0.0 || b > r.v_len) return std::nullopt;
    Hit h;
    h.t = t;
    h.point = p;
    h.normal = den < 0.0 ? n : Vec3(-n);
    h.color = r.texture ? r.texture(a, b) : Vec3(0.5, 0.5, 0.5);
    return h;
}

/// Slab test in the box frame; the texture is looked up with the two in-face
/// coordinates (meters from the face corner) of the face that was hit.
inline std::optional<Hit> intersect(const TexturedBox& b, const RigidTransform& pose, const Vec3& o, const Vec3& d) {
    const RigidTransform inv = pose.inverse();
    const Vec3 lo = inv.apply(o), ld = inv.apply_direction(d);
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis = -1;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(ld[k]) < 1e-15) {
            if (std::abs(lo[k]) > b.half_extents[k]) return std::nullopt;
            continue;
        }
        double a = (-b.half_extents[k] - lo[k]) / ld[k], c = (b.half_extents[k] - lo[k]) / ld[k];
        if (a > c) std::swap(a, c);
        if (a > t0) {
            t0 = a;
            axis = k;
        }
        t1 = std::min(t1, c);
    }
    if (t0 > t1 || t0 <= 1e-9 || axis < 0) return std::nullopt;
    const Vec3 lp = lo + t0 * ld;
    Vec3 ln = Vec3::Zero();
    ln[axis] = ld[axis] < 0.0 ? 1.0 : -1.0;
    const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
    Hit h;
    h.t = t0;
    h.point = o + t0 * d;
    h.normal = pose.apply_direction(ln);
    const double face = ln[axis] > 0.0 ? 0.0 : 1.0;
    h.color = b.texture ? b.texture(lp[ua] + b.half_extents[ua] + 10.0 * (2 * axis + face), lp[va] + b.half_extents[va])
                        : Vec3(0.5, 0.5, 0.5);
    h.instance = b.id;
    return h;
}

inline std::optional<Hit> cast(const World& w, const BoxPoses& poses, const Vec3& o, const Vec3& d) {
    std::optional<Hit> best;
    auto take = [&best](std::optional<Hit> h) {
        if (h && (!best || h->t < best->t)) best = h;
    };
    for (const auto& r : w.statics) take(intersect(r, o, d));
    for (const auto& b : w.boxes)
        if (const auto it = poses.find(b.id); it != poses.end()) take(intersect(b, it->second, o, d));
    return best;
}

struct TruthRender {
    Image color;     ///< 3 channels
    Image depth;     ///< camera z at the pixel center; 0 where nothing is hit
    Image normals;   ///< camera-frame unit normals; 0 where nothing is hit
    Image hit;       ///< 1 where a surface is hit at the pixel center
    Image instance;  ///< 1 where an instance is hit at the pixel center
};

/// Ray-cast ground truth. Color is averaged over `supersample`^2 sub-pixel rays;
/// depth, normals and masks use the pixel center.
inline TruthRender render_truth(const World& w, const BoxPoses& poses, const Camera& cam, const Vec3& background,
                                int supersample = 2) {
    TruthRender out;
    out.color = Image(cam.width, cam.height, 3);
    out.depth = Image(cam.width, cam.height, 1);
    out.normals = Image(cam.width, cam.height, 3);
    out.hit = Image(cam.width, cam.height, 1);
    out.instance = Image(cam.width, cam.height, 1);
    const Vec3 o = cam.center();
    const Mat3 w2c = cam.rotation_world_to_camera();
    const int ss = std::max(1, supersample);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            Vec3 acc = Vec3::Zero();
            for (int sy = 0; sy < ss; ++sy)
                for (int sx = 0; sx < ss; ++sx) {
                    const double u = x + (sx + 0.5) / ss, v = y + (sy + 0.5) / ss;
                    const auto h = cast(w, poses, o, cam.ray_direction(u, v));
                    acc += h ? h->color : background;
                }
            acc /= static_cast<double>(ss * ss);
            for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = std::clamp(acc[c], 0.0, 1.0);
            const auto h = cast(w, poses, o, cam.ray_direction(x + 0.5, y + 0.5));
            if (!h) continue;
            const Vec3 nc = w2c * h->normal;
            out.depth.at(x, y) = cam.to_camera(h->point).z();
            for (int c = 0; c < 3; ++c) out.normals.at(x, y, c) = nc[c];
            out.hit.at(x, y) = 1.0;
            if (h->instance) out.instance.at(x, y) = 1.0;
        }
    return out;
}

struct LidarPattern {
    double azimuth_min_deg = -180.0;
    double azimuth_max_deg = 180.0;
    int azimuth_steps = 720;
    double elevation_min_deg = -30.0;
    double elevation_max_deg = 10.0;
    int elevation_steps = 32;
    double max_range = 60.0;
};

/// Sensor-frame hit points of a spinning scanner (sensor x forward, z up).
inline std::vector<Vec3> lidar_scan(const World& w, const BoxPoses& poses, const RigidTransform& sensor_to_world,
                                    const LidarPattern& p) {
    std::vector<Vec3> pts;
    const RigidTransform world_to_sensor = sensor_to_world.inverse();
    for (int e = 0; e < p.elevation_steps; ++e) {
        const double el = deg2rad(p.elevation_min_deg + (p.elevation_max_deg - p.elevation_min_deg) * e /
                                                            std::max(1, p.elevation_steps - 1));
        for (int a = 0; a < p.azimuth_steps; ++a) {
            const double az = deg2rad(p.azimuth_min_deg + (p.azimuth_max_deg - p.azimuth_min_deg) * a / p.azimuth_steps);
            const Vec3 ds(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
            const auto h = cast(w, poses, sensor_to_world.translation, sensor_to_world.apply_direction(ds));
            if (h && h->t <= p.max_range) pts.push_back(world_to_sensor.apply(h->point));
        }
    }
    return pts;
}

/// Flat Gaussians on a regular grid over a rectangle, colored by its texture,
/// with the normal as the thin first axis.
inline void add_surface_gaussians(GaussianSet& set, const Rect& r, double spacing, double thickness,
                                  double opacity) {
    const Vec3 n = r.normal();
    Mat3 frame;
    frame.col(0) = n;
    frame.col(1) = r.u_axis.normalized();
    frame.col(2) = n.cross(frame.col(1));
    const Vec4 q = to_wxyz(Quat(frame).normalized());
    const int nu = std::max(1, static_cast<int>(std::floor(r.u_len / spacing)));
    const int nv = std::max(1, static_cast<int>(std::floor(r.v_len / spacing)));
    for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nv; ++j) {
            const double a = (i + 0.5) * r.u_len / nu, b = (j + 0.5) * r.v_len / nv;
            const Vec3 c = r.texture ? r.texture(a, b) : Vec3(0.5, 0.5, 0.5);
            set.push_back(r.origin + a * r.u_axis + b * r.v_axis, q,
                          Vec3(thickness, 0.6 * r.u_len / nu, 0.6 * r.v_len / nv), opacity, {sh::rgb_to_dc(c)});
        }
}

/// The six faces of a canonical box as rectangles (outward normals), with the
/// same texture coordinates the ray caster uses.
inline std::vector<Rect> box_faces(const TexturedBox& b) {
    std::vector<Rect> faces;
    for (int axis = 0; axis < 3; ++axis)
        for (int face = 0; face < 2; ++face) {
            const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
            const double sign = face == 0 ? 1.0 : -1.0;
            Rect r;
            r.origin = Vec3::Zero();
            r.origin[axis] = sign * b.half_extents[axis];
            r.origin[ua] = -b.half_extents[ua];
            r.origin[va] = -b.half_extents[va];
            r.u_axis = Vec3::Unit(ua);
            r.v_axis = Vec3::Unit(va);
            r.u_len = 2.0 * b.half_extents[ua];
            r.v_len = 2.0 * b.half_extents[va];
            const double shift = 10.0 * (2 * axis + face);
            const Texture tex = b.texture;
            r.texture = [tex, shift](double u, double v) { return tex ? tex(u + shift, v) : Vec3(0.5, 0.5, 0.5); };
            // Keep u x v pointing outward.
            if (r.normal()[axis] * sign < 0.0) {
                std::swap(r.u_axis, r.v_axis);
                std::swap(r.u_len, r.v_len);
                r.texture = [tex, shift](double u, double v) { return tex ? tex(v + shift, u) : Vec3(0.5, 0.5, 0.5); };
            }
            faces.push_back(r);
        }
    return faces;
}

// Procedural textures.

inline Vec3 mix(const Vec3& a, const Vec3& b, double t) { return a + (b - a) * t; }

inline Texture checker_texture(Vec3 a, Vec3 b, double tile, double wobble = 0.15) {
    return [=](double u, double v) {
        const bool odd = (static_cast<long>(std::floor(u / tile)) + static_cast<long>(std::floor(v / tile))) % 2 != 0;
        const double shade = 1.0 + wobble * std::sin(1.7 * u + 0.3) * std::cos(1.3 * v - 0.2);
        return Vec3((odd ? b : a) * shade);
    };
}

inline Texture stripe_texture(Vec3 a, Vec3 b, double period) {
    return [=](double u, double v) {
        const double s = 0.5 + 0.5 * std::sin(2.0 * kPi * u / period);
        const double row = 0.85 + 0.15 * std::cos(2.0 * kPi * v / (1.7 * period));
        return Vec3(mix(a, b, s) * row);
    };
}

inline Texture brick_texture(Vec3 brick, Vec3 mortar, double width, double height) {
    return [=](double u, double v) {
        const long row = static_cast<long>(std::floor(v / height));
        const double shifted = u + (row % 2 != 0 ? 0.5 * width : 0.0);
        const double fu = shifted / width - std::floor(shifted / width);
        const double fv = v / height - std::floor(v / height);
        if (fu < 0.08 || fv < 0.12) return mortar;
        const double tint = 0.85 + 0.15 * std::sin(3.1 * std::floor(shifted / width) + 1.9 * row);
        return Vec3(brick * tint);
    };
}

} // namespace vegs::synthetic
