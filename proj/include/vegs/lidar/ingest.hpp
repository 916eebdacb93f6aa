#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/math.hpp"
#include "vegs/lidar/bundle.hpp"
#include "vegs/scene/bounding_box.hpp"
#include "vegs/scene/gaussian_set.hpp"
#include "vegs/scene/scene_graph.hpp"
#include "vegs/scene/sh.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace vegs::lidar {

/// Relative half-extent inflation used for box containment.
inline constexpr double kDefaultBoxMargin = 0.05;

struct Partition {
    /// Indices into the input scan, in input order.
    std::vector<std::size_t> static_indices;
    std::map<InstanceId, std::vector<std::size_t>> dynamic_indices;
};

/// Splits a scan into box-free points and per-instance points. A point inside
/// several boxes goes to the smallest-volume box (first in list on equal volume).
inline Partition partition_points(const LidarFrame& frame, std::span<const BoundingBox3D> boxes,
                                  double margin = kDefaultBoxMargin) {
    Partition out;
    for (std::size_t i = 0; i < frame.points.size(); ++i) {
        const Vec3 world = frame.sensor_to_world.apply(frame.points[i]);
        const BoundingBox3D* owner = nullptr;
        for (const auto& box : boxes) {
            if (!box.contains(world, margin)) continue;
            if (owner == nullptr || box.volume() < owner->volume()) owner = &box;
        }
        if (owner == nullptr) out.static_indices.push_back(i);
        else out.dynamic_indices[owner->instance_id].push_back(i);
    }
    return out;
}

/// Indices of the first point falling in each voxel cell, in input order.
inline std::vector<std::size_t> voxel_downsample_indices(std::span<const Vec3> points, double voxel) {
    std::vector<std::size_t> kept;
    if (!(voxel > 0.0)) {
        kept.resize(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) kept[i] = i;
        return kept;
    }
    struct CellHash {
        std::size_t operator()(const Eigen::Matrix<std::int64_t, 3, 1>& c) const {
            std::uint64_t h = 1469598103934665603ull;
            for (int k = 0; k < 3; ++k) h = (h ^ static_cast<std::uint64_t>(c[k])) * 1099511628211ull;
            return static_cast<std::size_t>(h);
        }
    };
    std::unordered_map<Eigen::Matrix<std::int64_t, 3, 1>, std::size_t, CellHash> cells;
    cells.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Eigen::Matrix<std::int64_t, 3, 1> cell = (points[i] / voxel).array().floor().cast<std::int64_t>();
        if (cells.emplace(cell, i).second) kept.push_back(i);
    }
    return kept;
}

inline std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double voxel) {
    std::vector<Vec3> out;
    for (std::size_t i : voxel_downsample_indices(points, voxel)) out.push_back(points[i]);
    return out;
}

/// Canonical-box-frame cloud of one instance: concatenation over frames of its
/// culled points mapped by (box pose)^-1 * sensor_to_world.
inline std::vector<Vec3> build_instance_map(const SceneBundle& bundle, InstanceId id,
                                            double margin = kDefaultBoxMargin) {
    std::vector<Vec3> out;
    bool observed = false;
    for (const auto& frame : bundle.frames) {
        const BoundingBox3D* box = nullptr;
        for (const auto& b : frame.boxes)
            if (b.instance_id == id) box = &b;
        if (box == nullptr) continue;
        observed = true;
        const Partition part = partition_points(frame.lidar, frame.boxes, margin);
        const auto it = part.dynamic_indices.find(id);
        if (it == part.dynamic_indices.end()) continue;
        const RigidTransform to_canonical = box->pose().inverse() * frame.lidar.sensor_to_world;
        for (std::size_t i : it->second) out.push_back(to_canonical.apply(frame.lidar.points[i]));
    }
    if (!observed || out.empty())
        throw EmptyInstanceError("instance " + std::to_string(id) + " has no LiDAR points in any frame");
    return out;
}

/// World-frame static map: box-free points of every frame, optionally voxel-downsampled last.
inline std::vector<Vec3> build_static_map(const SceneBundle& bundle, double voxel = 0.0,
                                          double margin = kDefaultBoxMargin) {
    std::vector<Vec3> out;
    for (const auto& frame : bundle.frames) {
        const Partition part = partition_points(frame.lidar, frame.boxes, margin);
        for (std::size_t i : part.static_indices) out.push_back(frame.lidar.sensor_to_world.apply(frame.lidar.points[i]));
    }
    return voxel > 0.0 ? voxel_downsample(out, voxel) : out;
}

/// Per bundle frame (by position): transform placing the points in the world, or
/// nullopt when the points are not present in that frame.
using Placement = std::vector<std::optional<RigidTransform>>;

inline Placement static_placement(const SceneBundle& bundle) {
    return Placement(bundle.frames.size(), RigidTransform::identity());
}

inline Placement instance_placement(const SceneBundle& bundle, InstanceId id) {
    Placement out(bundle.frames.size());
    for (std::size_t f = 0; f < bundle.frames.size(); ++f)
        for (const auto& b : bundle.frames[f].boxes)
            if (b.instance_id == id) out[f] = b.pose();
    return out;
}

struct VisibilityOptions {
    double relative_depth_tolerance = 0.05;
    /// Z-buffer splat half-width in pixels.
    int splat_radius = 1;
    double near = 1e-3;
};

struct Observation {
    int frame_position;
    int px;
    int py;
    double distance;
};

namespace detail {

/// Visible observations of every point, ordered by frame position.
inline std::vector<std::vector<Observation>> observe(std::span<const Vec3> points, const SceneBundle& bundle,
                                                     const Placement& placement, std::span<const Vec3> occluders,
                                                     const VisibilityOptions& opts) {
    std::vector<std::vector<Observation>> obs(points.size());
    std::vector<double> zbuf;
    std::vector<Vec3> placed(points.size());
    for (std::size_t f = 0; f < bundle.frames.size(); ++f) {
        if (f >= placement.size() || !placement[f]) continue;
        const Camera& cam = bundle.frames[f].camera;
        const int w = cam.width, h = cam.height;
        zbuf.assign(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
        auto splat = [&](const Vec3& world) {
            const auto p = cam.project(world, opts.near);
            if (!p || !cam.inside((*p)[0], (*p)[1])) return;
            const int cx = static_cast<int>((*p)[0]), cy = static_cast<int>((*p)[1]);
            for (int y = std::max(0, cy - opts.splat_radius); y <= std::min(h - 1, cy + opts.splat_radius); ++y)
                for (int x = std::max(0, cx - opts.splat_radius); x <= std::min(w - 1, cx + opts.splat_radius); ++x) {
                    double& z = zbuf[static_cast<std::size_t>(y) * w + x];
                    z = std::min(z, (*p)[2]);
                }
        };
        for (std::size_t i = 0; i < points.size(); ++i) {
            placed[i] = placement[f]->apply(points[i]);
            splat(placed[i]);
        }
        for (const auto& o : occluders) splat(o);
        const Vec3 center = cam.center();
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto p = cam.project(placed[i], opts.near);
            if (!p || !cam.inside((*p)[0], (*p)[1])) continue;
            const int px = static_cast<int>((*p)[0]), py = static_cast<int>((*p)[1]);
            const double zb = zbuf[static_cast<std::size_t>(py) * w + px];
            if ((*p)[2] > zb * (1.0 + opts.relative_depth_tolerance)) continue;
            obs[i].push_back({static_cast<int>(f), px, py, (placed[i] - center).norm()});
        }
    }
    return obs;
}

} // namespace detail

inline const Vec3 kUnseenColor{0.5, 0.5, 0.5};

/// Color of the projected pixel in the nearest visible frame (lowest frame on
/// equal distance); mid-gray when never visible.
inline std::vector<Vec3> assign_colors(std::span<const Vec3> points, const SceneBundle& bundle,
                                       const Placement& placement, std::span<const Vec3> occluders = {},
                                       const VisibilityOptions& opts = {}) {
    const auto obs = detail::observe(points, bundle, placement, occluders, opts);
    std::vector<Vec3> colors(points.size(), kUnseenColor);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Observation* best = nullptr;
        for (const auto& o : obs[i]) {
            if (bundle.frames[o.frame_position].image.empty()) continue;
            if (best == nullptr || o.distance < best->distance) best = &o;
        }
        if (best == nullptr) continue;
        const Image& img = bundle.frames[best->frame_position].image;
        colors[i] = {img.at(best->px, best->py, 0), img.at(best->px, best->py, 1), img.at(best->px, best->py, 2)};
    }
    return colors;
}

inline std::vector<Vec3> assign_colors(std::span<const Vec3> world_points, const SceneBundle& bundle) {
    return assign_colors(world_points, bundle, static_placement(bundle), {}, {});
}

struct CovarianceInit {
    std::vector<Vec4> rotations;
    std::vector<Vec3> scales;
};

struct CovarianceInitOptions {
    Vec3 surface_scales{1e-5, 1e-1, 1e-1};
    Vec3 fallback_scales{1e-2, 1e-2, 1e-2};
};

/// Picks the normal with the largest row sum of the pairwise cosine-similarity
/// matrix (self-similarity included; first wins ties).
inline Vec3 select_consensus_normal(std::span<const Vec3> normals) {
    std::size_t best = 0;
    double best_sum = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < normals.size(); ++i) {
        double sum = 0.0;
        for (const auto& n : normals) sum += normals[i].dot(n);
        if (sum > best_sum) {
            best_sum = sum;
            best = i;
        }
    }
    return normals[best];
}

/// Right-handed orthonormal frame whose first column is `normal`. The second
/// column orthogonalizes the least-aligned world axis against it (Gram-Schmidt);
/// the third completes the frame.
inline Mat3 frame_from_normal(const Vec3& normal) {
    const Vec3 n = normal.normalized();
    int least = 0;
    for (int k = 1; k < 3; ++k)
        if (std::abs(n[k]) < std::abs(n[least])) least = k;
    const Vec3 helper = Vec3::Unit(least);
    const Vec3 a1 = (helper - helper.dot(n) * n).normalized();
    Mat3 r;
    r.col(0) = n;
    r.col(1) = a1;
    r.col(2) = n.cross(a1);
    return r;
}

inline CovarianceInit init_covariance_frames(std::span<const Vec3> points, const SceneBundle& bundle,
                                             const Placement& placement, std::span<const Vec3> occluders = {},
                                             const VisibilityOptions& vis = {},
                                             const CovarianceInitOptions& opts = {}) {
    const auto obs = detail::observe(points, bundle, placement, occluders, vis);
    CovarianceInit out;
    out.rotations.resize(points.size(), quat_identity());
    out.scales.resize(points.size(), opts.fallback_scales);
    std::vector<Vec3> gathered;
    for (std::size_t i = 0; i < points.size(); ++i) {
        gathered.clear();
        for (const auto& o : obs[i]) {
            const BundleFrame& frame = bundle.frames[o.frame_position];
            if (frame.normals.empty()) continue;
            const Vec3 nc(frame.normals.at(o.px, o.py, 0), frame.normals.at(o.px, o.py, 1),
                          frame.normals.at(o.px, o.py, 2));
            if (nc.norm() < 0.5) continue;
            // camera -> world, then into the instance's canonical frame when placed.
            Vec3 nw = frame.camera.camera_to_world().apply_direction(nc.normalized());
            nw = placement[o.frame_position]->rotation.conjugate() * nw;
            gathered.push_back(nw);
        }
        if (gathered.empty()) continue;
        const Mat3 r = frame_from_normal(select_consensus_normal(gathered));
        out.rotations[i] = canonical_hemisphere(to_wxyz(Quat(r).normalized()));
        out.scales[i] = opts.surface_scales;
    }
    return out;
}

inline CovarianceInit init_covariance_frames(std::span<const Vec3> world_points, const SceneBundle& bundle) {
    return init_covariance_frames(world_points, bundle, static_placement(bundle));
}

struct IngestOptions {
    double static_voxel = 0.05;
    double instance_voxel = 0.02;
    double box_margin = kDefaultBoxMargin;
    double initial_opacity = 0.1;
    int sh_degree = kMaxShDegree;
    bool normal_init = true;
    VisibilityOptions visibility;
    CovarianceInitOptions covariance;
};

inline GaussianSet make_gaussians(std::span<const Vec3> points, std::span<const Vec3> colors,
                                  const CovarianceInit& cov, const IngestOptions& opts) {
    GaussianSet set(opts.sh_degree);
    set.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        set.push_back(points[i], cov.rotations[i], cov.scales[i], opts.initial_opacity, {sh::rgb_to_dc(colors[i])});
    return set;
}

/// Full initialization: static map + per-instance canonical clouds, colored and
/// with normal-aligned covariance frames; poses from boxes, identity residuals.
inline SceneGraph initialize_scene(const SceneBundle& bundle, const IngestOptions& opts = {}) {
    SceneGraph graph;
    const std::vector<Vec3> static_map = build_static_map(bundle, opts.static_voxel, opts.box_margin);
    {
        const auto placement = static_placement(bundle);
        const auto colors = assign_colors(static_map, bundle, placement, {}, opts.visibility);
        CovarianceInit cov;
        if (opts.normal_init) {
            cov = init_covariance_frames(static_map, bundle, placement, {}, opts.visibility, opts.covariance);
        } else {
            cov.rotations.assign(static_map.size(), quat_identity());
            cov.scales.assign(static_map.size(), opts.covariance.fallback_scales);
        }
        graph.static_model = make_gaussians(static_map, colors, cov, opts);
    }
    for (InstanceId id : bundle.instance_ids()) {
        std::vector<Vec3> canonical;
        try {
            canonical = voxel_downsample(build_instance_map(bundle, id, opts.box_margin), opts.instance_voxel);
        } catch (const EmptyInstanceError&) {
            continue;
        }
        const auto placement = instance_placement(bundle, id);
        const auto colors = assign_colors(canonical, bundle, placement, static_map, opts.visibility);
        CovarianceInit cov;
        if (opts.normal_init) {
            cov = init_covariance_frames(canonical, bundle, placement, static_map, opts.visibility, opts.covariance);
        } else {
            cov.rotations.assign(canonical.size(), quat_identity());
            cov.scales.assign(canonical.size(), opts.covariance.fallback_scales);
        }
        graph.instances[id] = make_gaussians(canonical, colors, cov, opts);
        for (const auto& frame : bundle.frames)
            for (const auto& b : frame.boxes)
                if (b.instance_id == id) {
                    graph.poses[{id, frame.index}] = b.pose();
                    graph.residuals[{id, frame.index}] = BoxResidual{};
                }
    }
    return graph;
}

} // namespace vegs::lidar
