#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/core/math.hpp"
#include "vegs/render/slerp.hpp"
#include "vegs/scene/camera.hpp"
#include "vegs/scene/gaussian_set.hpp"
#include "vegs/scene/scene_graph.hpp"
#include "vegs/scene/sh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vegs::render {

struct RenderSettings {
    Vec3 background = Vec3::Zero();
    double alpha_min = 1.0 / 255.0;
    double alpha_max = 0.99;
    /// Compositing stops before a Gaussian that would push transmittance below this.
    double transmittance_min = 1e-4;
    /// Isotropic screen-space floor added to every projected covariance (px^2).
    double low_pass = 0.3;
    double near = 0.01;
    double det_min = 1e-12;
    int tile_size = 16;
    /// Composite the orientation map; when false it is identity everywhere.
    bool orientation = true;
};

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Zero();
    double depth = 0.0;
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    Vec4 rotation_world = quat_identity();
    Vec3 scales = Vec3::Zero();
    /// 3-sigma footprint radius in pixels.
    int radius = 0;
};

struct RenderOutput {
    Image color;       ///< 3 channels
    Image alpha;       ///< 1 channel
    Image depth;       ///< 1 channel, alpha-composited camera z
    Image orientation; ///< 4 channels, world-frame (w, x, y, z)
    Image scale;       ///< 3 channels
    /// Composited weight of instance Gaussians (not differentiated).
    Image instance_weight;
    Mat3 world_to_camera = Mat3::Identity();

    [[nodiscard]] int width() const { return color.width; }
    [[nodiscard]] int height() const { return color.height; }
    [[nodiscard]] Vec4 orientation_at(int x, int y) const {
        const auto p = orientation.pixel(x, y);
        return {p[0], p[1], p[2], p[3]};
    }
    /// Camera-frame orientation matrix R_wc * R(q).
    [[nodiscard]] Mat3 orientation_camera(int x, int y) const {
        return world_to_camera * quat_to_matrix(orientation_at(x, y));
    }
};

/// Gradients of a scalar objective with respect to render outputs. Empty images
/// contribute nothing. `orientation` is with respect to the world-frame map.
struct RenderGrads {
    Image color;
    Image alpha;
    Image depth;
    Image orientation;
    Image scale;
};

struct GaussianGrads {
    std::vector<Vec3> means;
    std::vector<Vec4> rotations;
    std::vector<Vec3> log_scales;
    std::vector<double> opacity_logits;
    std::vector<Vec3> sh;
    /// Norm of the NDC-space gradient of the projected mean, summed over renders.
    std::vector<double> screen_grad;
    std::vector<std::uint8_t> visible;

    GaussianGrads() = default;
    GaussianGrads(std::size_t n, int sh_count) { resize(n, sh_count); }

    void resize(std::size_t n, int sh_count) {
        means.assign(n, Vec3::Zero());
        rotations.assign(n, Vec4::Zero());
        log_scales.assign(n, Vec3::Zero());
        opacity_logits.assign(n, 0.0);
        sh.assign(n * static_cast<std::size_t>(sh_count), Vec3::Zero());
        screen_grad.assign(n, 0.0);
        visible.assign(n, 0);
    }
    [[nodiscard]] std::size_t size() const { return means.size(); }
};

struct ResidualGrad {
    Vec4 delta_q = Vec4::Zero();
    Vec3 delta_t = Vec3::Zero();
};

struct SceneGrads {
    GaussianGrads static_model;
    std::map<InstanceId, GaussianGrads> instances;
    std::map<PoseKey, ResidualGrad> residuals;

    /// Zero-initialized gradients shaped like `graph`.
    static SceneGrads zeros_like(const SceneGraph& graph) {
        SceneGrads g;
        g.static_model.resize(graph.static_model.size(), graph.static_model.sh_count());
        for (const auto& [id, set] : graph.instances) g.instances[id].resize(set.size(), set.sh_count());
        return g;
    }
};

/// One Gaussian set placed in the world for a frame. Static sets use the
/// identity placement.
struct RenderGroup {
    const GaussianSet* set = nullptr;
    bool is_instance = false;
    InstanceId id = 0;
    PoseKey key{0, 0};
    bool has_residual = false;
    Vec4 pose_q = quat_identity();
    Vec3 pose_t = Vec3::Zero();
    Vec4 delta_q_raw = quat_identity();
    Vec3 delta_t = Vec3::Zero();
    std::size_t offset = 0;

    // Derived placement quantities.
    Vec4 delta_q = quat_identity();
    Mat3 pose_r = Mat3::Identity();
    Mat3 delta_r = Mat3::Identity();
    Vec4 prefix_q = quat_identity(); ///< pose_q * delta_q

    void finalize() {
        delta_q = delta_q_raw / delta_q_raw.norm();
        pose_r = quat_to_matrix(pose_q);
        delta_r = quat_to_matrix(delta_q);
        prefix_q = quat_mul(pose_q, delta_q);
    }
};

/// Static model plus every instance posed at `frame`, in instance-id order.
inline std::vector<RenderGroup> scene_groups(const SceneGraph& graph, int frame) {
    std::vector<RenderGroup> groups;
    std::size_t offset = 0;
    RenderGroup st;
    st.set = &graph.static_model;
    st.finalize();
    groups.push_back(st);
    offset += graph.static_model.size();
    for (const auto& [id, set] : graph.instances) {
        const auto pose = graph.poses.find({id, frame});
        if (pose == graph.poses.end()) continue;
        RenderGroup g;
        g.set = &set;
        g.is_instance = true;
        g.id = id;
        g.key = {id, frame};
        g.pose_q = to_wxyz(pose->second.rotation);
        g.pose_t = pose->second.translation;
        if (const auto res = graph.residuals.find(g.key); res != graph.residuals.end()) {
            g.has_residual = true;
            g.delta_q_raw = res->second.delta_q;
            g.delta_t = res->second.delta_t;
        }
        g.offset = offset;
        g.finalize();
        groups.push_back(g);
        offset += set.size();
    }
    return groups;
}

inline std::vector<RenderGroup> set_groups(const GaussianSet& set) {
    RenderGroup g;
    g.set = &set;
    g.finalize();
    return {g};
}

namespace detail {

struct Projected {
    bool visible = false;
    std::uint32_t group = 0;
    Vec3 mean = Vec3::Zero();
    Vec4 q_comp = quat_identity(); ///< composed, before normalization
    Vec4 q_world = quat_identity();
    SlerpAxis axis;
    double q_sign = 1.0;
    Vec3 scales = Vec3::Zero();
    Mat3 rot = Mat3::Identity();
    Mat3 cov3d = Mat3::Zero();
    Vec3 p_cam = Vec3::Zero();
    /// p_cam with x/z and y/z clamped to the widened frustum; the covariance
    /// Jacobian is evaluated here.
    Vec3 p_jac = Vec3::Zero();
    /// Clamped slope per axis (x/z, y/z), or NaN when that axis is not clamped.
    Vec2 clamp_slope = Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
    Mat23 jac = Mat23::Zero();
    Mat23 t = Mat23::Zero();
    Vec2 mean2d = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    Vec3 color_active = Vec3::Zero(); ///< 1 where the color clamp is inactive
    Vec3 view = Vec3::Zero();         ///< mean - camera center
    int radius = 0;
};

/// Fraction of the image size by which the Jacobian frustum extends past each border.
inline constexpr double kFrustumMargin = 0.15;

/// Clamps the slopes x/z and y/z of a camera point to the image extent (skew
/// ignored) widened by kFrustumMargin on every side. `slope` receives the clamped slope per
/// axis, NaN where no clamp applied.
inline Vec3 clamp_to_frustum(const Camera& cam, const Vec3& p, Vec2& slope) {
    const Intrinsics& k = cam.intrinsics;
    const double mx = kFrustumMargin * cam.width, my = kFrustumMargin * cam.height;
    const double xlo = (-mx - k.cx) / k.fx, xhi = (cam.width + mx - k.cx) / k.fx;
    const double ylo = (-my - k.cy) / k.fy, yhi = (cam.height + my - k.cy) / k.fy;
    const double u = p.x() / p.z(), uc = std::clamp(u, xlo, xhi);
    const double v = p.y() / p.z(), vc = std::clamp(v, ylo, yhi);
    slope.x() = uc != u ? uc : std::numeric_limits<double>::quiet_NaN();
    slope.y() = vc != v ? vc : std::numeric_limits<double>::quiet_NaN();
    return {uc * p.z(), vc * p.z(), p.z()};
}

inline Mat23 projection_jacobian(const Intrinsics& k, const Vec3& p) {
    const double iz = 1.0 / p.z(), iz2 = iz * iz;
    Mat23 j;
    j << k.fx * iz, k.skew * iz, -(k.fx * p.x() + k.skew * p.y()) * iz2, 0.0, k.fy * iz, -k.fy * p.y() * iz2;
    return j;
}

/// Covariance, projection and culling of Gaussian `i` of `g`.
inline Projected project(const RenderGroup& g, std::size_t i, const Camera& cam, const Mat3& w2c_r,
                         const Vec3& cam_center, const RenderSettings& s) {
    const GaussianSet& set = *g.set;
    Projected p;
    if (g.is_instance) {
        p.mean = g.pose_r * (g.delta_r * set.means[i] + g.delta_t) + g.pose_t;
        p.q_comp = quat_mul(g.prefix_q, set.rotations[i] / set.rotations[i].norm());
    } else {
        p.mean = set.means[i];
        p.q_comp = set.rotations[i];
    }
    p.p_cam = w2c_r * p.mean + cam.world_to_camera.translation;
    if (p.p_cam.z() <= s.near) return p;

    const Vec4 qn = p.q_comp / p.q_comp.norm();
    p.q_sign = qn[0] < 0.0 ? -1.0 : 1.0;
    p.q_world = p.q_sign * qn;
    if (s.orientation) p.axis = SlerpAxis(p.q_world);
    p.scales = set.scale(i);
    p.rot = quat_to_matrix(p.q_world);
    const Mat3 m = p.rot * p.scales.asDiagonal();
    p.cov3d = m * m.transpose();
    p.p_jac = clamp_to_frustum(cam, p.p_cam, p.clamp_slope);
    p.jac = projection_jacobian(cam.intrinsics, p.p_jac);
    p.t = p.jac * w2c_r;
    Mat2 cov2d = p.t * p.cov3d * p.t.transpose();
    cov2d(0, 0) += s.low_pass;
    cov2d(1, 1) += s.low_pass;
    const double det = cov2d.determinant();
    if (!(det > s.det_min)) return p;
    p.conic << cov2d(1, 1) / det, -cov2d(0, 1) / det, -cov2d(1, 0) / det, cov2d(0, 0) / det;
    const Intrinsics& k = cam.intrinsics;
    p.mean2d = {k.fx * p.p_cam.x() / p.p_cam.z() + k.skew * p.p_cam.y() / p.p_cam.z() + k.cx,
                k.fy * p.p_cam.y() / p.p_cam.z() + k.cy};
    const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
    const double lambda = mid + std::sqrt(std::max(0.0, mid * mid - det));
    p.radius = static_cast<int>(std::ceil(3.0 * std::sqrt(lambda)));
    if (p.mean2d.x() + p.radius < 0.0 || p.mean2d.x() - p.radius > cam.width || p.mean2d.y() + p.radius < 0.0 ||
        p.mean2d.y() - p.radius > cam.height)
        return p;

    p.opacity = set.opacity(i);
    p.view = p.mean - cam_center;
    const Vec3 dir = p.view / p.view.norm();
    const sh::Basis basis = sh::evaluate_basis(dir, set.sh_degree);
    const Vec3* coeffs = set.sh_of(i);
    Vec3 raw = Vec3::Constant(0.5);
    for (int k2 = 0; k2 < set.sh_count(); ++k2) raw += basis.value[k2] * coeffs[k2];
    for (int c = 0; c < 3; ++c) {
        p.color[c] = std::clamp(raw[c], 0.0, 1.0);
        p.color_active[c] = (raw[c] > 0.0 && raw[c] < 1.0) ? 1.0 : 0.0;
    }
    p.visible = true;
    return p;
}

/// Hot-loop view of a visible splat, stored contiguously per tile.
struct PackedSplat {
    double mx, my;
    double c00, c01, c11;
    double opacity;
    /// Exponents below this give alpha < alpha_min (with a small safety margin).
    double power_min;
};

inline PackedSplat pack(const Projected& p, double alpha_min) {
    const double cut = alpha_min > 0.0 ? std::log(alpha_min / p.opacity) - 1e-9 : -1e300;
    return {p.mean2d.x(), p.mean2d.y(), p.conic(0, 0), p.conic(0, 1), p.conic(1, 1), p.opacity, cut};
}

inline double splat_power(const PackedSplat& q, double dx, double dy) {
    return -0.5 * (q.c00 * dx * dx + q.c11 * dy * dy) - q.c01 * dx * dy;
}

} // namespace detail

/// Projects a single world-space Gaussian; nullopt when culled.
inline std::optional<Splat2D> project_gaussian(const Vec3& mean, const Vec4& rotation, const Vec3& scales,
                                               double opacity, const Vec3& color, const Camera& cam,
                                               const RenderSettings& settings = {}) {
    GaussianSet set(0);
    set.push_back(mean, rotation, scales, 0.5, {sh::rgb_to_dc(color)});
    const auto groups = set_groups(set);
    const auto p = detail::project(groups[0], 0, cam, cam.rotation_world_to_camera(), cam.center(), settings);
    if (!p.visible) return std::nullopt;
    Splat2D out;
    out.mean2d = p.mean2d;
    out.cov2d = p.t * p.cov3d * p.t.transpose() + settings.low_pass * Mat2::Identity();
    out.depth = p.p_cam.z();
    out.opacity = opacity;
    out.color = p.color;
    out.rotation_world = p.q_world;
    out.scales = p.scales;
    out.radius = p.radius;
    return out;
}

/// State captured by a forward pass and consumed by render_backward.
struct RenderRecord {
    bool valid = false;
    int frame = 0;
    Camera camera;
    RenderSettings settings;
    /// (is_instance, id, size) per group, for consistency checks.
    std::vector<std::tuple<bool, InstanceId, std::size_t>> layout;
    std::vector<detail::Projected> proj;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> tiles;
    std::vector<std::vector<detail::PackedSplat>> packed;
    /// Per pixel: number of tile-list entries visited before compositing stopped.
    std::vector<std::uint32_t> visited;
    /// Per tile: tile-list positions that contributed, grouped by pixel.
    std::vector<std::vector<std::uint32_t>> hits;
    /// Per pixel: first entry in its tile's `hits` and the contributor count.
    std::vector<std::uint32_t> hit_begin;
    std::vector<std::uint32_t> hit_count;
    std::vector<double> final_transmittance;
};

namespace detail {

inline std::vector<std::tuple<bool, InstanceId, std::size_t>> layout_of(std::span<const RenderGroup> groups) {
    std::vector<std::tuple<bool, InstanceId, std::size_t>> out;
    for (const auto& g : groups) out.emplace_back(g.is_instance, g.id, g.set->size());
    return out;
}

} // namespace detail

inline RenderOutput render_groups(std::span<const RenderGroup> groups, int frame, const Camera& cam,
                                  const RenderSettings& s = {}, RenderRecord* record = nullptr) {
    cam.validate();
    if (s.tile_size <= 0) throw InvalidParameter("tile_size must be positive");
    const int w = cam.width, h = cam.height;
    const Mat3 w2c_r = cam.rotation_world_to_camera();
    const Vec3 center = cam.center();

    std::size_t total = 0;
    for (const auto& g : groups) total += g.set->size();
    std::vector<detail::Projected> proj(total);
    std::vector<std::uint32_t> group_of(total);
    for (std::uint32_t gi = 0; gi < groups.size(); ++gi)
        for (std::size_t i = 0; i < groups[gi].set->size(); ++i) group_of[groups[gi].offset + i] = gi;

#pragma omp parallel for schedule(static)
    for (std::int64_t f = 0; f < static_cast<std::int64_t>(total); ++f) {
        const RenderGroup& g = groups[group_of[f]];
        proj[f] = detail::project(g, static_cast<std::size_t>(f) - g.offset, cam, w2c_r, center, s);
        proj[f].group = group_of[f];
    }

    const int ts = s.tile_size;
    const int tx = (w + ts - 1) / ts, ty = (h + ts - 1) / ts;
    std::vector<std::vector<std::uint32_t>> tiles(static_cast<std::size_t>(tx) * ty);
    for (std::uint32_t f = 0; f < total; ++f) {
        const auto& p = proj[f];
        if (!p.visible) continue;
        const int x0 = std::clamp(static_cast<int>(std::floor((p.mean2d.x() - p.radius) / ts)), 0, tx - 1);
        const int x1 = std::clamp(static_cast<int>(std::floor((p.mean2d.x() + p.radius) / ts)), 0, tx - 1);
        const int y0 = std::clamp(static_cast<int>(std::floor((p.mean2d.y() - p.radius) / ts)), 0, ty - 1);
        const int y1 = std::clamp(static_cast<int>(std::floor((p.mean2d.y() + p.radius) / ts)), 0, ty - 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) tiles[static_cast<std::size_t>(y) * tx + x].push_back(f);
    }
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(tiles.size()); ++t)
        std::sort(tiles[t].begin(), tiles[t].end(), [&](std::uint32_t a, std::uint32_t b) {
            const double za = proj[a].p_cam.z(), zb = proj[b].p_cam.z();
            return za != zb ? za < zb : a < b;
        });
    std::vector<std::vector<detail::PackedSplat>> packed(tiles.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(tiles.size()); ++t) {
        packed[t].reserve(tiles[t].size());
        for (std::uint32_t f : tiles[t]) packed[t].push_back(detail::pack(proj[f], s.alpha_min));
    }

    RenderOutput out;
    out.color = Image(w, h, 3);
    out.alpha = Image(w, h, 1);
    out.depth = Image(w, h, 1);
    out.orientation = Image(w, h, 4);
    out.scale = Image(w, h, 3);
    out.instance_weight = Image(w, h, 1);
    out.world_to_camera = w2c_r;
    std::vector<std::uint32_t> visited(static_cast<std::size_t>(w) * h, 0);
    std::vector<double> final_t(static_cast<std::size_t>(w) * h, 1.0);
    const bool keep_hits = record != nullptr;
    std::vector<std::vector<std::uint32_t>> hits(keep_hits ? tiles.size() : 0);
    std::vector<std::uint32_t> hit_begin(keep_hits ? visited.size() : 0), hit_count(keep_hits ? visited.size() : 0);

#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(tiles.size()); ++t) {
        const auto& list = tiles[t];
        const auto& pk = packed[t];
        std::vector<std::uint32_t>* tile_hits = keep_hits ? &hits[t] : nullptr;
        const int tile_x = static_cast<int>(t % tx), tile_y = static_cast<int>(t / tx);
        for (int py = tile_y * ts; py < std::min(h, (tile_y + 1) * ts); ++py) {
            for (int px = tile_x * ts; px < std::min(w, (tile_x + 1) * ts); ++px) {
                const double cx = px + 0.5, cy = py + 0.5;
                double trans = 1.0;
                Vec3 color = Vec3::Zero(), scale = Vec3::Zero();
                double depth = 0.0, inst = 0.0;
                Vec4 acc = quat_identity();
                const std::size_t pix = static_cast<std::size_t>(py) * w + px;
                if (tile_hits != nullptr) hit_begin[pix] = static_cast<std::uint32_t>(tile_hits->size());
                std::uint32_t k = 0;
                for (; k < list.size(); ++k) {
                    const auto& q = pk[k];
                    const double power = detail::splat_power(q, cx - q.mx, cy - q.my);
                    if (power < q.power_min) continue;
                    const double alpha = std::min(s.alpha_max, q.opacity * std::exp(power));
                    if (alpha < s.alpha_min) continue;
                    const auto& p = proj[list[k]];
                    const double next = trans * (1.0 - alpha);
                    if (next < s.transmittance_min) break;
                    const double wgt = alpha * trans;
                    color += wgt * p.color;
                    depth += wgt * p.p_cam.z();
                    scale += wgt * p.scales;
                    if (groups[p.group].is_instance) inst += wgt;
                    if (s.orientation) acc = quat_mul(slerp_from_identity(p.axis, wgt), acc);
                    if (tile_hits != nullptr) tile_hits->push_back(k);
                    trans = next;
                }
                if (tile_hits != nullptr)
                    hit_count[pix] = static_cast<std::uint32_t>(tile_hits->size()) - hit_begin[pix];
                visited[pix] = k;
                final_t[pix] = trans;
                color += trans * s.background;
                for (int c = 0; c < 3; ++c) {
                    out.color.at(px, py, c) = color[c];
                    out.scale.at(px, py, c) = scale[c];
                }
                out.alpha.at(px, py) = 1.0 - trans;
                out.depth.at(px, py) = depth;
                out.instance_weight.at(px, py) = inst;
                acc = renormalize(acc);
                for (int c = 0; c < 4; ++c) out.orientation.at(px, py, c) = acc[c];
            }
        }
    }

    if (record != nullptr) {
        record->valid = true;
        record->frame = frame;
        record->camera = cam;
        record->settings = s;
        record->layout = detail::layout_of(groups);
        record->proj = std::move(proj);
        record->tiles_x = tx;
        record->tiles_y = ty;
        record->tiles = std::move(tiles);
        record->packed = std::move(packed);
        record->visited = std::move(visited);
        record->hits = std::move(hits);
        record->hit_begin = std::move(hit_begin);
        record->hit_count = std::move(hit_count);
        record->final_transmittance = std::move(final_t);
    }
    return out;
}

inline RenderOutput render(const SceneGraph& graph, int frame, const Camera& cam, const RenderSettings& s = {},
                           RenderRecord* record = nullptr) {
    const auto groups = scene_groups(graph, frame);
    return render_groups(groups, frame, cam, s, record);
}

inline RenderOutput render(const GaussianSet& set, const Camera& cam, const RenderSettings& s = {},
                           RenderRecord* record = nullptr) {
    const auto groups = set_groups(set);
    return render_groups(groups, 0, cam, s, record);
}

namespace detail {

/// Per tile-list entry gradient partials. "scale" partials come only from the
/// scale-map channel and are kept apart so they never reach rotations.
struct EntryGrad {
    Vec2 mean2d_full = Vec2::Zero();
    Vec2 mean2d_scale = Vec2::Zero();
    Mat2 conic_full = Mat2::Zero();
    Mat2 conic_scale = Mat2::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
    Vec3 scale_map = Vec3::Zero();
    Vec4 q_world = Vec4::Zero();

    void add(const EntryGrad& o) {
        mean2d_full += o.mean2d_full;
        mean2d_scale += o.mean2d_scale;
        conic_full += o.conic_full;
        conic_scale += o.conic_scale;
        opacity += o.opacity;
        color += o.color;
        depth += o.depth;
        scale_map += o.scale_map;
        q_world += o.q_world;
    }
};

inline void check_grad_image(const Image& img, int w, int h, int c, const char* name) {
    if (img.empty()) return;
    if (img.width != w || img.height != h || img.channels != c)
        throw InvalidInput(std::string("render gradient '") + name + "' has the wrong shape");
}

} // namespace detail

inline SceneGrads render_backward_groups(std::span<const RenderGroup> groups, const RenderRecord& rec,
                                         const RenderGrads& dout, SceneGrads* into = nullptr) {
    if (!rec.valid) throw StateError("render_backward: no forward pass was recorded");
    if (detail::layout_of(groups) != rec.layout)
        throw StateError("render_backward: scene does not match the recorded forward pass");
    const Camera& cam = rec.camera;
    const RenderSettings& s = rec.settings;
    const int w = cam.width, h = cam.height;
    detail::check_grad_image(dout.color, w, h, 3, "color");
    detail::check_grad_image(dout.alpha, w, h, 1, "alpha");
    detail::check_grad_image(dout.depth, w, h, 1, "depth");
    detail::check_grad_image(dout.orientation, w, h, 4, "orientation");
    detail::check_grad_image(dout.scale, w, h, 3, "scale");
    if (!dout.orientation.empty() && !s.orientation)
        throw StateError("render_backward: orientation gradient given but the map was not composited");

    const auto& proj = rec.proj;
    const int ts = s.tile_size;
    const int tx = rec.tiles_x;
    std::vector<std::vector<detail::EntryGrad>> tile_grads(rec.tiles.size());

#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(rec.tiles.size()); ++t) {
        const auto& list = rec.tiles[t];
        const auto& pk = rec.packed[t];
        auto& eg = tile_grads[t];
        eg.assign(list.size(), {});
        if (list.empty()) continue;
        const int tile_x = static_cast<int>(t % tx), tile_y = static_cast<int>(t / tx);

        struct Contributor {
            std::uint32_t pos;
            double alpha, trans, weight, gauss;
            double dx, dy;
            bool clamped;
        };
        std::vector<Contributor> contrib;
        std::vector<Vec4> accs, factors;
        for (int py = tile_y * ts; py < std::min(h, (tile_y + 1) * ts); ++py) {
            for (int px = tile_x * ts; px < std::min(w, (tile_x + 1) * ts); ++px) {
                const std::size_t pix = static_cast<std::size_t>(py) * w + px;
                const Vec3 dc = dout.color.empty() ? Vec3::Zero()
                                                   : Vec3(dout.color.at(px, py, 0), dout.color.at(px, py, 1),
                                                          dout.color.at(px, py, 2));
                const double da = dout.alpha.empty() ? 0.0 : dout.alpha.at(px, py);
                const double dd = dout.depth.empty() ? 0.0 : dout.depth.at(px, py);
                const Vec3 ds = dout.scale.empty() ? Vec3::Zero()
                                                   : Vec3(dout.scale.at(px, py, 0), dout.scale.at(px, py, 1),
                                                          dout.scale.at(px, py, 2));
                const Vec4 dq = dout.orientation.empty()
                                    ? Vec4::Zero()
                                    : Vec4(dout.orientation.at(px, py, 0), dout.orientation.at(px, py, 1),
                                           dout.orientation.at(px, py, 2), dout.orientation.at(px, py, 3));
                const bool use_orient = !dout.orientation.empty() && dq.squaredNorm() > 0.0;

                const double cx = px + 0.5, cy = py + 0.5;
                contrib.clear();
                double trans = 1.0;
                const auto& tile_hits = rec.hits[t];
                for (std::uint32_t h_i = 0; h_i < rec.hit_count[pix]; ++h_i) {
                    const std::uint32_t k = tile_hits[rec.hit_begin[pix] + h_i];
                    const auto& q = pk[k];
                    const double dx = cx - q.mx, dy = cy - q.my;
                    const double power = detail::splat_power(q, dx, dy);
                    const double gauss = std::exp(power);
                    const double raw = q.opacity * gauss;
                    const double alpha = std::min(s.alpha_max, raw);
                    if (alpha < s.alpha_min) continue;
                    contrib.push_back({k, alpha, trans, alpha * trans, gauss, dx, dy, raw > s.alpha_max});
                    trans *= 1.0 - alpha;
                }
                const double final_t = rec.final_transmittance[pix];
                const std::size_t n = contrib.size();
                if (n == 0) continue;

                Vec4 dacc = Vec4::Zero();
                if (use_orient) {
                    accs.resize(n + 1);
                    factors.resize(n);
                    accs[0] = quat_identity();
                    for (std::size_t j = 0; j < n; ++j) {
                        factors[j] = slerp_from_identity(proj[list[contrib[j].pos]].axis, contrib[j].weight);
                        accs[j + 1] = quat_mul(factors[j], accs[j]);
                    }
                    dacc = normalize_backward(accs[n], dq);
                }

                double suffix_full = (s.background.dot(dc) - da) * final_t;
                double suffix_scale = 0.0;
                for (std::size_t jj = n; jj-- > 0;) {
                    const Contributor& c = contrib[jj];
                    const auto& p = proj[list[c.pos]];
                    detail::EntryGrad& e = eg[c.pos];
                    double g_orient = 0.0;
                    if (use_orient) {
                        const Vec4& r = factors[jj];
                        const Vec4 dr = quat_mul(dacc, quat_conjugate(accs[jj]));
                        const Vec4 next = quat_mul(quat_conjugate(r), dacc);
                        const auto [dqj, dwj] = slerp_from_identity_backward(p.axis, c.weight, dr);
                        e.q_world += dqj;
                        g_orient = dwj;
                        dacc = next;
                    }
                    const double g_full = p.color.dot(dc) + p.p_cam.z() * dd + g_orient;
                    const double g_scale = p.scales.dot(ds);
                    const double inv = 1.0 / (1.0 - c.alpha);
                    const double dalpha_full = g_full * c.trans - suffix_full * inv;
                    const double dalpha_scale = g_scale * c.trans - suffix_scale * inv;
                    suffix_full += g_full * c.weight;
                    suffix_scale += g_scale * c.weight;

                    e.color += c.weight * dc;
                    e.depth += c.weight * dd;
                    e.scale_map += c.weight * ds;
                    if (c.clamped) continue;
                    e.opacity += c.gauss * (dalpha_full + dalpha_scale);
                    const Vec2 cd = p.conic * Vec2(c.dx, c.dy);
                    Mat2 dd_outer;
                    dd_outer << c.dx * c.dx, c.dx * c.dy, c.dx * c.dy, c.dy * c.dy;
                    const double dp_full = c.alpha * dalpha_full;
                    const double dp_scale = c.alpha * dalpha_scale;
                    e.mean2d_full += dp_full * cd;
                    e.mean2d_scale += dp_scale * cd;
                    e.conic_full += -0.5 * dp_full * dd_outer;
                    e.conic_scale += -0.5 * dp_scale * dd_outer;
                }
            }
        }
    }

    std::vector<detail::EntryGrad> acc(proj.size());
    for (std::size_t t = 0; t < rec.tiles.size(); ++t)
        for (std::size_t k = 0; k < rec.tiles[t].size(); ++k) acc[rec.tiles[t][k]].add(tile_grads[t][k]);
    tile_grads.clear();

    SceneGrads local;
    SceneGrads& out = into != nullptr ? *into : local;
    std::vector<GaussianGrads*> gg(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        GaussianGrads& dst = g.is_instance ? out.instances[g.id] : out.static_model;
        if (dst.size() != g.set->size()) dst.resize(g.set->size(), g.set->sh_count());
        gg[gi] = &dst;
    }
    // Per-Gaussian contributions to the residual of the owning group.
    std::vector<Vec4> d_delta_qn(proj.size(), Vec4::Zero());
    std::vector<Vec3> d_delta_t(proj.size(), Vec3::Zero());
    std::vector<Mat3> d_delta_r(proj.size(), Mat3::Zero());

    const Mat3 w2c_r = cam.rotation_world_to_camera();
    const Intrinsics& kin = cam.intrinsics;
#pragma omp parallel for schedule(static)
    for (std::int64_t f = 0; f < static_cast<std::int64_t>(proj.size()); ++f) {
        const auto& p = proj[f];
        if (!p.visible) continue;
        const RenderGroup& g = groups[p.group];
        const std::size_t i = static_cast<std::size_t>(f) - g.offset;
        GaussianGrads& dst = *gg[p.group];
        const detail::EntryGrad& e = acc[f];
        dst.visible[i] = 1;
        const Vec2 m2 = e.mean2d_full + e.mean2d_scale;
        dst.screen_grad[i] += Vec2(m2.x() * 0.5 * w, m2.y() * 0.5 * h).norm();

        // Color: clamp mask, SH coefficients, view direction.
        const Vec3 dcol = e.color.cwiseProduct(p.color_active);
        const GaussianSet& set = *g.set;
        Vec3 dmean_full = Vec3::Zero();
        if (dcol.squaredNorm() > 0.0) {
            const double len = p.view.norm();
            const Vec3 dir = p.view / len;
            const sh::Basis basis = sh::evaluate_basis(dir, set.sh_degree);
            const Vec3* coeffs = set.sh_of(i);
            Vec3* dsh = dst.sh.data() + i * set.sh_count();
            Vec3 ddir = Vec3::Zero();
            for (int k = 0; k < set.sh_count(); ++k) {
                dsh[k] += basis.value[k] * dcol;
                ddir += coeffs[k].dot(dcol) * basis.grad[k];
            }
            dmean_full += normalize_backward(p.view, ddir);
        }

        // Conic -> 2D covariance -> (3D covariance, Jacobian).
        const Mat2 dcov2_full = -p.conic * e.conic_full * p.conic;
        const Mat2 dcov2_scale = -p.conic * e.conic_scale * p.conic;
        const Mat3 dcov3_full = p.t.transpose() * dcov2_full * p.t;
        const Mat3 dcov3_scale = p.t.transpose() * dcov2_scale * p.t;
        const Mat23 dt_full = 2.0 * dcov2_full * p.t * p.cov3d;
        const Mat23 dt_scale = 2.0 * dcov2_scale * p.t * p.cov3d;

        auto cam_grad = [&](const Mat23& dt, const Vec2& dm2) {
            const Mat23 dj = dt * w2c_r.transpose();
            const double x = p.p_jac.x(), y = p.p_jac.y(), z = p.p_jac.z();
            const double iz2 = 1.0 / (z * z), iz3 = iz2 / z;
            Vec3 dp = detail::projection_jacobian(kin, p.p_cam).transpose() * dm2;
            // Jacobian entries through the (possibly clamped) evaluation point.
            Vec3 dj_pt;
            dj_pt.x() = dj(0, 2) * (-kin.fx * iz2);
            dj_pt.y() = dj(0, 2) * (-kin.skew * iz2) + dj(1, 2) * (-kin.fy * iz2);
            dj_pt.z() = dj(0, 0) * (-kin.fx * iz2) + dj(0, 1) * (-kin.skew * iz2) +
                        dj(0, 2) * (2.0 * (kin.fx * x + kin.skew * y) * iz3) + dj(1, 1) * (-kin.fy * iz2) +
                        dj(1, 2) * (2.0 * kin.fy * y * iz3);
            // A clamped coordinate is slope * z: its gradient moves to z.
            for (int a = 0; a < 2; ++a) {
                if (std::isnan(p.clamp_slope[a])) dp[a] += dj_pt[a];
                else dp.z() += dj_pt[a] * p.clamp_slope[a];
            }
            dp.z() += dj_pt.z();
            return Vec3(w2c_r.transpose() * dp);
        };
        Vec3 dp_depth = Vec3::Zero();
        dp_depth.z() = e.depth;
        dmean_full += cam_grad(dt_full, e.mean2d_full) + w2c_r.transpose() * dp_depth;
        const Vec3 dmean_scale = cam_grad(dt_scale, e.mean2d_scale);

        // 3D covariance -> rotation (full channel only) and scales.
        const Mat3 m = p.rot * p.scales.asDiagonal();
        const Mat3 dm_full = 2.0 * dcov3_full * m;
        const Mat3 dm_scale = 2.0 * dcov3_scale * m;
        const Mat3 drot = dm_full * p.scales.asDiagonal();
        Vec3 dscale = e.scale_map;
        for (int a = 0; a < 3; ++a) dscale[a] += p.rot.col(a).dot(dm_full.col(a) + dm_scale.col(a));
        dst.log_scales[i] += dscale.cwiseProduct(p.scales);

        const double o = p.opacity;
        dst.opacity_logits[i] += e.opacity * o * (1.0 - o);

        const Vec4 dq_world = quat_to_matrix_backward(p.q_world, drot) + e.q_world;
        const Vec4 dq_comp = normalize_backward(p.q_comp, Vec4(p.q_sign * dq_world));
        if (!g.is_instance) {
            dst.means[i] += dmean_full + dmean_scale;
            dst.rotations[i] += dq_comp;
            continue;
        }
        const Vec4& q_raw = set.rotations[i];
        const Vec4 qn = q_raw / q_raw.norm();
        dst.rotations[i] += normalize_backward(q_raw, Vec4(quat_left_matrix(g.prefix_q).transpose() * dq_comp));
        const Vec3 u_full = g.pose_r.transpose() * dmean_full;
        const Vec3 u = u_full + g.pose_r.transpose() * dmean_scale;
        dst.means[i] += g.delta_r.transpose() * u;
        if (!g.has_residual) continue;
        d_delta_t[f] = u;
        d_delta_r[f] = u_full * set.means[i].transpose();
        d_delta_qn[f] = quat_right_matrix(qn).transpose() * (quat_left_matrix(g.pose_q).transpose() * dq_comp);
    }

    for (const auto& g : groups) {
        if (!g.is_instance || !g.has_residual) continue;
        Vec4 dqn = Vec4::Zero();
        Vec3 dtt = Vec3::Zero();
        Mat3 dr = Mat3::Zero();
        for (std::size_t i = 0; i < g.set->size(); ++i) {
            dqn += d_delta_qn[g.offset + i];
            dtt += d_delta_t[g.offset + i];
            dr += d_delta_r[g.offset + i];
        }
        dqn += quat_to_matrix_backward(g.delta_q, dr);
        ResidualGrad& rg = out.residuals[g.key];
        rg.delta_q += normalize_backward(g.delta_q_raw, dqn);
        rg.delta_t += dtt;
    }
    return into != nullptr ? SceneGrads{} : std::move(local);
}

/// Accumulates the gradients of a recorded render into `into` (shaped like `graph`).
inline void render_backward(const SceneGraph& graph, const RenderRecord& rec, const RenderGrads& dout,
                            SceneGrads& into) {
    const auto groups = scene_groups(graph, rec.frame);
    render_backward_groups(groups, rec, dout, &into);
}

inline SceneGrads render_backward(const SceneGraph& graph, const RenderRecord& rec, const RenderGrads& dout) {
    SceneGrads g = SceneGrads::zeros_like(graph);
    render_backward(graph, rec, dout, g);
    return g;
}

inline GaussianGrads render_backward(const GaussianSet& set, const RenderRecord& rec, const RenderGrads& dout) {
    const auto groups = set_groups(set);
    SceneGrads g;
    g.static_model.resize(set.size(), set.sh_count());
    render_backward_groups(groups, rec, dout, &g);
    return std::move(g.static_model);
}

} // namespace vegs::render
