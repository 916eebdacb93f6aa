#pragma once

#include "vegs/core/math.hpp"
#include "vegs/render/rasterizer.hpp"
#include "vegs/scene/camera.hpp"
#include "vegs/scene/gaussian_set.hpp"
#include "vegs/scene/scene_graph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace vegs::testing {

inline Vec4 random_unit_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec4 q(n(rng), n(rng), n(rng), n(rng));
    return canonical_hemisphere(Vec4(q.normalized()));
}

inline Vec3 random_unit_vec(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Vec3(n(rng), n(rng), n(rng)).normalized();
}

/// Camera at the origin looking down +z.
inline Camera forward_camera(int w, int h, double f) {
    Camera cam;
    cam.intrinsics = {f, f, w / 2.0, h / 2.0, 0.0};
    cam.width = w;
    cam.height = h;
    return cam;
}

/// Gaussians in front of `cam` at distinct depths, footprints well inside the
/// image, opacities away from the alpha clamp and colors away from [0, 1] limits.
inline GaussianSet random_visible_set(std::mt19937_64& rng, int n, const Camera& cam, int sh_degree,
                                      double depth0 = 3.0, double depth_step = 0.37) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GaussianSet set(sh_degree);
    for (int i = 0; i < n; ++i) {
        const double z = depth0 + depth_step * i + 0.05 * u(rng);
        const Vec3 cam_p(0.25 * z * u(rng) * cam.width / cam.intrinsics.fx,
                         0.25 * z * u(rng) * cam.height / cam.intrinsics.fy, z);
        const Vec3 mean = cam.camera_to_world().apply(cam_p);
        const double base = 0.06 * z * cam.width / cam.intrinsics.fx;
        const Vec3 scale(base * (1.0 + 0.4 * u(rng)), base * (1.0 + 0.4 * u(rng)), base * (1.0 + 0.4 * u(rng)));
        std::vector<Vec3> coeffs;
        coeffs.push_back(sh::rgb_to_dc(Vec3(0.5 + 0.3 * u(rng), 0.5 + 0.3 * u(rng), 0.5 + 0.3 * u(rng))));
        for (int k = 1; k < sh_coefficient_count(sh_degree); ++k)
            coeffs.push_back(Vec3(0.05 * u(rng), 0.05 * u(rng), 0.05 * u(rng)));
        set.push_back(mean, random_unit_quat(rng), scale, 0.5 + 0.25 * u(rng), coeffs);
    }
    return set;
}

/// Render settings under which the image is a smooth function of the
/// parameters: one tile covers the image and no low-alpha skip threshold.
inline render::RenderSettings smooth_settings(const Camera& cam) {
    render::RenderSettings s;
    s.tile_size = std::max(cam.width, cam.height);
    s.alpha_min = 0.0;
    s.background = Vec3(0.2, 0.3, 0.4);
    return s;
}

inline Image random_image(std::mt19937_64& rng, int w, int h, int c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(w, h, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

inline double dot(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

/// One scalar parameter (or tangent direction) checked by finite differences.
struct Probe {
    std::string name;
    std::vector<double*> slots;
    std::vector<double> direction;
    double analytic = 0.0;
    bool is_rotation = false;
};

struct ProbeResult {
    Probe probe;
    double numeric = 0.0;
    double rel_error = 0.0;
};

inline double relative_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline std::vector<ProbeResult> check_probes(const std::vector<Probe>& probes, const std::function<double()>& loss,
                                             double eps = 1e-4) {
    std::vector<ProbeResult> out;
    for (const auto& p : probes) {
        std::vector<double> orig;
        for (double* s : p.slots) orig.push_back(*s);
        for (std::size_t k = 0; k < p.slots.size(); ++k) *p.slots[k] = orig[k] + eps * p.direction[k];
        const double lp = loss();
        for (std::size_t k = 0; k < p.slots.size(); ++k) *p.slots[k] = orig[k] - eps * p.direction[k];
        const double lm = loss();
        for (std::size_t k = 0; k < p.slots.size(); ++k) *p.slots[k] = orig[k];
        const double numeric = (lp - lm) / (2.0 * eps);
        out.push_back({p, numeric, relative_error(p.analytic, numeric)});
    }
    return out;
}

inline double fraction_within(const std::vector<ProbeResult>& r, double tol) {
    if (r.empty()) return 1.0;
    std::size_t ok = 0;
    for (const auto& x : r) ok += x.rel_error < tol ? 1 : 0;
    return static_cast<double>(ok) / r.size();
}

/// Two unit tangent directions orthogonal to q, deterministic.
inline std::vector<Vec4> tangent_directions(const Vec4& q) {
    std::vector<Vec4> dirs;
    for (int k = 0; k < 4 && dirs.size() < 3; ++k) {
        Vec4 e = Vec4::Unit(k);
        e -= q * q.dot(e);
        for (const auto& d : dirs) e -= d * d.dot(e);
        if (e.norm() > 1e-3) dirs.push_back(e.normalized());
    }
    return dirs;
}

/// Probes for every parameter of a Gaussian set, given its analytic gradients.
inline void add_set_probes(std::vector<Probe>& probes, GaussianSet& set, const render::GaussianGrads& g,
                           const std::string& prefix) {
    for (std::size_t i = 0; i < set.size(); ++i) {
        const std::string tag = prefix + "[" + std::to_string(i) + "]";
        for (int a = 0; a < 3; ++a) {
            probes.push_back({tag + ".mean" + std::to_string(a), {&set.means[i][a]}, {1.0}, g.means[i][a]});
            probes.push_back(
                {tag + ".log_scale" + std::to_string(a), {&set.log_scales[i][a]}, {1.0}, g.log_scales[i][a]});
        }
        probes.push_back({tag + ".opacity", {&set.opacity_logits[i]}, {1.0}, g.opacity_logits[i]});
        for (const Vec4& d : tangent_directions(set.rotations[i])) {
            Probe p{tag + ".rotation", {}, {}, g.rotations[i].dot(d), true};
            for (int k = 0; k < 4; ++k) {
                p.slots.push_back(&set.rotations[i][k]);
                p.direction.push_back(d[k]);
            }
            probes.push_back(p);
        }
        for (int k = 0; k < set.sh_count(); ++k)
            for (int c = 0; c < 3; ++c)
                probes.push_back({tag + ".sh" + std::to_string(k) + "." + std::to_string(c),
                                  {&set.sh_of(i)[k][c]},
                                  {1.0},
                                  g.sh[i * set.sh_count() + k][c]});
    }
}

inline void add_residual_probes(std::vector<Probe>& probes, BoxResidual& r, const render::ResidualGrad& g,
                                const std::string& tag) {
    for (int a = 0; a < 3; ++a)
        probes.push_back({tag + ".delta_t" + std::to_string(a), {&r.delta_t[a]}, {1.0}, g.delta_t[a]});
    for (const Vec4& d : tangent_directions(r.delta_q)) {
        Probe p{tag + ".delta_q", {}, {}, g.delta_q.dot(d), true};
        for (int k = 0; k < 4; ++k) {
            p.slots.push_back(&r.delta_q[k]);
            p.direction.push_back(d[k]);
        }
        probes.push_back(p);
    }
}

} // namespace vegs::testing
