#pragma once

#include "vegs/core/math.hpp"
#include "vegs/io/checkpoint.hpp"
#include "vegs/render/rasterizer.hpp"
#include "vegs/scene/scene_graph.hpp"
#include "vegs/train/config.hpp"

#include <cmath>
#include <map>
#include <span>
#include <string>

namespace vegs::train {

/// Zero-valued set with the shape of `like`; used as moment storage.
inline GaussianSet zeros_like(const GaussianSet& like) {
    GaussianSet z(like.sh_degree);
    z.means.assign(like.size(), Vec3::Zero());
    z.rotations.assign(like.size(), Vec4::Zero());
    z.log_scales.assign(like.size(), Vec3::Zero());
    z.opacity_logits.assign(like.size(), 0.0);
    z.sh.assign(like.sh.size(), Vec3::Zero());
    return z;
}

/// Appends one zero entry to a moment set.
inline void push_zero(GaussianSet& z) {
    z.means.push_back(Vec3::Zero());
    z.rotations.push_back(Vec4::Zero());
    z.log_scales.push_back(Vec3::Zero());
    z.opacity_logits.push_back(0.0);
    for (int k = 0; k < z.sh_count(); ++k) z.sh.push_back(Vec3::Zero());
}

struct SetMoments {
    GaussianSet m;
    GaussianSet v;
};

struct ResidualMoments {
    Vec4 m_q = Vec4::Zero();
    Vec4 v_q = Vec4::Zero();
    Vec3 m_t = Vec3::Zero();
    Vec3 v_t = Vec3::Zero();
};

struct AdamStep {
    double bias1 = 1.0;
    double bias2_sqrt = 1.0;
    const AdamConfig* cfg = nullptr;
};

/// One Adam update on a flat parameter block; moments are rounded to float32.
inline void adam_update(std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v,
                        double lr, const AdamStep& s) {
    if (lr == 0.0) return;
    const double b1 = s.cfg->beta1, b2 = s.cfg->beta2, eps = s.cfg->eps;
    const double step = lr / s.bias1;
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = round_f32(b1 * m[i] + (1.0 - b1) * g[i]);
        v[i] = round_f32(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
        p[i] -= step * m[i] / (std::sqrt(v[i]) / s.bias2_sqrt + eps);
    }
}

/// Per-group learning rates for one Gaussian set at one iteration.
struct SetRates {
    double means = 0.0;
    double rotations = 0.0;
    double scales = 0.0;
    double opacities = 0.0;
    double sh_dc = 0.0;
    double sh_rest = 0.0;
};

inline double means_lr(const LearningRates& lr, int iteration, int max_steps, double extent) {
    const double t = max_steps > 0 ? std::clamp(static_cast<double>(iteration) / max_steps, 0.0, 1.0) : 1.0;
    return std::exp(std::log(lr.means_init) * (1.0 - t) + std::log(lr.means_final) * t) * extent;
}

inline SetRates set_rates(const LearningRates& lr, int iteration, int max_steps, double extent, double mult) {
    SetRates r;
    r.means = means_lr(lr, iteration, max_steps, extent) * mult;
    r.rotations = lr.rotations * mult;
    r.scales = lr.scales * mult;
    r.opacities = lr.opacities * mult;
    r.sh_dc = lr.sh_dc * mult;
    r.sh_rest = lr.sh_dc / lr.sh_rest_divisor * mult;
    return r;
}

/// Adam step on every field of a Gaussian set, then quaternion renormalization
/// onto the canonical hemisphere and float32 rounding of all parameters.
inline void step_set(GaussianSet& p, const render::GaussianGrads& g, SetMoments& mom, const SetRates& r,
                     const AdamStep& s) {
    using io::flat;
    adam_update(flat(p.means), flat(g.means), flat(mom.m.means), flat(mom.v.means), r.means, s);
    adam_update(flat(p.rotations), flat(g.rotations), flat(mom.m.rotations), flat(mom.v.rotations), r.rotations, s);
    adam_update(flat(p.log_scales), flat(g.log_scales), flat(mom.m.log_scales), flat(mom.v.log_scales), r.scales,
                s);
    adam_update(p.opacity_logits, g.opacity_logits, mom.m.opacity_logits, mom.v.opacity_logits, r.opacities, s);
    const std::size_t k = static_cast<std::size_t>(p.sh_count());
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t at = i * k + c;
            adam_update({p.sh[at].data(), 3}, {g.sh[at].data(), 3}, {mom.m.sh[at].data(), 3},
                        {mom.v.sh[at].data(), 3}, c == 0 ? r.sh_dc : r.sh_rest, s);
        }
    p.normalize_rotations();
    for (auto& v : p.means) round_f32_inplace(v);
    for (auto& v : p.rotations) round_f32_inplace(v);
    for (auto& v : p.log_scales) round_f32_inplace(v);
    for (auto& v : p.opacity_logits) v = round_f32(v);
    for (auto& v : p.sh) round_f32_inplace(v);
}

inline void step_residual(BoxResidual& r, const render::ResidualGrad& g, ResidualMoments& mom, double lr_q,
                          double lr_t, const AdamStep& s) {
    adam_update({r.delta_q.data(), 4}, {g.delta_q.data(), 4}, {mom.m_q.data(), 4}, {mom.v_q.data(), 4}, lr_q, s);
    adam_update({r.delta_t.data(), 3}, {g.delta_t.data(), 3}, {mom.m_t.data(), 3}, {mom.v_t.data(), 3}, lr_t, s);
    r.delta_q = canonical_hemisphere(Vec4(r.delta_q.normalized()));
    round_f32_inplace(r.delta_q);
    round_f32_inplace(r.delta_t);
}

/// Rounds every learnable quantity of a scene to float32.
inline void round_scene_f32(SceneGraph& g) {
    auto round_set = [](GaussianSet& p) {
        for (auto& v : p.means) round_f32_inplace(v);
        for (auto& v : p.rotations) round_f32_inplace(v);
        for (auto& v : p.log_scales) round_f32_inplace(v);
        for (auto& v : p.opacity_logits) v = round_f32(v);
        for (auto& v : p.sh) round_f32_inplace(v);
    };
    round_set(g.static_model);
    for (auto& [id, set] : g.instances) round_set(set);
    for (auto& [key, r] : g.residuals) {
        round_f32_inplace(r.delta_q);
        round_f32_inplace(r.delta_t);
    }
}

struct OptimizerState {
    long step = 0;
    SetMoments static_model;
    std::map<InstanceId, SetMoments> instances;
    std::map<PoseKey, ResidualMoments> residuals;

    static OptimizerState zeros_like(const SceneGraph& g) {
        OptimizerState s;
        s.static_model = {train::zeros_like(g.static_model), train::zeros_like(g.static_model)};
        for (const auto& [id, set] : g.instances) s.instances[id] = {train::zeros_like(set), train::zeros_like(set)};
        for (const auto& [key, r] : g.residuals) s.residuals[key] = {};
        return s;
    }

    [[nodiscard]] AdamStep next(const AdamConfig& cfg) {
        ++step;
        AdamStep a;
        a.cfg = &cfg;
        a.bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        a.bias2_sqrt = std::sqrt(1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
        return a;
    }

    void save(io::ArrayTable& t) const {
        auto put = [&t](const std::string& prefix, const SetMoments& m) {
            io::add_gaussian_set(t, "adam_m/" + prefix, m.m);
            io::add_gaussian_set(t, "adam_v/" + prefix, m.v);
        };
        put("static", static_model);
        for (const auto& [id, m] : instances) put(io::instance_prefix(id), m);
        std::vector<double> res;
        for (const auto& [key, m] : residuals)
            for (const double* p : {m.m_q.data(), m.v_q.data()})
                res.insert(res.end(), p, p + 4);
        std::vector<double> res_t;
        for (const auto& [key, m] : residuals)
            for (const double* p : {m.m_t.data(), m.v_t.data()})
                res_t.insert(res_t.end(), p, p + 3);
        t.add("adam_residual/q", res);
        t.add("adam_residual/t", res_t);
    }

    static OptimizerState load(const io::ArrayTable& t, const SceneGraph& g, long step) {
        OptimizerState s;
        s.step = step;
        auto get = [&t](const std::string& prefix, const GaussianSet& like) {
            return SetMoments{io::read_gaussian_set(t, "adam_m/" + prefix, like.size(), like.sh_degree),
                              io::read_gaussian_set(t, "adam_v/" + prefix, like.size(), like.sh_degree)};
        };
        s.static_model = get("static", g.static_model);
        for (const auto& [id, set] : g.instances) s.instances[id] = get(io::instance_prefix(id), set);
        const auto& q = t.get("adam_residual/q");
        const auto& tt = t.get("adam_residual/t");
        if (q.size() != g.residuals.size() * 8 || tt.size() != g.residuals.size() * 6)
            throw InvalidInput("checkpoint: residual moment arrays do not match the pose table");
        std::size_t i = 0;
        for (const auto& [key, r] : g.residuals) {
            ResidualMoments m;
            for (int c = 0; c < 4; ++c) {
                m.m_q[c] = q[8 * i + c];
                m.v_q[c] = q[8 * i + 4 + c];
            }
            for (int c = 0; c < 3; ++c) {
                m.m_t[c] = tt[6 * i + c];
                m.v_t[c] = tt[6 * i + 3 + c];
            }
            s.residuals[key] = m;
            ++i;
        }
        return s;
    }
};

} // namespace vegs::train
