#pragma once

#include "vegs/core/math.hpp"
#include "vegs/render/rasterizer.hpp"
#include "vegs/train/config.hpp"
#include "vegs/train/optimizer.hpp"

#include <random>
#include <vector>

namespace vegs::train {

/// Screen-space gradient statistics accumulated between densification steps.
struct GradStats {
    std::vector<double> accum;
    std::vector<double> count;

    void resize(std::size_t n) {
        accum.assign(n, 0.0);
        count.assign(n, 0.0);
    }
    void add(const render::GaussianGrads& g) {
        for (std::size_t i = 0; i < accum.size(); ++i)
            if (g.visible[i]) {
                accum[i] = round_f32(accum[i] + g.screen_grad[i]);
                count[i] += 1.0;
            }
    }
};

struct DensifyReport {
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
    std::size_t before = 0;
    std::size_t after = 0;
};

/// A Gaussian set together with its optimizer moments and statistics; all
/// four are edited in lockstep.
struct DensifyTarget {
    GaussianSet* params;
    SetMoments* moments;
    GradStats* stats;
};

/// Clone small high-gradient Gaussians, split large ones into two children
/// sampled from the parent (scales divided by `split_factor`), then prune
/// Gaussians below the opacity threshold. Statistics are reset.
inline DensifyReport densify_and_prune(DensifyTarget t, const DensifyConfig& cfg, double extent,
                                       std::mt19937_64& rng, bool grow = true) {
    GaussianSet& p = *t.params;
    DensifyReport rep;
    rep.before = p.size();
    const std::size_t n = p.size();
    std::vector<bool> remove(n, false);
    if (grow) {
        const double size_limit = cfg.percent_dense * extent;
        std::vector<std::size_t> clone_idx, split_idx;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = t.stats->count[i];
            if (c <= 0.0 || t.stats->accum[i] / c < cfg.grad_threshold) continue;
            (p.scale(i).maxCoeff() <= size_limit ? clone_idx : split_idx).push_back(i);
        }
        auto append_zero_state = [&] {
            push_zero(t.moments->m);
            push_zero(t.moments->v);
        };
        for (std::size_t i : clone_idx) {
            p.append_from(p, i);
            append_zero_state();
        }
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t i : split_idx) {
            const Vec3 s = p.scale(i);
            const Mat3 r = quat_to_matrix(p.rotations[i]);
            for (int child = 0; child < 2; ++child) {
                Vec3 offset;
                for (int k = 0; k < 3; ++k) offset[k] = normal(rng) * s[k];
                p.append_from(p, i);
                Vec3 mean = p.means[i] + r * offset;
                Vec3 log_scale = (s / cfg.split_factor).array().log();
                round_f32_inplace(mean);
                round_f32_inplace(log_scale);
                p.means.back() = mean;
                p.log_scales.back() = log_scale;
                append_zero_state();
            }
            remove[i] = true;
        }
        rep.cloned = clone_idx.size();
        rep.split = split_idx.size();
    }
    remove.resize(p.size(), false);
    std::vector<bool> keep(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool transparent = p.opacity(i) < cfg.prune_opacity;
        if (transparent && !remove[i]) ++rep.pruned;
        keep[i] = !remove[i] && !transparent;
    }
    p.keep(keep);
    t.moments->m.keep(keep);
    t.moments->v.keep(keep);
    t.stats->resize(p.size());
    rep.after = p.size();
    return rep;
}

/// Caps every opacity at `value` (pre-sigmoid storage is updated).
inline void reset_opacity(GaussianSet& p, SetMoments& mom, double value) {
    const double cap = round_f32(inverse_sigmoid(value));
    for (std::size_t i = 0; i < p.size(); ++i) {
        p.opacity_logits[i] = std::min(p.opacity_logits[i], cap);
        mom.m.opacity_logits[i] = 0.0;
        mom.v.opacity_logits[i] = 0.0;
    }
}

/// 1.1 times the largest distance of a camera center from their mean.
inline double scene_extent(const std::vector<Camera>& cams) {
    if (cams.empty()) return 1.0;
    Vec3 mean = Vec3::Zero();
    for (const auto& c : cams) mean += c.center();
    mean /= static_cast<double>(cams.size());
    double r = 0.0;
    for (const auto& c : cams) r = std::max(r, (c.center() - mean).norm());
    return r > 0.0 ? 1.1 * r : 1.0;
}

} // namespace vegs::train
