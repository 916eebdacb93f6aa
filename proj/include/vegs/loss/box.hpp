#pragma once

#include "vegs/core/math.hpp"
#include "vegs/render/rasterizer.hpp"
#include "vegs/scene/scene_graph.hpp"

#include <map>
#include <span>

namespace vegs::loss {

/// ||dq - q_id|| + ||dt|| for one residual.
inline double box_reg_loss(const BoxResidual& r) {
    return (r.delta_q - quat_identity()).norm() + r.delta_t.norm();
}

inline double box_reg_loss(std::span<const BoxResidual> residuals) {
    double v = 0.0;
    for (const auto& r : residuals) v += box_reg_loss(r);
    return v;
}

inline render::ResidualGrad box_reg_grad(const BoxResidual& r) {
    render::ResidualGrad g;
    const Vec4 dq = r.delta_q - quat_identity();
    const double nq = dq.norm(), nt = r.delta_t.norm();
    if (nq > 0.0) g.delta_q = dq / nq;
    if (nt > 0.0) g.delta_t = r.delta_t / nt;
    return g;
}

/// Box loss summed over the residuals of `keys` (missing keys are skipped).
template <typename Keys>
double box_reg_loss_for(const SceneGraph& graph, const Keys& keys) {
    double v = 0.0;
    for (const PoseKey& key : keys)
        if (const auto it = graph.residuals.find(key); it != graph.residuals.end()) v += box_reg_loss(it->second);
    return v;
}

/// Adds `weight` * d(box loss)/d(residual) for the given keys; returns the loss.
template <typename Keys>
double accumulate_box_reg(const SceneGraph& graph, const Keys& keys, double weight, render::SceneGrads& grads) {
    double v = 0.0;
    for (const PoseKey& key : keys) {
        const auto it = graph.residuals.find(key);
        if (it == graph.residuals.end()) continue;
        v += box_reg_loss(it->second);
        const auto g = box_reg_grad(it->second);
        auto& dst = grads.residuals[key];
        dst.delta_q += weight * g.delta_q;
        dst.delta_t += weight * g.delta_t;
    }
    return v;
}

} // namespace vegs::loss
