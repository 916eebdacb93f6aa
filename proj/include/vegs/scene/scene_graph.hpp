#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/math.hpp"
#include "vegs/scene/bounding_box.hpp"
#include "vegs/scene/gaussian_set.hpp"
#include "vegs/scene/rigid_transform.hpp"

#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace vegs {

/// Learnable correction applied on the right of a box pose: T' = T * dT.
struct BoxResidual {
    Vec4 delta_q = quat_identity();
    Vec3 delta_t = Vec3::Zero();

    [[nodiscard]] RigidTransform transform() const { return {from_wxyz(delta_q.normalized()), delta_t}; }

    friend bool operator==(const BoxResidual&, const BoxResidual&) = default;
};

using PoseKey = std::pair<InstanceId, int>;

/// Static model in world coordinates plus instance models in canonical box
/// frames placed per frame by T^i_k * dT^i_k.
struct SceneGraph {
    GaussianSet static_model;
    std::map<InstanceId, GaussianSet> instances;
    std::map<PoseKey, RigidTransform> poses;
    std::map<PoseKey, BoxResidual> residuals;

    [[nodiscard]] std::size_t gaussian_count() const {
        std::size_t n = static_model.size();
        for (const auto& [id, set] : instances) n += set.size();
        return n;
    }

    [[nodiscard]] bool has_pose(InstanceId id, int frame) const { return poses.contains({id, frame}); }

    /// Pose with the learned residual applied.
    [[nodiscard]] RigidTransform effective_pose(InstanceId id, int frame) const {
        const auto it = poses.find({id, frame});
        if (it == poses.end())
            throw LookupError("no pose for instance " + std::to_string(id) + " at frame " + std::to_string(frame));
        const auto res = residuals.find({id, frame});
        return res == residuals.end() ? it->second : it->second * res->second.transform();
    }

    /// Throws when a pose references a missing instance or a residual has no pose.
    void validate() const {
        static_model.validate();
        for (const auto& [id, set] : instances) set.validate();
        for (const auto& [key, pose] : poses)
            if (!instances.contains(key.first))
                throw InvalidParameter("pose references unknown instance " + std::to_string(key.first));
        for (const auto& [key, res] : residuals)
            if (!poses.contains(key)) throw InvalidParameter("residual without pose");
    }
};

/// Maps a canonical-frame instance set to world coordinates through pose * residual.
/// Means are transformed; covariance rotations are left-multiplied.
inline GaussianSet instance_to_world(const GaussianSet& instance, const RigidTransform& pose,
                                     const BoxResidual& residual) {
    const RigidTransform composed = pose * residual.transform();
    const Vec4 qc = to_wxyz(composed.rotation.normalized());
    GaussianSet out = instance;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.means[i] = composed.apply(instance.means[i]);
        out.rotations[i] = canonical_hemisphere(Vec4(quat_mul(qc, instance.rotations[i]).normalized()));
    }
    return out;
}

inline GaussianSet instance_to_world(const SceneGraph& graph, InstanceId id, int frame) {
    const auto it = graph.instances.find(id);
    if (it == graph.instances.end()) throw LookupError("unknown instance " + std::to_string(id));
    const auto pose = graph.poses.find({id, frame});
    if (pose == graph.poses.end())
        throw LookupError("no pose for instance " + std::to_string(id) + " at frame " + std::to_string(frame));
    const auto res = graph.residuals.find({id, frame});
    return instance_to_world(it->second, pose->second, res == graph.residuals.end() ? BoxResidual{} : res->second);
}

struct RemoveInstance {};
/// World-space offset applied to every frame's pose.
struct TranslateInstance {
    Vec3 offset = Vec3::Zero();
};
/// Rotation about the box center, applied in the canonical box frame.
struct RotateInstance {
    Quat rotation = Quat::Identity();
};
using EditAction = std::variant<RemoveInstance, TranslateInstance, RotateInstance>;

/// Returns an edited copy; only the targeted instance's entries change.
inline SceneGraph edit_instance(const SceneGraph& graph, InstanceId id, const EditAction& action) {
    if (!graph.instances.contains(id)) throw LookupError("unknown instance " + std::to_string(id));
    SceneGraph out = graph;
    if (std::holds_alternative<RemoveInstance>(action)) {
        out.instances.erase(id);
        std::erase_if(out.poses, [id](const auto& kv) { return kv.first.first == id; });
        std::erase_if(out.residuals, [id](const auto& kv) { return kv.first.first == id; });
        return out;
    }
    for (auto& [key, pose] : out.poses) {
        if (key.first != id) continue;
        if (const auto* t = std::get_if<TranslateInstance>(&action))
            pose.translation += t->offset;
        else if (const auto* r = std::get_if<RotateInstance>(&action))
            pose = pose * RigidTransform::from_rotation(r->rotation);
    }
    return out;
}

} // namespace vegs
