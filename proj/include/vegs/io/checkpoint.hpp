#pragma once

#include "vegs/core/error.hpp"
#include "vegs/io/binary.hpp"
#include "vegs/scene/scene_graph.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vegs::io {

// Layout: 8-byte magic | uint64 LE header length | JSON header | float32 LE arrays
// in the order listed under header["arrays"].
inline constexpr std::string_view kCheckpointMagic{"VEGSCKPT", 8};

/// Ordered named arrays stored as float32.
struct ArrayTable {
    std::vector<std::pair<std::string, std::vector<double>>> arrays;

    void add(std::string name, std::span<const double> values) {
        arrays.emplace_back(std::move(name), std::vector<double>(values.begin(), values.end()));
    }
    [[nodiscard]] bool contains(std::string_view name) const {
        for (const auto& [n, v] : arrays)
            if (n == name) return true;
        return false;
    }
    [[nodiscard]] const std::vector<double>& get(std::string_view name) const {
        for (const auto& [n, v] : arrays)
            if (n == name) return v;
        throw InvalidInput("checkpoint: missing array " + std::string(name));
    }
};

template <typename Vec>
std::span<const double> flat(const std::vector<Vec>& v) {
    return {v.empty() ? nullptr : v.front().data(), v.size() * static_cast<std::size_t>(Vec::SizeAtCompileTime)};
}

template <typename Vec>
std::span<double> flat(std::vector<Vec>& v) {
    return {v.empty() ? nullptr : v.front().data(), v.size() * static_cast<std::size_t>(Vec::SizeAtCompileTime)};
}

template <typename Vec>
void unflat(std::span<const double> src, std::vector<Vec>& dst, const std::string& name) {
    constexpr auto k = static_cast<std::size_t>(Vec::SizeAtCompileTime);
    if (src.size() != dst.size() * k) throw InvalidInput("checkpoint: array " + name + " has the wrong length");
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t c = 0; c < k; ++c) dst[i][static_cast<Eigen::Index>(c)] = src[i * k + c];
}

inline void add_gaussian_set(ArrayTable& t, const std::string& prefix, const GaussianSet& set) {
    t.add(prefix + "/means", flat(set.means));
    t.add(prefix + "/rotations", flat(set.rotations));
    t.add(prefix + "/log_scales", flat(set.log_scales));
    t.add(prefix + "/opacity_logits", set.opacity_logits);
    t.add(prefix + "/sh", flat(set.sh));
}

inline GaussianSet read_gaussian_set(const ArrayTable& t, const std::string& prefix, std::size_t count,
                                     int sh_degree) {
    GaussianSet set(sh_degree);
    set.means.resize(count);
    set.rotations.resize(count);
    set.log_scales.resize(count);
    set.sh.resize(count * static_cast<std::size_t>(set.sh_count()));
    unflat(t.get(prefix + "/means"), set.means, prefix + "/means");
    unflat(t.get(prefix + "/rotations"), set.rotations, prefix + "/rotations");
    unflat(t.get(prefix + "/log_scales"), set.log_scales, prefix + "/log_scales");
    unflat(t.get(prefix + "/sh"), set.sh, prefix + "/sh");
    set.opacity_logits = t.get(prefix + "/opacity_logits");
    if (set.opacity_logits.size() != count) throw InvalidInput("checkpoint: " + prefix + " opacity count mismatch");
    return set;
}

inline std::string instance_prefix(InstanceId id) { return "instance/" + std::to_string(id); }

struct Checkpoint {
    SceneGraph graph;
    /// Free-form metadata (trainer state, config); stored under header["meta"].
    nlohmann::json meta = nlohmann::json::object();
    /// Additional arrays (optimizer moments, statistics).
    ArrayTable extra;
};

namespace detail {

inline nlohmann::json vec_json(const auto& v) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

template <typename Vec>
Vec json_vec(const nlohmann::json& j) {
    Vec v;
    if (!j.is_array() || j.size() != static_cast<std::size_t>(Vec::SizeAtCompileTime))
        throw InvalidInput("checkpoint: bad vector in pose table");
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

} // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    const SceneGraph& g = ck.graph;
    ArrayTable table;
    add_gaussian_set(table, "static", g.static_model);
    nlohmann::json instances = nlohmann::json::array();
    for (const auto& [id, set] : g.instances) {
        if (set.sh_degree != g.static_model.sh_degree) throw InvalidParameter("checkpoint: mixed SH degrees");
        add_gaussian_set(table, instance_prefix(id), set);
        instances.push_back({{"id", id}, {"count", set.size()}});
    }
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& [key, pose] : g.poses) {
        nlohmann::json p = {{"instance", key.first},
                            {"frame", key.second},
                            {"rotation", detail::vec_json(to_wxyz(pose.rotation))},
                            {"translation", detail::vec_json(pose.translation)}};
        if (const auto r = g.residuals.find(key); r != g.residuals.end())
            p["residual"] = {{"delta_q", detail::vec_json(r->second.delta_q)},
                             {"delta_t", detail::vec_json(r->second.delta_t)}};
        poses.push_back(std::move(p));
    }
    for (const auto& a : ck.extra.arrays) table.arrays.push_back(a);

    nlohmann::json header = {{"format", "vegs-checkpoint"},
                             {"version", 1},
                             {"sh_degree", g.static_model.sh_degree},
                             {"static_count", g.static_model.size()},
                             {"instances", instances},
                             {"poses", poses},
                             {"meta", ck.meta}};
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& [name, values] : table.arrays) arrays.push_back({{"name", name}, {"count", values.size()}});
    header["arrays"] = arrays;

    const std::string h = header.dump();
    std::string buf(kCheckpointMagic);
    append_pod<std::uint64_t>(buf, h.size());
    buf += h;
    for (const auto& [name, values] : table.arrays) append_f32(buf, values);
    return buf;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& name = "checkpoint") {
    if (bytes.size() < 16 || bytes.substr(0, 8) != kCheckpointMagic) throw InvalidInput(name + ": bad magic");
    const auto hlen = read_pod<std::uint64_t>(bytes, 8);
    if (16 + hlen > bytes.size()) throw InvalidInput(name + ": truncated header");
    Checkpoint ck;
    try {
        const auto header = nlohmann::json::parse(bytes.substr(16, hlen));
        ArrayTable table;
        std::size_t offset = 16 + hlen;
        for (const auto& a : header.at("arrays")) {
            const auto count = a.at("count").get<std::size_t>();
            table.arrays.emplace_back(a.at("name").get<std::string>(), read_f32(bytes, offset, count));
            offset += count * 4;
        }
        if (offset != bytes.size()) throw InvalidInput(name + ": trailing bytes after arrays");
        const int degree = header.at("sh_degree").get<int>();
        ck.graph.static_model =
            read_gaussian_set(table, "static", header.at("static_count").get<std::size_t>(), degree);
        for (const auto& inst : header.at("instances")) {
            const auto id = inst.at("id").get<InstanceId>();
            ck.graph.instances[id] =
                read_gaussian_set(table, instance_prefix(id), inst.at("count").get<std::size_t>(), degree);
        }
        for (const auto& p : header.at("poses")) {
            const PoseKey key{p.at("instance").get<InstanceId>(), p.at("frame").get<int>()};
            RigidTransform t;
            t.rotation = from_wxyz(detail::json_vec<Vec4>(p.at("rotation")));
            t.translation = detail::json_vec<Vec3>(p.at("translation"));
            ck.graph.poses[key] = t;
            if (p.contains("residual"))
                ck.graph.residuals[key] = {detail::json_vec<Vec4>(p.at("residual").at("delta_q")),
                                           detail::json_vec<Vec3>(p.at("residual").at("delta_t"))};
        }
        ck.meta = header.value("meta", nlohmann::json::object());
        for (auto& a : table.arrays)
            if (!a.first.starts_with("static/") && !a.first.starts_with("instance/")) ck.extra.arrays.push_back(a);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(name + ": malformed header: " + e.what());
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
    return decode_checkpoint(read_file(path), path.string());
}

} // namespace vegs::io
