#pragma once

#include "vegs/eval/crop.hpp"
#include "vegs/eval/metrics.hpp"
#include "vegs/io/binary.hpp"
#include "vegs/io/png.hpp"
#include "vegs/lidar/bundle.hpp"
#include "vegs/render/rasterizer.hpp"
#include "vegs/train/evs_cameras.hpp"
#include "vegs/train/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace vegs::eval {

struct ViewMetrics {
    int frame = 0;
    std::string error;
    double psnr = 0.0;
    double ssim = 0.0;
    /// Over pixels where instance Gaussians carry > 50% of the composited weight.
    std::optional<double> psnr_dynamic;
    std::string render_path;
    CropWindow crop;
};

struct EvsEntry {
    int source_frame = 0;
    std::string mode;
    std::string path;
    Camera camera;
    CropWindow crop;
};

struct EvalReport {
    int test_stride = 8;
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::optional<double> mean_psnr_dynamic;
    std::size_t evaluated = 0;
    std::vector<EvsEntry> evs;
};

struct EvalOptions {
    int test_stride = 8;
    bool crop = true;
    bool evs = true;
    Vec3 background = Vec3::Zero();
    /// When non-empty, renders and the report are written here.
    std::filesystem::path out_dir;
};

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

/// Camera-center displacement from the first to the last frame.
inline Vec3 trajectory_displacement(const SceneBundle& b) {
    if (b.frames.size() < 2) return Vec3::Zero();
    return b.frames.back().camera.center() - b.frames.front().camera.center();
}

inline nlohmann::json camera_json(const Camera& c) {
    return {{"intrinsics", bundle_json::intrinsics_json(c)},
            {"world_to_camera", bundle_json::transform_json(c.world_to_camera)}};
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : r.views) {
        nlohmann::json j = {{"frame", v.frame}};
        if (!v.error.empty()) {
            j["error"] = v.error;
        } else {
            j["psnr"] = v.psnr;
            j["ssim"] = v.ssim;
            j["psnr_dynamic"] = v.psnr_dynamic ? nlohmann::json(*v.psnr_dynamic) : nlohmann::json(nullptr);
            j["render"] = v.render_path;
            j["crop"] = {{"x0", v.crop.x0}, {"width", v.crop.width}};
        }
        views.push_back(j);
    }
    nlohmann::json evs = nlohmann::json::array();
    for (const auto& e : r.evs)
        evs.push_back({{"source_frame", e.source_frame},
                       {"mode", e.mode},
                       {"path", e.path},
                       {"camera", camera_json(e.camera)},
                       {"crop", {{"x0", e.crop.x0}, {"width", e.crop.width}}}});
    return {{"test_stride", r.test_stride},
            {"views", views},
            {"evaluated", r.evaluated},
            {"mean_psnr", r.mean_psnr},
            {"mean_ssim", r.mean_ssim},
            {"mean_psnr_dynamic", r.mean_psnr_dynamic ? nlohmann::json(*r.mean_psnr_dynamic) : nlohmann::json(nullptr)},
            {"evs", evs},
            {"not_reported", {"FID", "KID", "LPIPS"}},
            {"not_reported_reason", "perceptual metrics need pretrained networks and are not computed"}};
}

inline std::string to_csv(const EvalReport& r) {
    std::string s = "frame,psnr,ssim,psnr_dynamic,error\n";
    for (const auto& v : r.views) {
        s += std::to_string(v.frame) + ",";
        if (v.error.empty()) {
            s += fmt_double(v.psnr) + "," + fmt_double(v.ssim) + "," +
                 (v.psnr_dynamic ? fmt_double(*v.psnr_dynamic) : std::string()) + ",\n";
        } else {
            s += ",,," + v.error + "\n";
        }
    }
    s += "mean," + fmt_double(r.mean_psnr) + "," + fmt_double(r.mean_ssim) + "," +
         (r.mean_psnr_dynamic ? fmt_double(*r.mean_psnr_dynamic) : std::string()) + ",\n";
    return s;
}

/// Renders every test frame (index % stride == 0) and computes metrics on the
/// cropped images; renders LR/D extrapolated views of the same frames without
/// metrics. The scene is only read.
inline EvalReport evaluate(const SceneGraph& graph, const SceneBundle& bundle, const EvalOptions& opts = {}) {
    EvalReport rep;
    rep.test_stride = opts.test_stride;
    render::RenderSettings s;
    s.background = opts.background;
    s.orientation = false;
    const Vec3 traj = trajectory_displacement(bundle);
    const bool write = !opts.out_dir.empty();
    if (write) {
        std::filesystem::create_directories(opts.out_dir / "renders");
        if (opts.evs) std::filesystem::create_directories(opts.out_dir / "evs");
    }
    double psnr_sum = 0.0, ssim_sum = 0.0, dyn_sum = 0.0;
    std::size_t dyn_n = 0;
    for (const auto& f : bundle.frames) {
        if (!train::is_test_frame(f.index, opts.test_stride)) continue;
        ViewMetrics v;
        v.frame = f.index;
        const auto ro = render::render(graph, f.index, f.camera, s);
        const int out_w = opts.crop ? evs_crop_width(f.camera.width) : f.camera.width;
        Image pred = ro.color, inst = ro.instance_weight;
        v.crop = {0, f.camera.width};
        if (opts.crop) {
            evs_crop(ro.color, f.camera, CropMode::Test, traj, out_w, pred);
            v.crop = evs_crop(ro.instance_weight, f.camera, CropMode::Test, traj, out_w, inst);
        }
        if (write) {
            v.render_path = "renders/" + frame_file_name(f.index, "png");
            io::write_png(opts.out_dir / v.render_path, pred);
        }
        if (f.image.empty()) {
            v.error = "missing image for test frame " + std::to_string(f.index);
        } else if (f.image.width != f.camera.width || f.image.height != f.camera.height) {
            v.error = "image size does not match camera for frame " + std::to_string(f.index);
        } else {
            const Image gt = opts.crop ? apply_crop(f.image, v.crop) : f.image;
            v.psnr = psnr(pred, gt);
            v.ssim = ssim(pred, gt);
            v.psnr_dynamic = masked_psnr(pred, gt, inst, 0.5);
            psnr_sum += v.psnr;
            ssim_sum += v.ssim;
            if (v.psnr_dynamic) {
                dyn_sum += *v.psnr_dynamic;
                ++dyn_n;
            }
            ++rep.evaluated;
        }
        rep.views.push_back(v);

        if (!opts.evs) continue;
        const auto lr = train::augment_evs_cameras({f.camera}, train::EvsMode::LR);
        const auto d = train::augment_evs_cameras({f.camera}, train::EvsMode::D);
        const std::pair<Camera, CropMode> evs_views[] = {
            {lr[0], CropMode::LRLeft}, {lr[1], CropMode::LRRight}, {d[0], CropMode::D}};
        for (const auto& [cam, mode] : evs_views) {
            EvsEntry e;
            e.source_frame = f.index;
            e.mode = to_string(mode);
            e.camera = cam;
            const auto er = render::render(graph, f.index, cam, s);
            Image img = er.color;
            e.crop = {0, cam.width};
            if (opts.crop) e.crop = evs_crop(er.color, cam, mode, traj, out_w, img);
            if (write) {
                char name[64];
                std::snprintf(name, sizeof(name), "evs/%06d_%s.png", f.index, e.mode.c_str());
                e.path = name;
                io::write_png(opts.out_dir / e.path, img);
            }
            rep.evs.push_back(e);
        }
    }
    if (rep.evaluated > 0) {
        rep.mean_psnr = psnr_sum / static_cast<double>(rep.evaluated);
        rep.mean_ssim = ssim_sum / static_cast<double>(rep.evaluated);
    }
    if (dyn_n > 0) rep.mean_psnr_dynamic = dyn_sum / static_cast<double>(dyn_n);
    if (write) {
        io::write_file(opts.out_dir / "report.json", to_json(rep).dump(2));
        io::write_file(opts.out_dir / "report.csv", to_csv(rep));
    }
    return rep;
}

} // namespace vegs::eval
