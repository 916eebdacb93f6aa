#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/scene/camera.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vegs::eval {

enum class CropMode { LRLeft, LRRight, D, Test };

inline std::string to_string(CropMode m) {
    switch (m) {
    case CropMode::LRLeft: return "LR-left";
    case CropMode::LRRight: return "LR-right";
    case CropMode::D: return "D";
    case CropMode::Test: return "test";
    }
    return "?";
}

inline CropMode parse_crop_mode(const std::string& s) {
    if (s == "LR-left") return CropMode::LRLeft;
    if (s == "LR-right") return CropMode::LRRight;
    if (s == "D") return CropMode::D;
    if (s == "test") return CropMode::Test;
    throw InvalidParameter("unknown crop mode: " + s);
}

/// Column window [x0, x0 + width).
struct CropWindow {
    int x0 = 0;
    int width = 0;
    friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

/// +1 when the trajectory displacement points along the camera's +x (image
/// right), -1 otherwise.
inline int trajectory_side(const Camera& cam, const Vec3& displacement) {
    return displacement.dot(cam.right()) >= 0.0 ? 1 : -1;
}

/// LR modes keep `out_width` columns on the trajectory side; D and test modes
/// keep a window centered on the principal-point column.
inline CropWindow evs_crop_window(int width, CropMode mode, int out_width, double cx, int side) {
    if (out_width <= 0 || out_width > width) throw InvalidParameter("crop width must be in [1, image width]");
    CropWindow w;
    w.width = out_width;
    if (mode == CropMode::LRLeft || mode == CropMode::LRRight) {
        w.x0 = side > 0 ? width - out_width : 0;
    } else {
        const int x0 = static_cast<int>(std::lround(cx - out_width / 2.0));
        w.x0 = std::clamp(x0, 0, width - out_width);
    }
    return w;
}

/// Default output width shared by all modes: half the (even) input width.
inline int evs_crop_width(int width) {
    if (width % 2 != 0) throw InvalidParameter("EVS cropping needs an even image width");
    return width / 2;
}

inline Image apply_crop(const Image& img, const CropWindow& w) { return crop_columns(img, w.x0, w.width); }

/// Camera whose image is the cropped window (principal point shifted).
inline Camera crop_camera(const Camera& cam, const CropWindow& w) {
    Camera out = cam;
    out.width = w.width;
    out.intrinsics.cx -= w.x0;
    return out;
}

/// Crops `img` (rendered by `cam`) for `mode`, returning the window used.
inline CropWindow evs_crop(const Image& img, const Camera& cam, CropMode mode, const Vec3& trajectory,
                           int out_width, Image& out) {
    if (img.width != cam.width || img.height != cam.height) throw InvalidInput("evs_crop: image/camera size mismatch");
    const CropWindow w = evs_crop_window(img.width, mode, out_width, cam.intrinsics.cx, trajectory_side(cam, trajectory));
    out = apply_crop(img, w);
    return w;
}

} // namespace vegs::eval
