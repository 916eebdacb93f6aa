#pragma once

#include "vegs/io/binary.hpp"
#include "vegs/io/png.hpp"
#include "vegs/render/rasterizer.hpp"

#include <filesystem>

namespace vegs::render {

/// Writes color.png plus alpha/depth/orientation/scale float32 planes.
inline void write_render(const std::filesystem::path& dir, const RenderOutput& out) {
    std::filesystem::create_directories(dir);
    io::write_png(dir / "color.png", out.color);
    io::write_plane(dir / "alpha.npyish", out.alpha);
    io::write_plane(dir / "depth.npyish", out.depth);
    io::write_plane(dir / "orientation.npyish", out.orientation);
    io::write_plane(dir / "scale.npyish", out.scale);
}

} // namespace vegs::render
