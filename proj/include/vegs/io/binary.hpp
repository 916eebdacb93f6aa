#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/core/math.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace vegs::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
void append_pod(std::string& buf, const T& value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T read_pod(std::string_view buf, std::size_t offset) {
    if (offset + sizeof(T) > buf.size()) throw InvalidInput("truncated binary data");
    T value;
    std::memcpy(&value, buf.data() + offset, sizeof(T));
    return value;
}

inline void append_f32(std::string& buf, std::span<const double> values) {
    const std::size_t start = buf.size();
    buf.resize(start + values.size() * sizeof(float));
    char* dst = buf.data() + start;
    for (double v : values) {
        const float f = static_cast<float>(v);
        std::memcpy(dst, &f, sizeof(float));
        dst += sizeof(float);
    }
}

inline std::vector<double> read_f32(std::string_view buf, std::size_t offset, std::size_t count) {
    if (offset + count * sizeof(float) > buf.size()) throw InvalidInput("truncated float32 array");
    std::vector<double> out(count);
    const char* src = buf.data() + offset;
    for (std::size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, src + i * sizeof(float), sizeof(float));
        out[i] = f;
    }
    return out;
}

// Plane files: uint32 height, uint32 width, then H*W*C little-endian float32.
// The channel count follows from the payload size.

inline std::string encode_plane(const Image& image) {
    std::string buf;
    buf.reserve(8 + image.data.size() * 4);
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(image.height));
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(image.width));
    append_f32(buf, image.data);
    return buf;
}

inline Image decode_plane(std::string_view bytes, const std::string& name = "plane") {
    if (bytes.size() < 8) throw InvalidInput(name + ": missing dims header");
    const auto h = read_pod<std::uint32_t>(bytes, 0);
    const auto w = read_pod<std::uint32_t>(bytes, 4);
    const std::size_t payload = bytes.size() - 8;
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    if (pixels == 0 || payload % (pixels * 4) != 0)
        throw InvalidInput(name + ": payload size does not match dims header");
    const int channels = static_cast<int>(payload / (pixels * 4));
    Image out(static_cast<int>(w), static_cast<int>(h), channels);
    out.data = read_f32(bytes, 8, pixels * channels);
    return out;
}

inline void write_plane(const std::filesystem::path& path, const Image& image) {
    write_file(path, encode_plane(image));
}

inline Image read_plane(const std::filesystem::path& path) { return decode_plane(read_file(path), path.string()); }

/// LiDAR scan: packed little-endian float32 x, y, z triples.
inline std::vector<Vec3> read_lidar(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() % 12 != 0) throw InvalidInput(path.string() + ": size is not a multiple of 12 bytes");
    const auto values = read_f32(bytes, 0, bytes.size() / 4);
    std::vector<Vec3> points(values.size() / 3);
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = {values[3 * i], values[3 * i + 1], values[3 * i + 2]};
    return points;
}

inline void write_lidar(const std::filesystem::path& path, std::span<const Vec3> points) {
    std::string buf;
    buf.reserve(points.size() * 12);
    for (const auto& p : points) append_f32(buf, std::span<const double>(p.data(), 3));
    write_file(path, buf);
}

} // namespace vegs::io
