#pragma once

#include "vegs/core/error.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vegs {

/// Row-major H x W x C image of doubles.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    [[nodiscard]] bool empty() const { return data.empty(); }
    [[nodiscard]] std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    [[nodiscard]] std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    [[nodiscard]] double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    [[nodiscard]] std::span<double> pixel(int x, int y) { return {data.data() + index(x, y), std::size_t(channels)}; }
    [[nodiscard]] std::span<const double> pixel(int x, int y) const {
        return {data.data() + index(x, y), std::size_t(channels)};
    }

    [[nodiscard]] bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline void require_same_shape(const Image& a, const Image& b, const std::string& what) {
    if (!a.same_shape(b)) {
        throw InvalidInput(what + ": shape mismatch (" + std::to_string(a.width) + "x" + std::to_string(a.height) + "x" +
                           std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" +
                           std::to_string(b.height) + "x" + std::to_string(b.channels) + ")");
    }
}

/// Copies columns [x0, x0 + w) of every row.
inline Image crop_columns(const Image& img, int x0, int w) {
    Image out(w, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x0 + x, y, c);
    return out;
}

inline Image crop(const Image& img, int x0, int y0, int w, int h) {
    Image out(w, h, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
    return out;
}

} // namespace vegs
