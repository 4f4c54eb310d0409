#pragma once

#include "snbv/errors.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace snbv {

/// Dense H x W x C image of doubles, row-major with interleaved channels.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    [[nodiscard]] std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    [[nodiscard]] double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
    [[nodiscard]] std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    [[nodiscard]] bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                            "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" +
                            std::to_string(b.height) + "x" + std::to_string(b.channels));
    }
}

/// One-hot H x W x (n+1) image from an instance-id mask.
inline Image one_hot(const std::vector<int>& mask, int width, int height, int n_objects) {
    if (mask.size() != static_cast<std::size_t>(width) * height) {
        throw ShapeMismatch("mask size");
    }
    Image out(width, height, n_objects + 1);
    for (std::size_t p = 0; p < mask.size(); ++p) {
        const int k = mask[p];
        if (k < 0 || k > n_objects) {
            throw ShapeMismatch("mask label " + std::to_string(k) + " outside [0, n]");
        }
        out.data[p * out.channels + k] = 1.0;
    }
    return out;
}

} // namespace snbv
