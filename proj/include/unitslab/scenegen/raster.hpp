#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace unitslab {

/// Row-major single-channel 2-D array: images, masks and probability maps.
struct Grid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    Grid() = default;
    Grid(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

    double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    std::size_t size() const noexcept { return values.size(); }

    friend bool operator==(const Grid&, const Grid&) = default;
};

/// Axis-aligned box with half-open pixel extent [x_min, x_max) x [y_min, y_max).
struct Box {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;
    /// Mean detector probability inside the box; zero for ground truth.
    double score = 0.0;

    long area() const noexcept { return static_cast<long>(x_max - x_min) * (y_max - y_min); }
    bool contains(int x, int y) const noexcept { return x >= x_min && x < x_max && y >= y_min && y < y_max; }
    bool overlaps(const Box& o) const noexcept {
        return x_min < o.x_max && o.x_min < x_max && y_min < o.y_max && o.y_min < y_max;
    }
    bool same_extent(const Box& o) const noexcept {
        return x_min == o.x_min && y_min == o.y_min && x_max == o.x_max && y_max == o.y_max;
    }
};

} // namespace unitslab
