#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "aogparts/errors.hpp"

namespace aogparts {

/// Image-plane point in pixels.
struct Point {
    double x = 0.0;
    double y = 0.0;

    friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
    friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
    friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
    friend bool operator==(const Point&, const Point&) = default;
};

inline double squared_norm(Point p) { return p.x * p.x + p.y * p.y; }
inline double norm(Point p) { return std::sqrt(squared_norm(p)); }

/// Axis-aligned box, pixels, (x1, y1) top-left and (x2, y2) bottom-right.
struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    Point center() const { return {0.5 * (x1 + x2), 0.5 * (y1 + y2)}; }
    friend bool operator==(const Box&, const Box&) = default;
};

/// Width/height pair of a region, pixels.
struct Scale {
    double width = 0.0;
    double height = 0.0;
    friend bool operator==(const Scale&, const Scale&) = default;
};

/// A parsed image region: center plus fixed scale.
struct Region {
    Point center;
    Scale scale;

    Box box() const {
        return {center.x - 0.5 * scale.width, center.y - 0.5 * scale.height,
                center.x + 0.5 * scale.width, center.y + 0.5 * scale.height};
    }
};

/// Integer index of a unit inside one conv-slice.
struct UnitIndex {
    int ix = 0; // column
    int iy = 0; // row
    friend bool operator==(const UnitIndex&, const UnitIndex&) = default;
};

/// Receptive-field geometry of one exported conv layer.
///
/// Unit (ix, iy) is centered at offset_px + stride_px * (ix, iy) on the image
/// plane. Nothing in the library assumes a particular network; each volume
/// carries its own geometry.
struct LayerGeometry {
    std::uint32_t layer_id = 0;
    std::uint32_t channels = 1;
    std::uint32_t height = 1;
    std::uint32_t width = 1;
    float stride_px = 1.0F;
    float rf_size_px = 1.0F;
    float offset_px = 0.0F;

    std::size_t slice_size() const { return std::size_t{height} * width; }
    std::size_t element_count() const { return std::size_t{channels} * slice_size(); }

    friend bool operator==(const LayerGeometry&, const LayerGeometry&) = default;
};

/// Image-plane center of unit (ix, iy).
inline Point unit_center(const LayerGeometry& geom, int ix, int iy) {
    if (ix < 0 || iy < 0 || ix >= static_cast<int>(geom.width) ||
        iy >= static_cast<int>(geom.height)) {
        throw IndexError("unit (" + std::to_string(ix) + ", " + std::to_string(iy) +
                         ") outside layer " + std::to_string(geom.layer_id) + " of size " +
                         std::to_string(geom.width) + "x" + std::to_string(geom.height));
    }
    return {static_cast<double>(geom.offset_px) + static_cast<double>(geom.stride_px) * ix,
            static_cast<double>(geom.offset_px) + static_cast<double>(geom.stride_px) * iy};
}

inline Point unit_center(const LayerGeometry& geom, UnitIndex u) {
    return unit_center(geom, u.ix, u.iy);
}

/// Unit whose center is nearest to p, clamped to the layer extent.
inline UnitIndex nearest_unit(const LayerGeometry& geom, Point p) {
    const double s = geom.stride_px;
    const auto clamp_axis = [](double v, std::uint32_t n) {
        const long r = static_cast<long>(std::ceil(v - 0.5)); // halves go to the smaller index
        return static_cast<int>(std::clamp<long>(r, 0, static_cast<long>(n) - 1));
    };
    return {clamp_axis((p.x - geom.offset_px) / s, geom.width),
            clamp_axis((p.y - geom.offset_px) / s, geom.height)};
}

/// Clamp a point into [0, width) x [0, height).
inline Point clamp_to_image(Point p, double image_width, double image_height) {
    const auto below = [](double v) { return std::nextafter(v, -1.0); };
    return {std::clamp(p.x, 0.0, below(image_width)), std::clamp(p.y, 0.0, below(image_height))};
}

} // namespace aogparts

namespace aogparts {

/// Units whose centers lie in the closed square of side range_px centered at
/// `center`, in row-major order (row, then column).
inline std::vector<UnitIndex> units_in_range(const LayerGeometry& geom, Point center, double range_px) {
    const double half = 0.5 * range_px;
    const double s = geom.stride_px;
    const double o = geom.offset_px;
    const auto lo = [&](double c) { return static_cast<int>(std::floor((c - half - o) / s)) - 1; };
    const auto hi = [&](double c) { return static_cast<int>(std::ceil((c + half - o) / s)) + 1; };
    const int x0 = std::max(0, lo(center.x));
    const int x1 = std::min(static_cast<int>(geom.width) - 1, hi(center.x));
    const int y0 = std::max(0, lo(center.y));
    const int y1 = std::min(static_cast<int>(geom.height) - 1, hi(center.y));
    std::vector<UnitIndex> out;
    for (int iy = y0; iy <= y1; ++iy) {
        const double uy = o + s * iy;
        if (std::abs(uy - center.y) > half) {
            continue;
        }
        for (int ix = x0; ix <= x1; ++ix) {
            const double ux = o + s * ix;
            if (std::abs(ux - center.x) <= half) {
                out.push_back({ix, iy});
            }
        }
    }
    return out;
}

} // namespace aogparts
