#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unitslab/scenegen/raster.hpp"

namespace unitslab::augment {

/// Geometric transform kinds. Rotations follow out[i][j] = in[H-1-j][i] for Rot90,
/// i.e. [[a,b],[c,d]] -> [[c,a],[d,b]].
enum class GeoKind { Identity, Rot90, Rot180, Rot270, Crop, Scale };

const char* geo_kind_name(GeoKind k) noexcept;
GeoKind parse_geo_kind(const std::string& name);

/// An exact pixel permutation, subset or replication of a source image of
/// shape (source_height, source_width). No interpolation anywhere.
struct GeoTransform {
    GeoKind kind = GeoKind::Identity;
    std::size_t source_height = 0;
    std::size_t source_width = 0;
    // Crop window, used when kind == Crop.
    std::size_t crop_x = 0, crop_y = 0, crop_w = 0, crop_h = 0;
    // 0.5 or 2.0, used when kind == Scale.
    double scale = 1.0;

    static GeoTransform identity(std::size_t h, std::size_t w);
    static GeoTransform rotation(GeoKind k, std::size_t h, std::size_t w);
    static GeoTransform crop(std::size_t h, std::size_t w, std::size_t x, std::size_t y, std::size_t cw, std::size_t ch);
    static GeoTransform scaled(std::size_t h, std::size_t w, double factor);

    std::pair<std::size_t, std::size_t> output_shape() const;
    /// Source pixel (y, x) feeding output pixel (i, j).
    std::pair<std::size_t, std::size_t> source_pixel(std::size_t i, std::size_t j) const;
    void validate() const;

    bool operator==(const GeoTransform&) const = default;
};

std::string describe(const GeoTransform& t);

/// Brightness/contrast jitter ranges.
struct WeakJitter {
    double brightness_max = 0.2;
    double contrast_lo = 0.8;
    double contrast_hi = 1.25;
    void validate() const;
};

struct AugSpec {
    WeakJitter weak;
    bool strong_enabled = true;
    std::vector<GeoKind> strong_menu{GeoKind::Rot90, GeoKind::Rot180, GeoKind::Rot270};
    /// Crop side as a fraction of the source side when Crop is on the menu.
    double crop_fraction = 0.75;
    void validate() const;
};

struct JitterParams {
    double brightness = 0.0;
    double contrast = 1.0;
};

/// Brightness uniform in [-max, max]; contrast log-uniform in [lo, hi].
JitterParams sample_jitter(std::uint64_t seed, const WeakJitter& spec = {});

/// clip(contrast * (v - 0.5) + 0.5 + brightness, 0, 1) per pixel.
Grid apply_jitter(const Grid& image, const JitterParams& p);
Grid color_jitter(const Grid& image, std::uint64_t seed, const WeakJitter& spec = {});

/// Throws ShapeError when the image does not match t.source_shape, ValueError
/// for an out-of-bounds crop window.
Grid apply_geo(const Grid& image, const GeoTransform& t);

/// Uniform over menu kinds, then uniform over that kind's instantiations.
/// Throws ConfigError when strong augmentation is disabled.
GeoTransform sample_strong(std::uint64_t seed, const AugSpec& spec, std::size_t height, std::size_t width);

struct TransportedMap {
    Grid map;
    Grid valid;
};

/// Moves a per-pixel map into the transformed frame. `valid` is expressed in
/// the output frame and marks pixels with an existing source pixel.
TransportedMap transport_map(const Grid& map, const GeoTransform& t);

} // namespace unitslab::augment
