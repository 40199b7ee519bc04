#include "unitslab/augment/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/rng.hpp"

namespace unitslab::augment {

using numcore::derive_seed;
using numcore::Rng;

namespace {
constexpr std::uint64_t kJitterTag = 0x4A17;
constexpr std::uint64_t kStrongTag = 0x57A0;
} // namespace

const char* geo_kind_name(GeoKind k) noexcept {
    switch (k) {
    case GeoKind::Identity: return "identity";
    case GeoKind::Rot90: return "rot90";
    case GeoKind::Rot180: return "rot180";
    case GeoKind::Rot270: return "rot270";
    case GeoKind::Crop: return "crop";
    case GeoKind::Scale: return "scale";
    }
    return "?";
}

GeoKind parse_geo_kind(const std::string& name) {
    for (GeoKind k : {GeoKind::Identity, GeoKind::Rot90, GeoKind::Rot180, GeoKind::Rot270, GeoKind::Crop,
                      GeoKind::Scale}) {
        if (name == geo_kind_name(k)) return k;
    }
    throw ConfigError("unknown transform kind '" + name + "' (expected identity, rot90, rot180, rot270, crop, scale)");
}

GeoTransform GeoTransform::identity(std::size_t h, std::size_t w) {
    GeoTransform t;
    t.source_height = h;
    t.source_width = w;
    return t;
}

GeoTransform GeoTransform::rotation(GeoKind k, std::size_t h, std::size_t w) {
    if (k != GeoKind::Rot90 && k != GeoKind::Rot180 && k != GeoKind::Rot270) {
        throw ValueError(std::string("rotation: not a rotation kind: ") + geo_kind_name(k));
    }
    GeoTransform t = identity(h, w);
    t.kind = k;
    return t;
}

GeoTransform GeoTransform::crop(std::size_t h, std::size_t w, std::size_t x, std::size_t y, std::size_t cw,
                                std::size_t ch) {
    GeoTransform t = identity(h, w);
    t.kind = GeoKind::Crop;
    t.crop_x = x;
    t.crop_y = y;
    t.crop_w = cw;
    t.crop_h = ch;
    t.validate();
    return t;
}

GeoTransform GeoTransform::scaled(std::size_t h, std::size_t w, double factor) {
    GeoTransform t = identity(h, w);
    t.kind = GeoKind::Scale;
    t.scale = factor;
    t.validate();
    return t;
}

void GeoTransform::validate() const {
    if (source_height == 0 || source_width == 0) throw ValueError("transform: empty source shape");
    if (kind == GeoKind::Crop) {
        if (crop_w == 0 || crop_h == 0 || crop_x + crop_w > source_width || crop_y + crop_h > source_height) {
            std::ostringstream os;
            os << "crop window (" << crop_x << "," << crop_y << "," << crop_w << "," << crop_h
               << ") outside source " << source_height << "x" << source_width;
            throw ValueError(os.str());
        }
    }
    if (kind == GeoKind::Scale && scale != 0.5 && scale != 2.0) {
        throw ValueError("scale factor must be 0.5 or 2.0");
    }
}

std::pair<std::size_t, std::size_t> GeoTransform::output_shape() const {
    switch (kind) {
    case GeoKind::Rot90:
    case GeoKind::Rot270: return {source_width, source_height};
    case GeoKind::Crop: return {crop_h, crop_w};
    case GeoKind::Scale:
        if (scale == 2.0) return {2 * source_height, 2 * source_width};
        return {(source_height + 1) / 2, (source_width + 1) / 2};
    default: return {source_height, source_width};
    }
}

std::pair<std::size_t, std::size_t> GeoTransform::source_pixel(std::size_t i, std::size_t j) const {
    const std::size_t h = source_height, w = source_width;
    switch (kind) {
    case GeoKind::Identity: return {i, j};
    case GeoKind::Rot90: return {h - 1 - j, i};
    case GeoKind::Rot180: return {h - 1 - i, w - 1 - j};
    case GeoKind::Rot270: return {j, w - 1 - i};
    case GeoKind::Crop: return {crop_y + i, crop_x + j};
    case GeoKind::Scale:
        if (scale == 2.0) return {i / 2, j / 2};
        return {2 * i, 2 * j};
    }
    return {i, j};
}

std::string describe(const GeoTransform& t) {
    std::ostringstream os;
    os << geo_kind_name(t.kind);
    if (t.kind == GeoKind::Crop) os << "(" << t.crop_x << "," << t.crop_y << "," << t.crop_w << "," << t.crop_h << ")";
    if (t.kind == GeoKind::Scale) os << "(" << t.scale << ")";
    return os.str();
}

void WeakJitter::validate() const {
    if (!(brightness_max >= 0.0 && brightness_max <= 0.2)) throw ConfigError("brightness_max must lie in [0, 0.2]");
    if (!(contrast_lo >= 0.8 && contrast_lo <= 1.0 && contrast_hi >= 1.0 && contrast_hi <= 1.25)) {
        throw ConfigError("contrast range must satisfy 0.8 <= lo <= 1 <= hi <= 1.25");
    }
}

void AugSpec::validate() const {
    weak.validate();
    if (strong_enabled && strong_menu.empty()) throw ConfigError("strong_menu must be non-empty when strong_enabled");
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) throw ConfigError("crop_fraction must lie in (0, 1]");
}

JitterParams sample_jitter(std::uint64_t seed, const WeakJitter& spec) {
    Rng rng(derive_seed(seed, {kJitterTag}));
    JitterParams p;
    p.brightness = rng.uniform(-spec.brightness_max, spec.brightness_max);
    p.contrast = std::exp(rng.uniform(std::log(spec.contrast_lo), std::log(spec.contrast_hi)));
    return p;
}

Grid apply_jitter(const Grid& image, const JitterParams& p) {
    Grid out = image;
    for (double& v : out.values) v = std::clamp(p.contrast * (v - 0.5) + 0.5 + p.brightness, 0.0, 1.0);
    return out;
}

Grid color_jitter(const Grid& image, std::uint64_t seed, const WeakJitter& spec) {
    return apply_jitter(image, sample_jitter(seed, spec));
}

Grid apply_geo(const Grid& image, const GeoTransform& t) {
    t.validate();
    if (image.height != t.source_height || image.width != t.source_width) {
        std::ostringstream os;
        os << "image " << image.height << "x" << image.width << " vs transform source " << t.source_height << "x"
           << t.source_width;
        throw ShapeError("apply_geo", os.str());
    }
    const auto [oh, ow] = t.output_shape();
    Grid out(oh, ow);
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            const auto [sy, sx] = t.source_pixel(i, j);
            out.at(i, j) = image.at(sy, sx);
        }
    return out;
}

GeoTransform sample_strong(std::uint64_t seed, const AugSpec& spec, std::size_t height, std::size_t width) {
    if (!spec.strong_enabled) throw ConfigError("sample_strong: strong augmentation disabled");
    if (spec.strong_menu.empty()) throw ConfigError("sample_strong: empty menu");
    Rng rng(derive_seed(seed, {kStrongTag}));
    const GeoKind kind = spec.strong_menu[rng.index(spec.strong_menu.size())];
    switch (kind) {
    case GeoKind::Identity: return GeoTransform::identity(height, width);
    case GeoKind::Rot90:
    case GeoKind::Rot180:
    case GeoKind::Rot270: return GeoTransform::rotation(kind, height, width);
    case GeoKind::Crop: {
        const auto side = [&](std::size_t n) {
            return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(spec.crop_fraction * n)), 1, n);
        };
        const std::size_t cw = side(width), ch = side(height);
        const std::size_t x = rng.index(width - cw + 1);
        const std::size_t y = rng.index(height - ch + 1);
        return GeoTransform::crop(height, width, x, y, cw, ch);
    }
    case GeoKind::Scale: return GeoTransform::scaled(height, width, rng.index(2) == 0 ? 0.5 : 2.0);
    }
    return GeoTransform::identity(height, width);
}

TransportedMap transport_map(const Grid& map, const GeoTransform& t) {
    Grid moved = apply_geo(map, t);
    const auto [oh, ow] = t.output_shape();
    return {std::move(moved), Grid(oh, ow, 1.0)};
}

} // namespace unitslab::augment
