#include "unitslab/scenegen/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/rng.hpp"

namespace unitslab::scenegen {

using numcore::Rng;

namespace {

constexpr int kStroke = 2;        // stroke width in pixels
constexpr int kPitch = 3;         // stroke + gap
constexpr int kMargin = 3;        // minimum free pixels between instance boxes
constexpr int kPlacementAttempts = 100;

/// Binary stroke pattern of one "word": a baseline joining vertical strokes,
/// with random stroke heights and cap bars between neighbours.
Grid glyph_block(Rng& rng) {
    const int glyphs = static_cast<int>(rng.between(2, 6));
    const int h = static_cast<int>(rng.between(7, 11));
    const int w = glyphs * kPitch + kStroke;
    Grid p(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    for (int y = h - kStroke; y < h; ++y)
        for (int x = 0; x < w; ++x) p.at(y, x) = 1.0;
    const int strokes = glyphs + 1;
    std::vector<int> top(static_cast<std::size_t>(strokes));
    for (int s = 0; s < strokes; ++s) {
        top[static_cast<std::size_t>(s)] = rng.uniform() < 0.3 ? static_cast<int>(rng.between(2, h / 2)) : 0;
        for (int y = top[static_cast<std::size_t>(s)]; y < h; ++y)
            for (int x = s * kPitch; x < s * kPitch + kStroke; ++x) p.at(y, x) = 1.0;
    }
    for (int s = 0; s + 1 < strokes; ++s) {
        if (rng.uniform() >= 0.4) continue;
        const int y0 = std::max(top[static_cast<std::size_t>(s)], top[static_cast<std::size_t>(s + 1)]);
        for (int y = y0; y < y0 + kStroke; ++y)
            for (int x = s * kPitch; x < (s + 1) * kPitch + kStroke; ++x) p.at(y, x) = 1.0;
    }
    return p;
}

/// Nearest-neighbour rotation about the centre, cropped to the non-empty extent.
Grid rotate_pattern(const Grid& p, double degrees) {
    if (degrees == 0.0) return p;
    const double a = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(a);
    const double s = std::sin(a);
    const double ph = static_cast<double>(p.height);
    const double pw = static_cast<double>(p.width);
    const auto oh = static_cast<std::size_t>(std::ceil(std::abs(ph * c) + std::abs(pw * s))) + 2;
    const auto ow = static_cast<std::size_t>(std::ceil(std::abs(pw * c) + std::abs(ph * s))) + 2;
    Grid out(oh, ow);
    const double cy_in = (ph - 1.0) / 2.0;
    const double cx_in = (pw - 1.0) / 2.0;
    const double cy_out = (static_cast<double>(oh) - 1.0) / 2.0;
    const double cx_out = (static_cast<double>(ow) - 1.0) / 2.0;
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            const double dy = static_cast<double>(y) - cy_out;
            const double dx = static_cast<double>(x) - cx_out;
            const double sx = c * dx + s * dy + cx_in;
            const double sy = -s * dx + c * dy + cy_in;
            const long ix = std::lround(sx);
            const long iy = std::lround(sy);
            if (ix >= 0 && iy >= 0 && ix < static_cast<long>(p.width) && iy < static_cast<long>(p.height)) {
                out.at(y, x) = p.at(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
        }
    }
    return out;
}

/// Keeps the largest 4-connected component so every instance is one piece.
Grid largest_component(const Grid& p) {
    std::vector<int> label(p.size(), -1);
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.values[i] == 0.0 || label[i] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        stack.push_back(i);
        label[i] = id;
        while (!stack.empty()) {
            const std::size_t j = stack.back();
            stack.pop_back();
            ++sizes.back();
            const std::size_t y = j / p.width;
            const std::size_t x = j % p.width;
            const auto visit = [&](std::size_t k) {
                if (p.values[k] != 0.0 && label[k] < 0) {
                    label[k] = id;
                    stack.push_back(k);
                }
            };
            if (x > 0) visit(j - 1);
            if (x + 1 < p.width) visit(j + 1);
            if (y > 0) visit(j - p.width);
            if (y + 1 < p.height) visit(j + p.width);
        }
    }
    if (sizes.empty()) return p;
    const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    Grid out(p.height, p.width);
    for (std::size_t i = 0; i < p.size(); ++i) out.values[i] = label[i] == keep ? 1.0 : 0.0;
    return out;
}

/// Tight crop of the non-zero region.
Grid crop_to_content(const Grid& p) {
    std::size_t y0 = p.height, y1 = 0, x0 = p.width, x1 = 0;
    for (std::size_t y = 0; y < p.height; ++y)
        for (std::size_t x = 0; x < p.width; ++x)
            if (p.at(y, x) != 0.0) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y + 1);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x + 1);
            }
    if (y0 >= y1) return Grid{};
    Grid out(y1 - y0, x1 - x0);
    for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) out.at(y - y0, x - x0) = p.at(y, x);
    return out;
}

/// Smooth blotches: a coarse random lattice, bilinearly upsampled.
void add_texture(Grid& img, Rng& rng, double amp) {
    if (amp == 0.0) return;
    constexpr std::size_t kCell = 8;
    const std::size_t gh = img.height / kCell + 2;
    const std::size_t gw = img.width / kCell + 2;
    Grid lattice(gh, gw);
    for (double& v : lattice.values) v = rng.uniform(-1.0, 1.0);
    for (std::size_t y = 0; y < img.height; ++y) {
        const double fy = static_cast<double>(y) / kCell;
        const auto iy = static_cast<std::size_t>(fy);
        const double ty = fy - static_cast<double>(iy);
        for (std::size_t x = 0; x < img.width; ++x) {
            const double fx = static_cast<double>(x) / kCell;
            const auto ix = static_cast<std::size_t>(fx);
            const double tx = fx - static_cast<double>(ix);
            const double top = lattice.at(iy, ix) * (1.0 - tx) + lattice.at(iy, ix + 1) * tx;
            const double bot = lattice.at(iy + 1, ix) * (1.0 - tx) + lattice.at(iy + 1, ix + 1) * tx;
            img.at(y, x) += amp * (top * (1.0 - ty) + bot * ty);
        }
    }
}

Grid box_blur3(const Grid& img) {
    Grid out(img.height, img.width);
    const auto h = static_cast<long>(img.height);
    const auto w = static_cast<long>(img.width);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double s = 0.0;
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    const long sy = std::clamp(y + dy, 0L, h - 1);
                    const long sx = std::clamp(x + dx, 0L, w - 1);
                    s += img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                }
            out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = s / 9.0;
        }
    }
    return out;
}

} // namespace

const char* domain_name(Domain d) noexcept { return d == Domain::Synthetic ? "synthetic" : "real"; }

Domain parse_domain(const std::string& name) {
    if (name == "synthetic") return Domain::Synthetic;
    if (name == "real") return Domain::Real;
    throw ConfigError("unknown domain '" + name + "' (expected synthetic or real)");
}

DomainConfig DomainConfig::synthetic_default() { return DomainConfig{}; }

DomainConfig DomainConfig::real_default() {
    DomainConfig c;
    c.background_level_lo = 0.12;
    c.background_level_hi = 0.25;
    c.background_noise_std = 0.05;
    c.background_texture_amp = 0.15;
    c.stroke_intensity_lo = 0.45;
    c.stroke_intensity_hi = 0.9;
    c.instance_rotation_max_deg = 15.0;
    c.blur = Blur::Box3x3;
    return c;
}

DomainConfig DomainConfig::defaults_for(Domain d) {
    return d == Domain::Synthetic ? synthetic_default() : real_default();
}

void DomainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("domain config: " + m); };
    if (height < 16 || width < 16) fail("image must be at least 16x16");
    if (!(background_level_lo <= background_level_hi)) fail("background level range out of order");
    if (background_level_lo < 0.0 || background_level_hi > 1.0) fail("background level outside [0, 1]");
    if (!(background_noise_std >= 0.0)) fail("background_noise_std must be >= 0");
    if (!(background_texture_amp >= 0.0)) fail("background_texture_amp must be >= 0");
    if (!(stroke_intensity_lo <= stroke_intensity_hi)) fail("stroke intensity range out of order");
    if (stroke_intensity_lo < 0.0 || stroke_intensity_hi > 1.0) fail("stroke intensity outside [0, 1]");
    if (!(instance_rotation_max_deg >= 0.0 && instance_rotation_max_deg <= 45.0)) {
        fail("instance_rotation_max_deg must lie in [0, 45]");
    }
    if (instance_count_min < 1 || instance_count_max > 4 || instance_count_min > instance_count_max) {
        fail("instance count range must be well-ordered within [1, 4]");
    }
    if (min_instance_area < 1) fail("min_instance_area must be positive");
}

UnlabeledSample strip_labels(const LabeledSample& sample) {
    return UnlabeledSample(sample.image, sample.sample_id, sample.domain);
}

std::vector<UnlabeledSample> strip_labels(const std::vector<LabeledSample>& samples) {
    std::vector<UnlabeledSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(strip_labels(s));
    return out;
}

LabeledSample gen_sample(std::uint64_t seed, Domain domain, const DomainConfig& cfg) {
    cfg.validate();
    Rng rng(numcore::derive_seed(seed, {static_cast<std::uint64_t>(domain) + 1}));

    LabeledSample s;
    s.domain = domain;
    s.sample_id = seed;
    s.image = Grid(cfg.height, cfg.width, rng.uniform(cfg.background_level_lo, cfg.background_level_hi));
    s.mask = Grid(cfg.height, cfg.width);
    add_texture(s.image, rng, cfg.background_texture_amp);

    const int wanted = static_cast<int>(rng.between(cfg.instance_count_min, cfg.instance_count_max));
    const auto H = static_cast<int>(cfg.height);
    const auto W = static_cast<int>(cfg.width);
    for (int inst = 0; inst < static_cast<int>(wanted); ++inst) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            const double angle = cfg.instance_rotation_max_deg > 0.0
                                     ? rng.uniform(-cfg.instance_rotation_max_deg, cfg.instance_rotation_max_deg)
                                     : 0.0;
            const Grid pattern = crop_to_content(largest_component(rotate_pattern(glyph_block(rng), angle)));
            const double intensity = rng.uniform(cfg.stroke_intensity_lo, cfg.stroke_intensity_hi);
            const auto ph = static_cast<int>(pattern.height);
            const auto pw = static_cast<int>(pattern.width);
            if (ph == 0 || ph + 2 > H || pw + 2 > W) continue;
            long area = 0;
            for (double v : pattern.values) area += v != 0.0;
            if (area < cfg.min_instance_area) continue;

            const int x0 = static_cast<int>(rng.between(1, W - pw - 1));
            const int y0 = static_cast<int>(rng.between(1, H - ph - 1));
            const Box box{x0, y0, x0 + pw, y0 + ph};
            const Box grown{box.x_min - kMargin, box.y_min - kMargin, box.x_max + kMargin, box.y_max + kMargin};
            if (std::any_of(s.boxes.begin(), s.boxes.end(), [&](const Box& b) { return b.overlaps(grown); })) {
                continue;
            }
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x)
                    if (pattern.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) != 0.0) {
                        s.image.at(static_cast<std::size_t>(y0 + y), static_cast<std::size_t>(x0 + x)) = intensity;
                        s.mask.at(static_cast<std::size_t>(y0 + y), static_cast<std::size_t>(x0 + x)) = 1.0;
                    }
            s.boxes.push_back(box);
            placed = true;
        }
        // Crowded canvas: settle for fewer instances.
        if (!placed) break;
    }

    for (double& v : s.image.values) v += cfg.background_noise_std * rng.normal();
    if (cfg.blur == Blur::Box3x3) s.image = box_blur3(s.image);
    for (double& v : s.image.values) v = std::clamp(v, 0.0, 1.0);

    std::sort(s.boxes.begin(), s.boxes.end(), [](const Box& a, const Box& b) {
        return a.y_min != b.y_min ? a.y_min < b.y_min : a.x_min < b.x_min;
    });
    return s;
}

std::vector<LabeledSample> gen_samples(std::uint64_t base_seed, std::size_t count, Domain domain,
                                       const DomainConfig& cfg) {
    std::vector<LabeledSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(gen_sample(base_seed + i, domain, cfg));
    return out;
}

} // namespace unitslab::scenegen
