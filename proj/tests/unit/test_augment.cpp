#include <array>
#include <map>

#include "doctest.h"
#include "unitslab/augment/augment.hpp"
#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/rng.hpp"
#include "unitslab/scenegen/scenegen.hpp"

using namespace unitslab;
using namespace unitslab::augment;
using numcore::Rng;

namespace {

Grid random_grid(Rng& rng, std::size_t h, std::size_t w) {
    Grid g(h, w);
    for (double& v : g.values) v = rng.uniform();
    return g;
}

/// Written out per kind with explicit loops over the source image, so it
/// does not share the output-to-source mapping used by the library.
Grid oracle_geo(const Grid& in, const GeoTransform& t) {
    const std::size_t h = in.height, w = in.width;
    switch (t.kind) {
    case GeoKind::Identity: return in;
    case GeoKind::Rot90: {
        // Source row y becomes output column h-1-y.
        Grid out(w, h);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(x, h - 1 - y) = in.at(y, x);
        return out;
    }
    case GeoKind::Rot180: {
        Grid out(h, w);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(h - 1 - y, w - 1 - x) = in.at(y, x);
        return out;
    }
    case GeoKind::Rot270: {
        Grid out(w, h);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(w - 1 - x, y) = in.at(y, x);
        return out;
    }
    case GeoKind::Crop: {
        Grid out(t.crop_h, t.crop_w);
        for (std::size_t y = t.crop_y; y < t.crop_y + t.crop_h; ++y)
            for (std::size_t x = t.crop_x; x < t.crop_x + t.crop_w; ++x) out.at(y - t.crop_y, x - t.crop_x) = in.at(y, x);
        return out;
    }
    case GeoKind::Scale: {
        if (t.scale == 2.0) {
            Grid out(2 * h, 2 * w);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) out.at(2 * y + dy, 2 * x + dx) = in.at(y, x);
            return out;
        }
        Grid out((h + 1) / 2, (w + 1) / 2);
        for (std::size_t y = 0; y < h; y += 2)
            for (std::size_t x = 0; x < w; x += 2) out.at(y / 2, x / 2) = in.at(y, x);
        return out;
    }
    }
    return in;
}

} // namespace

TEST_CASE("color jitter arithmetic") {
    Rng rng(1);
    const Grid img = random_grid(rng, 8, 8);
    CHECK(apply_jitter(img, {0.0, 1.0}) == img);
    const Grid half(4, 4, 0.5);
    for (double c : {0.8, 1.0, 1.25}) {
        for (double v : apply_jitter(half, {0.1, c}).values) CHECK(v == doctest::Approx(0.6).epsilon(1e-15));
    }
    CHECK(color_jitter(img, 5) == color_jitter(img, 5));
    CHECK_FALSE(color_jitter(img, 5) == color_jitter(img, 6));
}

TEST_CASE("jitter stays in range and within the configured magnitudes (property)") {
    Rng rng(2);
    const Grid img = random_grid(rng, 16, 16);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const JitterParams p = sample_jitter(seed);
        CHECK(std::abs(p.brightness) <= 0.2);
        CHECK(p.contrast >= 0.8 - 1e-12);
        CHECK(p.contrast <= 1.25 + 1e-12);
        const Grid out = color_jitter(img, seed);
        CHECK(out.height == img.height);
        for (double v : out.values) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("rotation conventions and group laws") {
    Grid g(2, 2);
    g.values = {1, 2, 3, 4}; // [[a,b],[c,d]]
    const Grid r = apply_geo(g, GeoTransform::rotation(GeoKind::Rot90, 2, 2));
    CHECK(r.values == std::vector<double>{3, 1, 4, 2}); // [[c,a],[d,b]]

    Rng rng(3);
    const Grid img = random_grid(rng, 7, 11);
    const auto rot = [](const Grid& x, GeoKind k) { return apply_geo(x, GeoTransform::rotation(k, x.height, x.width)); };
    CHECK(rot(rot(img, GeoKind::Rot180), GeoKind::Rot180) == img);
    CHECK(rot(rot(img, GeoKind::Rot90), GeoKind::Rot90) == rot(img, GeoKind::Rot180));
    CHECK(rot(rot(img, GeoKind::Rot90), GeoKind::Rot270) == img);
    CHECK(rot(rot(rot(img, GeoKind::Rot90), GeoKind::Rot90), GeoKind::Rot90) == rot(img, GeoKind::Rot270));
    CHECK(apply_geo(img, GeoTransform::identity(7, 11)) == img);
}

TEST_CASE("scale lattice and crop window") {
    Rng rng(4);
    for (std::size_t h : {8u, 9u}) {
        const Grid img = random_grid(rng, h, 10);
        const Grid down = apply_geo(img, GeoTransform::scaled(h, 10, 0.5));
        const Grid up = apply_geo(down, GeoTransform::scaled(down.height, down.width, 2.0));
        for (std::size_t y = 0; y < h; y += 2)
            for (std::size_t x = 0; x < 10; x += 2) CHECK(up.at(y, x) == img.at(y, x));
        for (std::size_t y = 0; y < up.height; ++y)
            for (std::size_t x = 0; x < up.width; ++x) CHECK(up.at(y, x) == down.at(y / 2, x / 2));
    }
    const Grid img = random_grid(rng, 64, 64);
    const GeoTransform c = GeoTransform::crop(64, 64, 4, 4, 32, 32);
    const auto tm = transport_map(img, c);
    CHECK(tm.map.height == 32);
    CHECK(tm.map.at(0, 0) == img.at(4, 4));
    double ones = 0.0;
    for (double v : tm.valid.values) ones += v;
    CHECK(ones == 32.0 * 32.0);

    CHECK_THROWS_AS(GeoTransform::crop(64, 64, 40, 0, 32, 32), ValueError);
    CHECK_THROWS_AS(GeoTransform::scaled(64, 64, 1.5), ValueError);
    CHECK_THROWS_AS(apply_geo(random_grid(rng, 10, 10), GeoTransform::identity(64, 64)), ShapeError);
}

TEST_CASE("identity transport") {
    Rng rng(5);
    const Grid m = random_grid(rng, 6, 6);
    const auto tm = transport_map(m, GeoTransform::identity(6, 6));
    CHECK(tm.map == m);
    CHECK(tm.valid == Grid(6, 6, 1.0));
}

TEST_CASE("sample_strong distribution and determinism") {
    AugSpec spec;
    spec.strong_menu = {GeoKind::Rot90};
    for (std::uint64_t s = 0; s < 50; ++s) CHECK(sample_strong(s, spec, 64, 64).kind == GeoKind::Rot90);

    spec.strong_menu = {GeoKind::Rot90, GeoKind::Rot180, GeoKind::Rot270};
    std::map<GeoKind, int> freq;
    for (std::uint64_t s = 0; s < 3000; ++s) ++freq[sample_strong(s, spec, 64, 64).kind];
    for (GeoKind k : spec.strong_menu) CHECK(std::abs(freq[k] / 3000.0 - 1.0 / 3.0) <= 0.03);
    CHECK(sample_strong(77, spec, 64, 64) == sample_strong(77, spec, 64, 64));

    spec.strong_menu = {GeoKind::Crop, GeoKind::Scale};
    for (std::uint64_t s = 0; s < 200; ++s) {
        const GeoTransform t = sample_strong(s, spec, 64, 64);
        CHECK_NOTHROW(t.validate());
        if (t.kind == GeoKind::Crop) CHECK(t.crop_w == 48);
    }

    spec.strong_enabled = false;
    CHECK_THROWS_AS(sample_strong(1, spec, 64, 64), ConfigError);
    spec.strong_enabled = true;
    spec.strong_menu.clear();
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("mask transport is equivariant with the image transform on ground truth") {
    AugSpec spec;
    spec.strong_menu = {GeoKind::Rot90, GeoKind::Rot180, GeoKind::Rot270, GeoKind::Crop, GeoKind::Scale};
    const auto cfg = scenegen::DomainConfig::real_default();
    Rng rng(6);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = scenegen::gen_sample(seed, scenegen::Domain::Real, cfg);
        std::vector<GeoTransform> ts{GeoTransform::rotation(GeoKind::Rot90, 64, 64),
                                     GeoTransform::rotation(GeoKind::Rot180, 64, 64),
                                     GeoTransform::rotation(GeoKind::Rot270, 64, 64),
                                     GeoTransform::scaled(64, 64, 0.5), GeoTransform::scaled(64, 64, 2.0),
                                     sample_strong(seed, spec, 64, 64)};
        const std::size_t cx = rng.index(33), cy = rng.index(33);
        ts.push_back(GeoTransform::crop(64, 64, cx, cy, 32, 32));
        for (const GeoTransform& t : ts) {
            const auto tm = transport_map(s.mask, t);
            const Grid expected_mask = oracle_geo(s.mask, t);
            CHECK(tm.map == expected_mask);
            CHECK(apply_geo(s.image, t) == oracle_geo(s.image, t));
            CHECK(tm.valid == Grid(tm.map.height, tm.map.width, 1.0));
        }
    }
}
