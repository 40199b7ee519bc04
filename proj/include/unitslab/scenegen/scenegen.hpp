#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unitslab/scenegen/raster.hpp"

namespace unitslab::scenegen {

enum class Domain : std::uint8_t { Synthetic, Real };

const char* domain_name(Domain d) noexcept;
/// Parses "synthetic" or "real"; throws ConfigError otherwise.
Domain parse_domain(const std::string& name);

enum class Blur : std::uint8_t { None, Box3x3 };

/// Appearance parameters of one toy domain.
struct DomainConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    double background_level_lo = 0.05;
    double background_level_hi = 0.15;
    double background_noise_std = 0.02;
    double background_texture_amp = 0.0;
    double stroke_intensity_lo = 0.85;
    double stroke_intensity_hi = 1.0;
    double instance_rotation_max_deg = 0.0;
    Blur blur = Blur::None;
    int instance_count_min = 1;
    int instance_count_max = 4;
    int min_instance_area = 12;

    /// Clean, flat, axis-aligned rendering.
    static DomainConfig synthetic_default();
    /// Textured background, weaker strokes, rotation and blur.
    static DomainConfig real_default();
    static DomainConfig defaults_for(Domain d);

    /// Throws ConfigError when ranges are disordered or amplitudes negative.
    void validate() const;
};

struct LabeledSample {
    Grid image; ///< values in [0, 1]
    Grid mask;  ///< 1 on rendered strokes, 0 elsewhere
    std::vector<Box> boxes;
    Domain domain = Domain::Synthetic;
    std::uint64_t sample_id = 0;
};

/// An image whose labels have been withheld. Only `strip_labels` creates one,
/// and it has no path back to the mask or boxes.
class UnlabeledSample {
public:
    const Grid& image() const noexcept { return image_; }
    std::uint64_t sample_id() const noexcept { return sample_id_; }
    Domain domain() const noexcept { return domain_; }

private:
    friend UnlabeledSample strip_labels(const LabeledSample& sample);
    UnlabeledSample(Grid image, std::uint64_t id, Domain domain)
        : image_(std::move(image)), sample_id_(id), domain_(domain) {}

    Grid image_;
    std::uint64_t sample_id_;
    Domain domain_;
};

UnlabeledSample strip_labels(const LabeledSample& sample);
std::vector<UnlabeledSample> strip_labels(const std::vector<LabeledSample>& samples);

/// Renders one sample. A pure function of (seed, domain, cfg).
LabeledSample gen_sample(std::uint64_t seed, Domain domain, const DomainConfig& cfg);

/// Samples base_seed .. base_seed + count - 1.
std::vector<LabeledSample> gen_samples(std::uint64_t base_seed, std::size_t count, Domain domain,
                                       const DomainConfig& cfg);

} // namespace unitslab::scenegen
