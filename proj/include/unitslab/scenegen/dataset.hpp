#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unitslab/scenegen/scenegen.hpp"

namespace unitslab::scenegen {

struct Manifest {
    Domain domain = Domain::Synthetic;
    std::uint64_t base_seed = 0;
    std::vector<std::uint64_t> ids;
    std::string config_hash;
    DomainConfig config;
    std::filesystem::path dir;
};

struct ManifestCheck {
    bool config_matches = true;
    std::vector<std::string> warnings;
};

/// Canonical JSON text of a domain config (sorted keys) and its digest.
std::string config_json(const DomainConfig& cfg);
DomainConfig config_from_json(const std::string& text);
std::string config_hash(const DomainConfig& cfg);

/// Writes <id>.pgm, <id>.mask.pgm and <id>.json per sample plus manifest.json.
Manifest write_dataset(const std::filesystem::path& dir, std::size_t count, Domain domain, const DomainConfig& cfg,
                       std::uint64_t base_seed);
/// Writes already generated samples; used when the caller owns the corpus.
Manifest write_samples(const std::filesystem::path& dir, const std::vector<LabeledSample>& samples, Domain domain,
                       const DomainConfig& cfg, std::uint64_t base_seed);

Manifest load_manifest(const std::filesystem::path& dir);

/// Compares the manifest's recorded config hash against `expected`. A mismatch
/// is reported as a warning (also logged), never as an error.
ManifestCheck check_manifest(const Manifest& manifest, const DomainConfig& expected);

/// Loads one sample from its annotation JSON file.
LabeledSample load_sample(const std::filesystem::path& annotation_path);
std::vector<LabeledSample> load_samples(const Manifest& manifest);

std::filesystem::path annotation_path(const std::filesystem::path& dir, std::uint64_t id);

/// Stored gray level: round(v * 255).
std::uint8_t quantize_level(double v) noexcept;
/// The value a pixel reads back as after a write/load round trip.
double quantize(double v) noexcept;

// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const Grid& g);
Grid read_pgm(const std::filesystem::path& path);

/// Annotation-schema JSON for a set of boxes (also used for prediction dumps).
std::string boxes_json(std::uint64_t sample_id, Domain domain, const std::vector<Box>& boxes,
                       const std::string& mask_file);

} // namespace unitslab::scenegen
