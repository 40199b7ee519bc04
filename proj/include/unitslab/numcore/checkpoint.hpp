#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unitslab/numcore/params.hpp"

namespace unitslab::numcore {

inline constexpr char kCheckpointMagic[4] = {'U', 'N', 'T', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, all integers little-endian:
//   "UNTS" | u32 version | u32 count | count x entry
//   u32 momentum count | momentum count x entry | u64 step_count
// entry: u16 name length | name bytes | u8 rank | rank x u32 dim | values as f64

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params);

/// `origin` names the source in error messages.
ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin);

void checkpoint_save(const ParamSet& params, const std::filesystem::path& path);
ParamSet checkpoint_load(const std::filesystem::path& path);

/// 64-bit FNV-1a digest, printed as 16 hex digits by `hex_digest`.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::string hex_digest(std::uint64_t digest);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace unitslab::numcore
