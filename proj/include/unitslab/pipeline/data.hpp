#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unitslab/pipeline/config.hpp"
#include "unitslab/scenegen/scenegen.hpp"

namespace unitslab::pipeline {

using scenegen::LabeledSample;
using scenegen::UnlabeledSample;

/// First sample id of each split. Splits never share ids.
inline constexpr std::uint64_t kSyntheticBase = 1'000'000;
inline constexpr std::uint64_t kRealTrainBase = 2'000'000;
inline constexpr std::uint64_t kRealUnlabeledBase = 3'000'000;
inline constexpr std::uint64_t kRealTestBase = 4'000'000;

/// The four splits of one experiment. Images carry the 8-bit quantization of
/// the on-disk format whether they were loaded or generated in memory.
struct DataBundle {
    std::vector<LabeledSample> synthetic;
    std::vector<LabeledSample> real_train;
    std::vector<UnlabeledSample> real_unlabeled;
    std::vector<LabeledSample> real_test;
};

/// Split directory names under data_dir.
inline const std::vector<std::string> kSplitNames{"synthetic", "real_train", "real_unlabeled", "real_test"};

/// Writes every split under `dir` as PGM/JSON datasets.
void generate_data(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Loads from cfg.data.data_dir when it holds a dataset, otherwise generates
/// in memory. Manifest config mismatches are logged as warnings.
DataBundle load_data(const ExperimentConfig& cfg);

} // namespace unitslab::pipeline
