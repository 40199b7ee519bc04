#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "unitslab/detector/detector.hpp"
#include "unitslab/scenegen/scenegen.hpp"
#include "unitslab/units/units.hpp"

namespace unitslab::pipeline {

using scenegen::DomainConfig;

struct OptimConfig {
    double lr = 0.1;
    double momentum = 0.9;
    int epochs = 1;
    std::size_t batch = 8;
};

struct SplitSizes {
    std::size_t synthetic = 0;
    std::size_t real_train = 0;
    std::size_t real_unlabeled = 0;
    std::size_t real_test = 0;
};

struct DataConfig {
    DomainConfig synthetic = DomainConfig::synthetic_default();
    DomainConfig real = DomainConfig::real_default();
    SplitSizes sizes;
    /// Reserved for several unlabeled domains; only one entry is accepted.
    std::vector<std::string> unlabeled_pools{"real"};
    /// Where gen-data writes and runs read datasets. Empty: generate in memory.
    std::string data_dir;
};

struct UnitsConfig {
    units::Strategy strategy = units::Strategy::DBSS;
    /// Explicit overrides of the derived learning rate and epoch count.
    std::optional<double> lr;
    std::optional<int> epochs;
    /// Everything except `lr`, which comes from the stage plan.
    units::UnitsHyper hyper;
};

struct ExperimentConfig {
    std::vector<std::uint64_t> seeds;
    DataConfig data;
    detector::DetectorConfig detector;
    OptimConfig pretrain;
    OptimConfig finetune;
    UnitsConfig units;
    double iou_threshold = 0.5;
    std::string out_dir = "runs";

    /// Throws ConfigError on any violated invariant.
    void validate() const;
};

/// Built-in defaults, sized so a ten-seed strategy ablation finishes in
/// minutes on one core.
ExperimentConfig default_config();

/// Every field, defaults materialized, keys sorted.
nlohmann::json to_json(const ExperimentConfig& cfg);
/// Overlays `patch` on the defaults. Unknown keys and invalid values throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& patch);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Digest of the canonical JSON text.
std::string config_digest(const ExperimentConfig& cfg);

enum class Stage { Pretrain, Units, Finetune };
const char* stage_name(Stage s) noexcept;

struct StagePlan {
    Stage stage = Stage::Pretrain;
    double lr = 0.0;
    double momentum = 0.0;
    int epochs = 1;
    std::size_t batch = 8;
    std::optional<std::filesystem::path> init_checkpoint;
    /// Set when lr or epochs came from an explicit override.
    bool lr_overridden = false;
    bool epochs_overridden = false;
};

struct StagePlans {
    StagePlan pretrain;
    StagePlan units;
    StagePlan finetune;
};

/// round-half-up(0.5 * finetune_epochs), at least 1.
int derived_units_epochs(int finetune_epochs);
/// 0.1 * pretrain lr.
double derived_units_lr(double pretrain_lr);
/// 1.5 * finetune epochs, rounded half up.
int extended_baseline_epochs(int finetune_epochs);

/// Pretrain and finetune copy their optimizer settings; the intermediate
/// stage derives lr and epochs unless overridden. Throws ConfigError for an
/// override outside (0, pretrain.lr] or epochs < 1.
StagePlans derive_stage_plans(const ExperimentConfig& cfg);

/// Copies the stage plan's lr into the hyperparameters used for stepping.
units::UnitsHyper units_hyper(const ExperimentConfig& cfg, const StagePlan& plan);

} // namespace unitslab::pipeline
