#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unitslab/evalkit/evalkit.hpp"
#include "unitslab/pipeline/config.hpp"
#include "unitslab/pipeline/data.hpp"
#include "unitslab/pipeline/train.hpp"

namespace unitslab::pipeline {

using evalkit::MetricsReport;

/// One configuration of the intermediate stage.
struct UnitsVariant {
    units::Strategy strategy = units::Strategy::DBSS;
    units::UnitsHyper hyper;
    /// Stable identity used to share runs between ablations.
    std::string key() const;
};

/// Holds the data of one experiment and memoizes per-seed stage results, so
/// several ablations can share pre-training and baseline runs.
class Experiment {
public:
    Experiment(ExperimentConfig cfg, DataBundle data);

    const ExperimentConfig& config() const noexcept { return cfg_; }
    const DataBundle& data() const noexcept { return data_; }
    const StagePlans& plans() const noexcept { return plans_; }

    UnitsVariant default_variant() const;

    const StageResult& pretrain(std::uint64_t seed);
    const StageResult& units(std::uint64_t seed, const UnitsVariant& v);
    /// Fine-tunes from the pretrain checkpoint for `epochs` (default: plan epochs).
    const StageResult& baseline(std::uint64_t seed, std::optional<int> epochs = std::nullopt);
    /// Fine-tunes from the variant's selected intermediate checkpoint.
    const StageResult& finetuned(std::uint64_t seed, const UnitsVariant& v);

    /// Real-test metrics of a parameter set.
    MetricsReport evaluate(const ParamSet& params) const;

private:
    ExperimentConfig cfg_;
    DataBundle data_;
    StagePlans plans_;
    std::map<std::string, StageResult> cache_;
};

enum class Ablation { Strategies, Augmentation, ExtendedBaseline, DirectTest };
const char* ablation_name(Ablation a) noexcept;
/// Throws ConfigError naming the valid choices.
Ablation parse_ablation(const std::string& name);

struct AblationRow {
    std::string method;
    std::uint64_t seed = 0;
    MetricsReport metrics;
};

struct MethodSummary {
    std::string method;
    std::size_t runs = 0;
    double median_precision = 0.0;
    double median_recall = 0.0;
    double median_fmeasure = 0.0;
    double iqr_fmeasure = 0.0;
    /// Seeds on which the method's F exceeds the reference method's F.
    std::optional<std::size_t> wins_vs_reference;
};

struct AblationTable {
    Ablation which = Ablation::Strategies;
    std::vector<std::string> methods;
    std::string reference;
    std::vector<AblationRow> rows;

    std::vector<double> fmeasures(const std::string& method) const;
    std::vector<MethodSummary> summarize() const;
    std::string csv() const;
};

struct AblationOptions {
    /// Adds a row with rotation, crop and scale on the strong menu.
    bool multi_augmentation = false;
};

AblationTable run_ablation(Experiment& exp, Ablation which, const AblationOptions& opts = {});

/// Median and interquartile range with linear interpolation between order statistics.
double median(std::vector<double> v);
double quantile(std::vector<double> v, double q);

/// Metrics of one full run: pretrain, intermediate stage, fine-tune of both arms.
struct RunSummary {
    std::filesystem::path dir;
    MetricsReport pretrain;
    MetricsReport units;
    MetricsReport finetune;
    MetricsReport baseline;
};

/// Runs all stages for one seed and writes metrics.csv, losses.csv, run.json
/// and checkpoints under out_dir/run-<seed>/. Fine-tuning reloads the
/// selected checkpoint from disk and checks its digest.
RunSummary run_experiment(const ExperimentConfig& cfg, const DataBundle& data, std::uint64_t seed);

/// Runs one stage for one seed, reading its init checkpoint when the stage
/// needs one, and writes <stage>.ckpt plus losses to `out`.
std::filesystem::path run_single_stage(const ExperimentConfig& cfg, const DataBundle& data, Stage stage,
                                       std::uint64_t seed, const std::optional<std::filesystem::path>& init,
                                       const std::filesystem::path& out);

/// Loads a checkpoint and checks its digest; FormatError on mismatch.
ParamSet load_verified(const std::filesystem::path& path, const std::string& expected_digest);
std::string file_digest(const std::filesystem::path& path);

} // namespace unitslab::pipeline
