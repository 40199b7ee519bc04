#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unitslab/numcore/error.hpp"
#include "unitslab/pipeline/config.hpp"
#include "unitslab/pipeline/data.hpp"

namespace unitslab::pipeline {

using numcore::ParamSet;

/// Training produced a non-finite loss. Carries the parameters after the
/// last step that was still finite.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, ParamSet last_good) : Error(what), last_good_(std::move(last_good)) {}
    const ParamSet& last_good() const noexcept { return last_good_; }

private:
    ParamSet last_good_;
};

struct StageResult {
    /// Stage output; for the intermediate stage, the branch chosen by select_init.
    ParamSet params;
    /// Intermediate stage only: every branch, in order.
    std::vector<ParamSet> branches;
    std::vector<double> epoch_losses;
    /// Digest of the sample ids in the order they were consumed.
    std::string batch_order_hash;
};

/// Same parameters with zeroed momentum and step count, as at the start of a stage.
ParamSet fresh_optimizer_state(const ParamSet& params);

/// Supervised det_loss training on the synthetic pool from a seeded init.
StageResult run_pretrain(const StagePlan& plan, std::span<const LabeledSample> synthetic,
                         const detector::DetectorConfig& arch, std::uint64_t seed);

/// Every branch starts from `init`. Each epoch is one pass over the synthetic
/// pool; the unlabeled pool is cycled independently.
StageResult run_units(const StagePlan& plan, const ParamSet& init, units::Strategy strategy,
                      const units::UnitsHyper& hp, std::span<const LabeledSample> synthetic,
                      std::span<const UnlabeledSample> unlabeled, std::uint64_t seed);

/// Supervised det_loss training on labeled real data from `init`.
StageResult run_finetune(const StagePlan& plan, const ParamSet& init, std::span<const LabeledSample> real_train,
                         std::uint64_t seed);

/// Fisher-Yates permutation of 0..n-1 driven by the library generator.
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed);

} // namespace unitslab::pipeline
