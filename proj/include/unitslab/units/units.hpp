#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unitslab/augment/augment.hpp"
#include "unitslab/detector/detector.hpp"
#include "unitslab/scenegen/scenegen.hpp"

namespace unitslab::units {

using detector::ProbMap;
using numcore::ParamSet;
using numcore::Tensor;
using scenegen::LabeledSample;
using scenegen::UnlabeledSample;

enum class Strategy { SBSS, DBSS, DBDS };

const char* strategy_name(Strategy s) noexcept;
/// Accepts "sbss", "dbss", "dbds"; throws ConfigError otherwise.
Strategy parse_strategy(const std::string& name);

/// Hard target plus the pixels it may supervise.
struct PseudoLabel {
    Grid target;
    Grid valid;
};

/// Two independently optimized detectors of identical architecture.
struct BranchPair {
    ParamSet theta1;
    ParamSet theta2;
    /// Throws ShapeError when the branches differ in names or shapes.
    void validate() const;
};

struct ConfidenceBand {
    double lo = 0.4;
    double hi = 0.6;
};

struct UnitsHyper {
    double lr = 0.01;
    double momentum = 0.9;
    double pseudo_threshold = 0.5;
    /// Teacher values inside [lo, hi] are excluded from supervision.
    std::optional<ConfidenceBand> confidence_band;
    std::size_t synth_batch = 8;
    std::size_t unlabeled_batch = 8;
    double loss_weight_units = 1.0;
    /// Weight of the supervised synthetic term on every branch.
    double loss_weight_det = 1.0;
    /// DBDS only: scales the units term that supervises theta1 from theta2.
    /// At 0 a DBDS step is exactly a DBSS step.
    double mirror_weight = 1.0;
    augment::AugSpec aug;
    /// Also apply strong transforms to the labeled synthetic stream.
    bool strong_on_synth = false;

    void validate() const;
};

/// Seeds for one step. The synthetic stream's jitter is shared by all
/// branches; each branch draws its own student views.
struct StepSeeds {
    std::uint64_t synth = 0;
    std::uint64_t branch1 = 0;
    std::uint64_t branch2 = 0;
};

struct BranchReport {
    double det_loss = 0.0;
    double units_loss = 0.0;
    double total_loss = 0.0;
    /// Largest |gradient| reaching any teacher-path parameter. Always zero.
    double teacher_grad_max = 0.0;
    bool has_teacher = false;
    bool updated = false;
};

struct StepReport {
    std::vector<BranchReport> branches;
};

/// target = binarize(teacher, threshold); valid = geo_valid minus teacher
/// values inside the confidence band.
PseudoLabel make_pseudo_label(const ProbMap& teacher, const Grid& geo_valid, const UnitsHyper& hp);

/// Weighted masked BCE of a [1, H, W] student prediction against a pseudo-label.
Tensor units_loss(const Tensor& student, const PseudoLabel& pl, double weight = 1.0);

/// One student view of an unlabeled image: jittered, then strongly transformed.
struct StudentView {
    Grid image;
    augment::GeoTransform geo;
};
StudentView make_student_view(const Grid& image, std::uint64_t branch_seed, std::size_t index,
                              const UnitsHyper& hp);

/// Objective value of one branch update without applying it. `teacher` may
/// be null, in which case only the synthetic term is present.
BranchReport branch_objective(const ParamSet& student, const ParamSet* teacher,
                              std::span<const LabeledSample> synth, std::span<const UnlabeledSample> unlabeled,
                              const UnitsHyper& hp, std::uint64_t synth_seed, std::uint64_t branch_seed,
                              double units_weight);

ParamSet sbss_step(const ParamSet& theta, std::span<const LabeledSample> synth,
                   std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, const StepSeeds& seeds,
                   StepReport* report = nullptr);

BranchPair dbss_step(const BranchPair& pair, std::span<const LabeledSample> synth,
                     std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, const StepSeeds& seeds,
                     StepReport* report = nullptr);

BranchPair dbds_step(const BranchPair& pair, std::span<const LabeledSample> synth,
                     std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, const StepSeeds& seeds,
                     StepReport* report = nullptr);

/// Branches of a running intermediate stage: one for SBSS, two otherwise.
struct UnitsState {
    Strategy strategy = Strategy::SBSS;
    std::vector<ParamSet> branches;
};

/// Every branch starts as a copy of the pre-trained parameters.
UnitsState initial_state(Strategy strategy, const ParamSet& pretrained);

/// Advances the state by one step of its strategy.
void units_step(UnitsState& state, std::span<const LabeledSample> synth,
                std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, const StepSeeds& seeds,
                StepReport* report = nullptr);

/// SBSS -> theta, DBSS -> theta2, DBDS -> theta1. Throws ValueError when the
/// state belongs to another strategy or has the wrong number of branches.
const ParamSet& select_init(Strategy strategy, const UnitsState& state);

} // namespace unitslab::units
