#include "unitslab/units/units.hpp"

#include <algorithm>
#include <cmath>

#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/ops.hpp"
#include "unitslab/numcore/optim.hpp"
#include "unitslab/numcore/rng.hpp"
#include "unitslab/numcore/tape.hpp"

namespace unitslab::units {

using augment::GeoTransform;
using numcore::derive_seed;
using numcore::NamedTensors;
using numcore::Tape;

namespace {

const std::string kTeacherPrefix = "teacher/";
constexpr std::uint64_t kViewJitter = 1;
constexpr std::uint64_t kViewGeo = 2;

struct Objective {
    std::optional<Tensor> loss;
    double det = 0.0;
    double units = 0.0;
};

Tensor accumulate(const std::optional<Tensor>& acc, const Tensor& t) { return acc ? numcore::add(*acc, t) : t; }

Objective build_objective(Tape& tape, const NamedTensors& student, const ParamSet* teacher,
                          std::span<const LabeledSample> synth, std::span<const UnlabeledSample> unlabeled,
                          const UnitsHyper& hp, std::uint64_t synth_seed, std::uint64_t branch_seed,
                          double units_weight) {
    Objective obj;
    if (hp.loss_weight_det != 0.0 && !synth.empty()) {
        std::optional<Tensor> sum;
        for (std::size_t i = 0; i < synth.size(); ++i) {
            Grid image = augment::color_jitter(synth[i].image, derive_seed(synth_seed, {i}), hp.aug.weak);
            Grid mask = synth[i].mask;
            if (hp.strong_on_synth && hp.aug.strong_enabled) {
                const GeoTransform t =
                    augment::sample_strong(derive_seed(synth_seed, {i, kViewGeo}), hp.aug, image.height, image.width);
                image = augment::apply_geo(image, t);
                mask = augment::apply_geo(mask, t);
            }
            const Grid valid(mask.height, mask.width, 1.0);
            sum = accumulate(sum, detector::det_loss(detector::forward(student, detector::image_tensor(image)),
                                                     mask, valid));
        }
        const Tensor term = numcore::scale(*sum, hp.loss_weight_det / static_cast<double>(synth.size()));
        obj.det = term.item();
        obj.loss = term;
    }
    if (teacher != nullptr && units_weight != 0.0 && !unlabeled.empty()) {
        // Teacher forward runs on the tape so its parameters show up in the
        // gradient map; detaching the output must leave them at zero.
        const NamedTensors teacher_leaves = tape.attach(*teacher, kTeacherPrefix);
        std::optional<Tensor> sum;
        for (std::size_t j = 0; j < unlabeled.size(); ++j) {
            const Grid& x = unlabeled[j].image();
            const Tensor teacher_out = numcore::detach(detector::forward(teacher_leaves, detector::image_tensor(x)));
            const StudentView view = make_student_view(x, branch_seed, j, hp);
            const augment::TransportedMap moved = augment::transport_map(detector::tensor_grid(teacher_out), view.geo);
            const PseudoLabel pl = make_pseudo_label(ProbMap(moved.map), moved.valid, hp);
            const Tensor student_out = detector::forward(student, detector::image_tensor(view.image));
            sum = accumulate(sum, units_loss(student_out, pl));
        }
        const Tensor term = numcore::scale(*sum, units_weight / static_cast<double>(unlabeled.size()));
        obj.units = term.item();
        obj.loss = accumulate(obj.loss, term);
    }
    return obj;
}

ParamSet branch_update(const ParamSet& student, const ParamSet* teacher, std::span<const LabeledSample> synth,
                       std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, std::uint64_t synth_seed,
                       std::uint64_t branch_seed, double units_weight, BranchReport* report) {
    Tape tape;
    const NamedTensors leaves = tape.attach(student);
    const Objective obj =
        build_objective(tape, leaves, teacher, synth, unlabeled, hp, synth_seed, branch_seed, units_weight);
    BranchReport r;
    r.det_loss = obj.det;
    r.units_loss = obj.units;
    r.has_teacher = teacher != nullptr && units_weight != 0.0 && !unlabeled.empty();
    ParamSet next = student;
    if (obj.loss) {
        r.total_loss = obj.loss->item();
        const numcore::GradMap grads = tape.backward(*obj.loss);
        numcore::GradMap student_grads;
        for (const auto& [name, g] : grads) {
            if (name.starts_with(kTeacherPrefix)) {
                for (double v : g.data()) r.teacher_grad_max = std::max(r.teacher_grad_max, std::abs(v));
            } else {
                student_grads.insert(name, g);
            }
        }
        next = numcore::sgd_step(student, student_grads, hp.lr, hp.momentum);
        r.updated = true;
    }
    if (report != nullptr) *report = r;
    return next;
}

void check_batches(std::span<const LabeledSample> synth, std::span<const UnlabeledSample> unlabeled) {
    if (synth.empty() && unlabeled.empty()) throw ValueError("units step: both batches are empty");
}

} // namespace

const char* strategy_name(Strategy s) noexcept {
    switch (s) {
    case Strategy::SBSS: return "sbss";
    case Strategy::DBSS: return "dbss";
    case Strategy::DBDS: return "dbds";
    }
    return "?";
}

Strategy parse_strategy(const std::string& name) {
    for (Strategy s : {Strategy::SBSS, Strategy::DBSS, Strategy::DBDS}) {
        if (name == strategy_name(s)) return s;
    }
    throw ConfigError("unknown strategy '" + name + "' (expected sbss, dbss or dbds)");
}

void BranchPair::validate() const {
    if (!theta1.same_structure(theta2)) throw ShapeError("branch pair", "theta1 and theta2 differ in structure");
}

void UnitsHyper::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("units lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("units momentum must lie in [0, 1)");
    if (!(pseudo_threshold > 0.0 && pseudo_threshold < 1.0)) throw ConfigError("pseudo_threshold must lie in (0, 1)");
    if (confidence_band) {
        const auto [lo, hi] = *confidence_band;
        if (!(lo > 0.0 && lo <= hi && hi < 1.0)) throw ConfigError("confidence_band must satisfy 0 < lo <= hi < 1");
    }
    if (synth_batch == 0 || unlabeled_batch == 0) throw ConfigError("batch sizes must be positive");
    if (!(loss_weight_units >= 0.0) || !(loss_weight_det >= 0.0) || !(mirror_weight >= 0.0)) {
        throw ConfigError("loss weights must be non-negative");
    }
    aug.validate();
}

PseudoLabel make_pseudo_label(const ProbMap& teacher, const Grid& geo_valid, const UnitsHyper& hp) {
    if (geo_valid.height != teacher.height() || geo_valid.width != teacher.width()) {
        throw ShapeError("make_pseudo_label", "validity mask does not match the teacher map");
    }
    PseudoLabel pl{detector::binarize(teacher, hp.pseudo_threshold), geo_valid};
    if (hp.confidence_band) {
        const auto [lo, hi] = *hp.confidence_band;
        for (std::size_t i = 0; i < pl.valid.size(); ++i) {
            const double v = teacher.grid().values[i];
            if (v >= lo && v <= hi) pl.valid.values[i] = 0.0;
        }
    }
    return pl;
}

Tensor units_loss(const Tensor& student, const PseudoLabel& pl, double weight) {
    const Tensor loss = detector::det_loss(student, pl.target, pl.valid);
    return weight == 1.0 ? loss : numcore::scale(loss, weight);
}

StudentView make_student_view(const Grid& image, std::uint64_t branch_seed, std::size_t index,
                              const UnitsHyper& hp) {
    const Grid jittered = augment::color_jitter(image, derive_seed(branch_seed, {index, kViewJitter}), hp.aug.weak);
    const GeoTransform t = hp.aug.strong_enabled
                               ? augment::sample_strong(derive_seed(branch_seed, {index, kViewGeo}), hp.aug,
                                                        image.height, image.width)
                               : GeoTransform::identity(image.height, image.width);
    return {augment::apply_geo(jittered, t), t};
}

BranchReport branch_objective(const ParamSet& student, const ParamSet* teacher,
                              std::span<const LabeledSample> synth, std::span<const UnlabeledSample> unlabeled,
                              const UnitsHyper& hp, std::uint64_t synth_seed, std::uint64_t branch_seed,
                              double units_weight) {
    Tape tape;
    const Objective obj =
        build_objective(tape, student.params, teacher, synth, unlabeled, hp, synth_seed, branch_seed, units_weight);
    BranchReport r;
    r.det_loss = obj.det;
    r.units_loss = obj.units;
    r.total_loss = obj.loss ? obj.loss->item() : 0.0;
    r.has_teacher = teacher != nullptr && units_weight != 0.0 && !unlabeled.empty();
    return r;
}

ParamSet sbss_step(const ParamSet& theta, std::span<const LabeledSample> synth,
                   std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, const StepSeeds& seeds,
                   StepReport* report) {
    check_batches(synth, unlabeled);
    BranchReport r;
    ParamSet next = branch_update(theta, &theta, synth, unlabeled, hp, seeds.synth, seeds.branch1,
                                  hp.loss_weight_units, &r);
    if (report != nullptr) report->branches = {r};
    return next;
}

BranchPair dbss_step(const BranchPair& pair, std::span<const LabeledSample> synth,
                     std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, const StepSeeds& seeds,
                     StepReport* report) {
    pair.validate();
    check_batches(synth, unlabeled);
    BranchReport r1, r2;
    BranchPair next;
    next.theta1 = branch_update(pair.theta1, nullptr, synth, {}, hp, seeds.synth, seeds.branch1, 0.0, &r1);
    next.theta2 = branch_update(pair.theta2, &pair.theta1, synth, unlabeled, hp, seeds.synth, seeds.branch2,
                                hp.loss_weight_units, &r2);
    if (report != nullptr) report->branches = {r1, r2};
    return next;
}

BranchPair dbds_step(const BranchPair& pair, std::span<const LabeledSample> synth,
                     std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, const StepSeeds& seeds,
                     StepReport* report) {
    pair.validate();
    check_batches(synth, unlabeled);
    // Both teachers are the pre-step branches held in `pair`.
    BranchReport r1, r2;
    BranchPair next;
    next.theta1 = branch_update(pair.theta1, &pair.theta2, synth, unlabeled, hp, seeds.synth, seeds.branch1,
                                hp.loss_weight_units * hp.mirror_weight, &r1);
    next.theta2 = branch_update(pair.theta2, &pair.theta1, synth, unlabeled, hp, seeds.synth, seeds.branch2,
                                hp.loss_weight_units, &r2);
    if (report != nullptr) report->branches = {r1, r2};
    return next;
}

UnitsState initial_state(Strategy strategy, const ParamSet& pretrained) {
    UnitsState s;
    s.strategy = strategy;
    s.branches.assign(strategy == Strategy::SBSS ? 1 : 2, pretrained);
    return s;
}

void units_step(UnitsState& state, std::span<const LabeledSample> synth,
                std::span<const UnlabeledSample> unlabeled, const UnitsHyper& hp, const StepSeeds& seeds,
                StepReport* report) {
    const std::size_t expected = state.strategy == Strategy::SBSS ? 1 : 2;
    if (state.branches.size() != expected) throw ValueError("units state has the wrong number of branches");
    if (state.strategy == Strategy::SBSS) {
        state.branches[0] = sbss_step(state.branches[0], synth, unlabeled, hp, seeds, report);
        return;
    }
    BranchPair pair{state.branches[0], state.branches[1]};
    pair = state.strategy == Strategy::DBSS ? dbss_step(pair, synth, unlabeled, hp, seeds, report)
                                            : dbds_step(pair, synth, unlabeled, hp, seeds, report);
    state.branches[0] = std::move(pair.theta1);
    state.branches[1] = std::move(pair.theta2);
}

const ParamSet& select_init(Strategy strategy, const UnitsState& state) {
    if (state.strategy != strategy) {
        throw ValueError(std::string("select_init: state was produced by ") + strategy_name(state.strategy) +
                         ", not " + strategy_name(strategy));
    }
    const std::size_t expected = strategy == Strategy::SBSS ? 1 : 2;
    if (state.branches.size() != expected) throw ValueError("select_init: wrong number of branches");
    switch (strategy) {
    case Strategy::SBSS: return state.branches[0];
    case Strategy::DBSS: return state.branches[1];
    case Strategy::DBDS: return state.branches[0];
    }
    return state.branches[0];
}

} // namespace unitslab::units
