#include "unitslab/pipeline/train.hpp"

#include <cmath>
#include <sstream>

#include "unitslab/numcore/checkpoint.hpp"
#include "unitslab/numcore/log.hpp"
#include "unitslab/numcore/ops.hpp"
#include "unitslab/numcore/optim.hpp"
#include "unitslab/numcore/rng.hpp"
#include "unitslab/numcore/tape.hpp"

namespace unitslab::pipeline {

using numcore::derive_seed;

namespace {

constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kPretrainTag = 1;
constexpr std::uint64_t kUnitsTag = 2;
constexpr std::uint64_t kFinetuneTag = 3;
constexpr std::uint64_t kUnlabeledTag = 4;

/// Accumulates consumed sample ids for the batch-order digest.
class OrderDigest {
public:
    void add(std::uint64_t id) {
        for (int b = 0; b < 8; ++b) bytes_.push_back(static_cast<std::uint8_t>(id >> (8 * b)));
    }
    std::string hex() const { return numcore::hex_digest(numcore::fnv1a64(bytes_)); }

private:
    std::vector<std::uint8_t> bytes_;
};

std::string epoch_message(Stage stage, int epoch, int epochs, double loss) {
    std::ostringstream os;
    os << stage_name(stage) << " epoch " << epoch << "/" << epochs << " mean loss " << loss;
    return os.str();
}

[[noreturn]] void diverged(Stage stage, int epoch, const std::string& detail, const ParamSet& last_good) {
    throw DivergenceError(std::string(stage_name(stage)) + ": training diverged in epoch " + std::to_string(epoch) +
                              " (" + detail + ")",
                          last_good);
}

/// One SGD step on the mean det_loss of a labeled batch.
std::pair<ParamSet, double> supervised_step(const ParamSet& params, const std::vector<const LabeledSample*>& batch,
                                            double lr, double momentum) {
    numcore::Tape tape;
    const numcore::NamedTensors leaves = tape.attach(params);
    std::optional<numcore::Tensor> sum;
    for (const LabeledSample* s : batch) {
        const Grid valid(s->mask.height, s->mask.width, 1.0);
        const numcore::Tensor l =
            detector::det_loss(detector::forward(leaves, detector::image_tensor(s->image)), s->mask, valid);
        sum = sum ? numcore::add(*sum, l) : l;
    }
    const numcore::Tensor loss = numcore::scale(*sum, 1.0 / static_cast<double>(batch.size()));
    const double value = loss.item();
    if (!std::isfinite(value)) throw ValueError("non-finite loss");
    return {numcore::sgd_step(params, tape.backward(loss), lr, momentum), value};
}

StageResult supervised_stage(const StagePlan& plan, const ParamSet& init, std::span<const LabeledSample> pool,
                             std::uint64_t seed, std::uint64_t tag) {
    if (pool.empty()) throw ValueError(std::string(stage_name(plan.stage)) + ": empty training pool");
    StageResult r;
    r.params = fresh_optimizer_state(init);
    OrderDigest digest;
    for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
        const auto order = shuffled_order(pool.size(), derive_seed(seed, {tag, static_cast<std::uint64_t>(epoch)}));
        double total = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += plan.batch) {
            std::vector<const LabeledSample*> batch;
            for (std::size_t k = start; k < std::min(order.size(), start + plan.batch); ++k) {
                batch.push_back(&pool[order[k]]);
                digest.add(pool[order[k]].sample_id);
            }
            try {
                auto [next, loss] = supervised_step(r.params, batch, plan.lr, plan.momentum);
                r.params = std::move(next);
                total += loss;
            } catch (const ValueError& e) {
                diverged(plan.stage, epoch, e.what(), r.params);
            }
            ++steps;
        }
        r.epoch_losses.push_back(total / static_cast<double>(steps));
        log_info(epoch_message(plan.stage, epoch, plan.epochs, r.epoch_losses.back()));
    }
    r.batch_order_hash = digest.hex();
    return r;
}

} // namespace

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    numcore::Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    return order;
}

ParamSet fresh_optimizer_state(const ParamSet& params) {
    ParamSet p;
    for (const auto& [name, t] : params.params) p.add(name, t);
    return p;
}

StageResult run_pretrain(const StagePlan& plan, std::span<const LabeledSample> synthetic,
                         const detector::DetectorConfig& arch, std::uint64_t seed) {
    const ParamSet init = detector::init_detector(arch, derive_seed(seed, {kInitTag}));
    return supervised_stage(plan, init, synthetic, seed, kPretrainTag);
}

StageResult run_finetune(const StagePlan& plan, const ParamSet& init, std::span<const LabeledSample> real_train,
                         std::uint64_t seed) {
    return supervised_stage(plan, init, real_train, seed, kFinetuneTag);
}

StageResult run_units(const StagePlan& plan, const ParamSet& init, units::Strategy strategy,
                      const units::UnitsHyper& hp, std::span<const LabeledSample> synthetic,
                      std::span<const UnlabeledSample> unlabeled, std::uint64_t seed) {
    if (synthetic.empty() || unlabeled.empty()) throw ValueError("units: synthetic and unlabeled pools are required");
    units::UnitsHyper h = hp;
    h.lr = plan.lr;
    h.momentum = plan.momentum;
    h.validate();

    units::UnitsState state = units::initial_state(strategy, fresh_optimizer_state(init));
    OrderDigest digest;
    std::vector<std::size_t> u_order;
    std::size_t u_pos = 0;
    std::uint64_t u_cycle = 0;
    std::uint64_t step = 0;
    StageResult r;
    for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
        const auto order =
            shuffled_order(synthetic.size(), derive_seed(seed, {kUnitsTag, static_cast<std::uint64_t>(epoch)}));
        double total = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += h.synth_batch) {
            std::vector<LabeledSample> sb;
            for (std::size_t k = start; k < std::min(order.size(), start + h.synth_batch); ++k) {
                sb.push_back(synthetic[order[k]]);
                digest.add(sb.back().sample_id);
            }
            std::vector<UnlabeledSample> ub;
            while (ub.size() < h.unlabeled_batch) {
                if (u_pos == u_order.size()) {
                    u_order = shuffled_order(unlabeled.size(), derive_seed(seed, {kUnlabeledTag, u_cycle++}));
                    u_pos = 0;
                }
                ub.push_back(unlabeled[u_order[u_pos++]]);
                digest.add(ub.back().sample_id());
            }
            const units::StepSeeds seeds{derive_seed(seed, {kUnitsTag, step, 0}), derive_seed(seed, {kUnitsTag, step, 1}),
                                         derive_seed(seed, {kUnitsTag, step, 2})};
            units::StepReport report;
            const units::UnitsState before = state;
            try {
                units::units_step(state, sb, ub, h, seeds, &report);
            } catch (const ValueError& e) {
                diverged(plan.stage, epoch, e.what(), units::select_init(strategy, before));
            }
            double step_loss = 0.0;
            for (const auto& b : report.branches) step_loss += b.total_loss;
            step_loss /= static_cast<double>(report.branches.size());
            if (!std::isfinite(step_loss)) diverged(plan.stage, epoch, "non-finite loss", units::select_init(strategy, before));
            total += step_loss;
            ++steps;
            ++step;
        }
        r.epoch_losses.push_back(total / static_cast<double>(steps));
        log_info(epoch_message(plan.stage, epoch, plan.epochs, r.epoch_losses.back()));
    }
    r.params = units::select_init(strategy, state);
    r.branches = state.branches;
    r.batch_order_hash = digest.hex();
    return r;
}

} // namespace unitslab::pipeline
