// Direct-test properties of the two-branch strategies at the default toy
// scale, measured as medians over the default ten seeds. Slow: runs the
// intermediate stage twice per seed.
#include "doctest.h"
#include "unitslab/numcore/log.hpp"
#include "unitslab/pipeline/experiment.hpp"

using namespace unitslab;
using namespace unitslab::pipeline;

namespace {

struct BranchMedians {
    double pretrain = 0.0;
    double theta1 = 0.0;
    double theta2 = 0.0;
};

BranchMedians direct_medians(Experiment& exp, units::Strategy strategy) {
    UnitsVariant v = exp.default_variant();
    v.strategy = strategy;
    std::vector<double> pre, b1, b2;
    for (std::uint64_t seed : exp.config().seeds) {
        pre.push_back(exp.evaluate(exp.pretrain(seed).params).fmeasure);
        const StageResult& u = exp.units(seed, v);
        REQUIRE(u.branches.size() == 2);
        b1.push_back(exp.evaluate(u.branches[0]).fmeasure);
        b2.push_back(exp.evaluate(u.branches[1]).fmeasure);
    }
    MESSAGE(std::string(units::strategy_name(strategy)) << " median F: pretrain " << median(pre) << ", theta1 "
                                                        << median(b1) << ", theta2 " << median(b2));
    return {median(pre), median(b1), median(b2)};
}

Experiment& shared_experiment() {
    static Experiment exp = [] {
        set_log_quiet(true);
        const ExperimentConfig cfg = default_config();
        return Experiment(cfg, load_data(cfg));
    }();
    return exp;
}

} // namespace

TEST_CASE("dbss: the branch trained on unlabeled data beats the synthetic-only branch") {
    const BranchMedians m = direct_medians(shared_experiment(), units::Strategy::DBSS);
    CHECK(m.theta2 > m.theta1);
}

TEST_CASE("dbds: both branches beat the pretrain checkpoint") {
    const BranchMedians m = direct_medians(shared_experiment(), units::Strategy::DBDS);
    CHECK(m.theta1 > m.pretrain);
    CHECK(m.theta2 > m.pretrain);
}
