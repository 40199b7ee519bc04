#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "unitslab/numcore/checkpoint.hpp"
#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/log.hpp"
#include "unitslab/numcore/rng.hpp"
#include "unitslab/pipeline/experiment.hpp"
#include "unitslab/scenegen/dataset.hpp"

using namespace unitslab;
using namespace unitslab::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;
using detector::ProbMap;

namespace {

/// A few samples and epochs: enough to exercise every path in well under a second per stage.
json tiny_patch() {
    return json{{"seeds", {3}},
                {"data", {{"splits", {{"synthetic", 12}, {"real_train", 6}, {"real_unlabeled", 10}, {"real_test", 5}}}}},
                {"pretrain", {{"epochs", 2}, {"batch", 4}}},
                {"finetune", {{"epochs", 2}, {"batch", 4}}},
                // A two-epoch teacher sits inside the default confidence band everywhere.
                {"units", {{"synth_batch", 4}, {"unlabeled_batch", 4}, {"confidence_band", nullptr}}}};
}

ExperimentConfig tiny_config() { return config_from_json(tiny_patch()); }

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("unitslab_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::uint8_t> bytes(const ParamSet& p) { return numcore::encode_checkpoint(p); }

struct Quiet {
    Quiet() { set_log_quiet(true); }
    ~Quiet() { set_log_quiet(false); }
};

} // namespace

TEST_CASE("stage plan derivation: quoted pairs and boundaries") {
    ExperimentConfig cfg = default_config();
    cfg.pretrain.lr = 0.1;
    cfg.finetune.epochs = 1200;
    StagePlans p = derive_stage_plans(cfg);
    CHECK(p.units.lr == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(p.units.epochs == 600);
    CHECK(extended_baseline_epochs(1200) == 1800);
    CHECK_FALSE(p.units.lr_overridden);
    CHECK_FALSE(p.units.epochs_overridden);

    cfg.finetune.epochs = 1;
    CHECK(derive_stage_plans(cfg).units.epochs == 1);
    cfg.finetune.epochs = 3;
    CHECK(derive_stage_plans(cfg).units.epochs == 2);
    CHECK(extended_baseline_epochs(3) == 5);

    cfg.units.lr = 0.05;
    cfg.units.epochs = 7;
    p = derive_stage_plans(cfg);
    CHECK(p.units.lr == 0.05);
    CHECK(p.units.epochs == 7);
    CHECK(p.units.lr_overridden);
    CHECK(p.units.epochs_overridden);

    cfg.units.lr = 0.2;
    CHECK_THROWS_AS(derive_stage_plans(cfg), ConfigError);
    cfg.units.lr = 0.0;
    CHECK_THROWS_AS(derive_stage_plans(cfg), ConfigError);
    cfg.units.lr = 0.1;
    CHECK_NOTHROW(derive_stage_plans(cfg));
    cfg.units.epochs = 0;
    CHECK_THROWS_AS(derive_stage_plans(cfg), ConfigError);
}

TEST_CASE("stage plan derivation over random configs") {
    numcore::Rng rng(20240611);
    for (int trial = 0; trial < 50; ++trial) {
        ExperimentConfig cfg = default_config();
        cfg.pretrain.lr = std::exp(rng.uniform(std::log(1e-4), std::log(1.0)));
        cfg.pretrain.epochs = static_cast<int>(rng.between(1, 2000));
        cfg.finetune.lr = std::exp(rng.uniform(std::log(1e-4), std::log(1.0)));
        cfg.finetune.epochs = static_cast<int>(rng.between(1, 2000));
        const StagePlans p = derive_stage_plans(cfg);
        // Independent statement of the rule: a tenth of the rate, half the epochs rounded half up.
        const double want_lr = cfg.pretrain.lr / 10.0;
        const int want_epochs = std::max(1, static_cast<int>(std::floor(cfg.finetune.epochs * 0.5 + 0.5)));
        CHECK(std::abs(p.units.lr - want_lr) <= 1e-15 * want_lr);
        CHECK(p.units.epochs == want_epochs);
        CHECK(p.pretrain.lr == cfg.pretrain.lr);
        CHECK(p.finetune.epochs == cfg.finetune.epochs);
        CHECK(extended_baseline_epochs(cfg.finetune.epochs) ==
              static_cast<int>(std::floor(cfg.finetune.epochs * 1.5 + 0.5)));
    }
}

TEST_CASE("config JSON round trip and strict keys") {
    const ExperimentConfig d = default_config();
    const json j = to_json(d);
    CHECK(to_json(config_from_json(j)) == j);
    CHECK(config_digest(config_from_json(json::object())) == config_digest(d));

    const ExperimentConfig t = tiny_config();
    CHECK(t.data.sizes.synthetic == 12);
    CHECK(t.pretrain.epochs == 2);
    CHECK(t.pretrain.lr == d.pretrain.lr);
    CHECK(to_json(config_from_json(to_json(t))) == to_json(t));
    CHECK(config_digest(t) != config_digest(d));

    CHECK_THROWS_AS(config_from_json(json{{"seedz", {1}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"units", {{"augment", {{"hue", 0.1}}}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"data", {{"unlabeled_pools", {"real", "real2"}}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"pretrain", {{"lr", -1.0}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"finetune", {{"epochs", 0}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"units", {{"strategy", "tbss"}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"units", {{"lr", 1.0}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"seeds", "one"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);

    const auto band = config_from_json(json{{"units", {{"confidence_band", {0.3, 0.7}}}}}).units.hyper.confidence_band;
    REQUIRE(band);
    CHECK(band->lo == 0.3);
    CHECK(band->hi == 0.7);
    CHECK_FALSE(config_from_json(json{{"units", {{"confidence_band", nullptr}}}}).units.hyper.confidence_band);

    const fs::path dir = scratch_dir("config");
    std::ofstream(dir / "c.json") << tiny_patch().dump();
    CHECK(to_json(load_config(dir / "c.json")) == to_json(t));
    std::ofstream(dir / "broken.json") << "{\"seeds\": [1,";
    CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("data bundle: splits, quantization and disk round trip") {
    Quiet q;
    const ExperimentConfig cfg = tiny_config();
    const DataBundle mem = load_data(cfg);
    CHECK(mem.synthetic.size() == 12);
    CHECK(mem.real_train.size() == 6);
    CHECK(mem.real_unlabeled.size() == 10);
    CHECK(mem.real_test.size() == 5);
    CHECK(mem.synthetic.front().sample_id == kSyntheticBase);
    CHECK(mem.real_unlabeled.front().sample_id() == kRealUnlabeledBase);
    for (double v : mem.real_test.front().image.values) CHECK(std::round(v * 255.0) / 255.0 == v);

    const fs::path dir = scratch_dir("data");
    ExperimentConfig disk_cfg = cfg;
    disk_cfg.data.data_dir = dir.string();
    generate_data(disk_cfg, dir);
    for (const std::string& s : kSplitNames) CHECK(fs::exists(dir / s / "manifest.json"));
    const DataBundle disk = load_data(disk_cfg);
    REQUIRE(disk.real_test.size() == mem.real_test.size());
    for (std::size_t i = 0; i < disk.real_test.size(); ++i) {
        CHECK(disk.real_test[i].image == mem.real_test[i].image);
        CHECK(disk.real_test[i].mask == mem.real_test[i].mask);
    }
    CHECK(disk.real_unlabeled[3].image() == mem.real_unlabeled[3].image());
}

TEST_CASE("pretraining: initial loss near ln 2 and decreasing epoch losses") {
    Quiet q;
    ExperimentConfig cfg = tiny_config();
    const DataBundle data = load_data(cfg);

    cfg.detector.init_scale = 0.0;
    StagePlan frozen = derive_stage_plans(cfg).pretrain;
    frozen.lr = 1e-12;
    frozen.epochs = 1;
    const StageResult r0 = run_pretrain(frozen, data.synthetic, cfg.detector, 3);
    CHECK(r0.epoch_losses.front() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    ExperimentConfig trained = tiny_config();
    StagePlan plan = derive_stage_plans(trained).pretrain;
    plan.epochs = 6;
    const StageResult r = run_pretrain(plan, data.synthetic, trained.detector, 3);
    REQUIRE(r.epoch_losses.size() == 6);
    CHECK(r.epoch_losses.back() <= r.epoch_losses.front());
    for (double l : r.epoch_losses) CHECK(std::isfinite(l));
}

TEST_CASE("intermediate stage: branch initialization and the first-branch audit") {
    Quiet q;
    const ExperimentConfig cfg = tiny_config();
    const DataBundle data = load_data(cfg);
    const StagePlans plans = derive_stage_plans(cfg);
    const StageResult pre = run_pretrain(plans.pretrain, data.synthetic, cfg.detector, 3);

    const units::UnitsState s0 = units::initial_state(units::Strategy::DBSS, fresh_optimizer_state(pre.params));
    REQUIRE(s0.branches.size() == 2);
    CHECK(bytes(s0.branches[0]) == bytes(fresh_optimizer_state(pre.params)));
    CHECK(bytes(s0.branches[1]) == bytes(s0.branches[0]));

    const units::UnitsHyper hp = units_hyper(cfg, plans.units);
    const StageResult dbss =
        run_units(plans.units, pre.params, units::Strategy::DBSS, hp, data.synthetic, data.real_unlabeled, 3);
    REQUIRE(dbss.branches.size() == 2);
    CHECK(bytes(dbss.params) == bytes(dbss.branches[1]));

    // A synthetic-only continuation: single branch, unlabeled term switched off.
    units::UnitsHyper synth_only = hp;
    synth_only.loss_weight_units = 0.0;
    const StageResult cont =
        run_units(plans.units, pre.params, units::Strategy::SBSS, synth_only, data.synthetic, data.real_unlabeled, 3);
    CHECK(bytes(dbss.branches[0]) == bytes(cont.params));

    // The first branch never reads the unlabeled pool.
    std::vector<UnlabeledSample> other = data.real_unlabeled;
    std::reverse(other.begin(), other.end());
    other.erase(other.begin() + 4, other.end());
    const StageResult dbss_other =
        run_units(plans.units, pre.params, units::Strategy::DBSS, hp, data.synthetic, other, 3);
    CHECK(bytes(dbss_other.branches[0]) == bytes(dbss.branches[0]));
    CHECK(bytes(dbss_other.branches[1]) != bytes(dbss.branches[1]));

    const StageResult dbds =
        run_units(plans.units, pre.params, units::Strategy::DBDS, hp, data.synthetic, data.real_unlabeled, 3);
    CHECK(bytes(dbds.params) == bytes(dbds.branches[0]));
    const StageResult sbss =
        run_units(plans.units, pre.params, units::Strategy::SBSS, hp, data.synthetic, data.real_unlabeled, 3);
    CHECK(sbss.branches.size() == 1);

    CHECK_THROWS_AS(run_units(plans.units, pre.params, units::Strategy::DBSS, hp, data.synthetic, {}, 3), ValueError);
}

TEST_CASE("full run: outputs, chained checkpoints and arm isolation") {
    Quiet q;
    ExperimentConfig cfg = tiny_config();
    cfg.out_dir = scratch_dir("run").string();
    const DataBundle data = load_data(cfg);
    const RunSummary s = run_experiment(cfg, data, 3);
    const fs::path dir = fs::path(cfg.out_dir) / "run-3";
    CHECK(s.dir == dir);
    for (const char* f : {"pretrain.ckpt", "units.ckpt", "units.branch1.ckpt", "units.branch2.ckpt", "finetune.ckpt",
                          "baseline.ckpt", "metrics.csv", "losses.csv", "run.json"}) {
        CHECK_MESSAGE(fs::exists(dir / f), f);
    }

    const std::string metrics = slurp(dir / "metrics.csv");
    CHECK(metrics.rfind(evalkit::csv_header() + "\n", 0) == 0);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 5);
    CHECK(metrics.find("run-3,units,dbss,real_test,") != std::string::npos);
    CHECK(metrics.find("run-3,finetune,baseline,real_test,") != std::string::npos);

    const std::string losses = slurp(dir / "losses.csv");
    CHECK(losses.rfind("stage,epoch,mean_loss\n", 0) == 0);
    CHECK(losses.find("\nunits,1,") != std::string::npos);
    CHECK(losses.find("\nbaseline_finetune,2,") != std::string::npos);

    const json run = json::parse(slurp(dir / "run.json"));
    CHECK(run.at("config") == to_json(cfg));
    CHECK(run.at("config_digest") == config_digest(cfg));
    for (const auto& [name, entry] : run.at("checkpoints").items()) {
        CHECK(file_digest(dir / entry.at("file").get<std::string>()) == entry.at("digest").get<std::string>());
    }
    // Stage chaining: the units checkpoint is the selected second branch.
    CHECK(numcore::read_file_bytes(dir / "units.ckpt") == numcore::read_file_bytes(dir / "units.branch2.ckpt"));
    // The two fine-tuning arms differ only in their init checkpoint and consume the same batches.
    const json diff = run.at("finetune_arm_diff");
    CHECK(diff.size() == 1);
    CHECK(diff.contains("init_checkpoint"));
    CHECK(run.at("batch_order").at("finetune") == run.at("batch_order").at("baseline"));
    CHECK(run.at("plans").at("units").at("lr").get<double>() == doctest::Approx(0.1 * cfg.pretrain.lr));

    const std::string digest = run.at("checkpoints").at("units").at("digest").get<std::string>();
    CHECK(bytes(load_verified(dir / "units.ckpt", digest)) == numcore::read_file_bytes(dir / "units.ckpt"));
    CHECK_THROWS_AS(load_verified(dir / "units.ckpt", "0000000000000000"), FormatError);
}

TEST_CASE("full run is byte-identical on rerun") {
    Quiet q;
    ExperimentConfig cfg = tiny_config();
    const DataBundle data = load_data(cfg);
    cfg.out_dir = scratch_dir("det_a").string();
    run_experiment(cfg, data, 3);
    const fs::path a = fs::path(cfg.out_dir) / "run-3";
    cfg.out_dir = scratch_dir("det_b").string();
    run_experiment(cfg, data, 3);
    const fs::path b = fs::path(cfg.out_dir) / "run-3";
    for (const char* f : {"metrics.csv", "losses.csv", "pretrain.ckpt", "units.ckpt", "units.branch1.ckpt",
                          "units.branch2.ckpt", "finetune.ckpt", "baseline.ckpt"}) {
        CHECK_MESSAGE(numcore::read_file_bytes(a / f) == numcore::read_file_bytes(b / f), f);
    }
}

TEST_CASE("single stages chain through checkpoints") {
    Quiet q;
    const ExperimentConfig cfg = tiny_config();
    const DataBundle data = load_data(cfg);
    const fs::path out = scratch_dir("stages");
    CHECK_THROWS_AS(run_single_stage(cfg, data, Stage::Units, 3, std::nullopt, out), ConfigError);
    const fs::path pre = run_single_stage(cfg, data, Stage::Pretrain, 3, std::nullopt, out);
    const fs::path uni = run_single_stage(cfg, data, Stage::Units, 3, pre, out);
    const fs::path ft = run_single_stage(cfg, data, Stage::Finetune, 3, uni, out);
    CHECK(fs::exists(out / "units.branch1.ckpt"));
    CHECK(fs::exists(out / "finetune.losses.csv"));

    const StagePlans plans = derive_stage_plans(cfg);
    const StageResult p = run_pretrain(plans.pretrain, data.synthetic, cfg.detector, 3);
    CHECK(numcore::read_file_bytes(pre) == bytes(p.params));
    const StageResult u = run_units(plans.units, p.params, cfg.units.strategy, units_hyper(cfg, plans.units),
                                    data.synthetic, data.real_unlabeled, 3);
    CHECK(numcore::read_file_bytes(uni) == bytes(u.params));
    CHECK(numcore::read_file_bytes(ft) == bytes(run_finetune(plans.finetune, u.params, data.real_train, 3).params));
}

TEST_CASE("ablation tables: rows, names and statistics") {
    Quiet q;
    ExperimentConfig cfg = tiny_config();
    cfg.seeds = {3, 4};
    Experiment exp(cfg, load_data(cfg));

    const AblationTable st = run_ablation(exp, Ablation::Strategies);
    CHECK(st.methods == std::vector<std::string>{"baseline", "sbss", "dbss", "dbds"});
    CHECK(st.rows.size() == 8);
    const AblationTable ext = run_ablation(exp, Ablation::ExtendedBaseline);
    CHECK(ext.methods == std::vector<std::string>{"baseline", "baseline-extended", "dbss"});
    // Cached runs are shared between tables.
    CHECK(ext.fmeasures("dbss") == st.fmeasures("dbss"));
    CHECK(ext.fmeasures("baseline") == st.fmeasures("baseline"));
    const AblationTable aug = run_ablation(exp, Ablation::Augmentation, {true});
    CHECK(aug.methods.back() == "strong-multi");
    CHECK(aug.fmeasures("strong") == st.fmeasures("dbss"));
    const AblationTable dt = run_ablation(exp, Ablation::DirectTest);
    CHECK(dt.reference == "pretrain");
    CHECK(dt.fmeasures("units") == dt.fmeasures("units-branch2"));

    const std::vector<MethodSummary> sum = st.summarize();
    REQUIRE(sum.size() == 4);
    CHECK_FALSE(sum[0].wins_vs_reference);
    CHECK(*sum[2].wins_vs_reference <= 2);
    const std::string csv = st.csv();
    CHECK(csv.rfind("method,seed,precision,recall,fmeasure\n", 0) == 0);
    CHECK(csv.find("\nmethod,runs,median_precision,median_recall,median_fmeasure,iqr_fmeasure,wins_vs_baseline\n") !=
          std::string::npos);

    CHECK(parse_ablation("direct_test") == Ablation::DirectTest);
    try {
        parse_ablation("table9");
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("extended_baseline") != std::string::npos);
    }

    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK(quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25) == 2.0);
    CHECK(quantile({0.0, 10.0}, 0.75) == 7.5);
    CHECK_THROWS_AS(median({}), ValueError);
}

TEST_CASE("desk-scale pretraining separates text from background") {
    Quiet q;
    ExperimentConfig cfg = default_config();
    cfg.data.sizes.real_train = 1;
    cfg.data.sizes.real_test = 1;
    const DataBundle data = load_data(cfg);
    const StagePlans plans = derive_stage_plans(cfg);
    const StageResult pre = run_pretrain(plans.pretrain, data.synthetic, cfg.detector, cfg.seeds.front());

    // Held-out synthetic samples.
    const auto held_out = scenegen::gen_samples(9'000'000, 40, scenegen::Domain::Synthetic, cfg.data.synthetic);
    double in = 0.0, out = 0.0;
    std::size_t n_in = 0, n_out = 0;
    for (const LabeledSample& s : held_out) {
        const ProbMap pm = detector::predict(pre.params, s.image);
        for (std::size_t i = 0; i < s.mask.size(); ++i) {
            if (s.mask.values[i] > 0.5) {
                in += pm.grid().values[i];
                ++n_in;
            } else {
                out += pm.grid().values[i];
                ++n_out;
            }
        }
    }
    const double gap = in / static_cast<double>(n_in) - out / static_cast<double>(n_out);
    MESSAGE("inside-outside probability gap on synthetic: " << gap);
    CHECK(gap > 0.3);

    // Pseudo-labels from the pretrained teacher against the withheld real masks.
    const auto real_pool = scenegen::gen_samples(kRealUnlabeledBase, cfg.data.sizes.real_unlabeled,
                                                 scenegen::Domain::Real, cfg.data.real);
    const units::UnitsHyper hp = units_hyper(cfg, plans.units);
    std::size_t agree = 0, valid = 0;
    for (const LabeledSample& s : real_pool) {
        Grid image = s.image;
        for (double& v : image.values) v = scenegen::quantize(v);
        const units::PseudoLabel pl =
            units::make_pseudo_label(detector::predict(pre.params, image), Grid(s.mask.height, s.mask.width, 1.0), hp);
        for (std::size_t i = 0; i < pl.valid.size(); ++i) {
            if (pl.valid.values[i] == 0.0) continue;
            ++valid;
            agree += (pl.target.values[i] > 0.5) == (s.mask.values[i] > 0.5);
        }
    }
    const double rate = static_cast<double>(agree) / static_cast<double>(valid);
    MESSAGE("pseudo-label agreement on the real pool: " << rate);
    CHECK(rate > 0.8);
}
