#include "unitslab/pipeline/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "unitslab/numcore/checkpoint.hpp"
#include "unitslab/numcore/kernels.hpp"
#include "unitslab/numcore/log.hpp"

namespace unitslab::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string loss_text(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

std::string save(const ParamSet& p, const fs::path& path) {
    numcore::checkpoint_save(p, path);
    return file_digest(path);
}

/// Runs `fn`; on divergence keeps the last good parameters next to the run.
template <typename Fn>
StageResult guarded(Stage stage, const fs::path& dir, Fn&& fn) {
    try {
        return fn();
    } catch (const DivergenceError& e) {
        const fs::path keep = dir / (std::string(stage_name(stage)) + ".last_good.ckpt");
        numcore::checkpoint_save(e.last_good(), keep);
        log_warning(std::string(e.what()) + "; last good parameters kept in " + keep.string());
        throw;
    }
}

json plan_json(const StagePlan& p) {
    json j{{"stage", stage_name(p.stage)}, {"lr", p.lr},           {"momentum", p.momentum},
           {"epochs", p.epochs},          {"batch", p.batch},     {"lr_overridden", p.lr_overridden},
           {"epochs_overridden", p.epochs_overridden}};
    j["init_checkpoint"] = p.init_checkpoint ? json(p.init_checkpoint->filename().string()) : json(nullptr);
    return j;
}

void append_losses(std::string& csv, const std::string& stage, const std::vector<double>& losses) {
    for (std::size_t e = 0; e < losses.size(); ++e) {
        csv += stage + "," + std::to_string(e + 1) + "," + loss_text(losses[e]) + "\n";
    }
}

} // namespace

std::string file_digest(const fs::path& path) {
    return numcore::hex_digest(numcore::fnv1a64(numcore::read_file_bytes(path)));
}

ParamSet load_verified(const fs::path& path, const std::string& expected_digest) {
    const std::vector<std::uint8_t> bytes = numcore::read_file_bytes(path);
    const std::string digest = numcore::hex_digest(numcore::fnv1a64(bytes));
    if (digest != expected_digest) {
        throw FormatError(path.string(), 0, "checkpoint digest " + digest + " does not match recorded " + expected_digest);
    }
    return numcore::decode_checkpoint(bytes, path.string());
}

// ---------------------------------------------------------------------------

std::string UnitsVariant::key() const {
    std::ostringstream os;
    os << units::strategy_name(strategy) << "|w" << hyper.loss_weight_units << "|d" << hyper.loss_weight_det << "|m"
       << hyper.mirror_weight << "|s" << hyper.aug.strong_enabled << "|o" << hyper.strong_on_synth << "|t"
       << hyper.pseudo_threshold << "|c" << hyper.aug.crop_fraction << "|b" << hyper.aug.weak.brightness_max << ","
       << hyper.aug.weak.contrast_lo << "," << hyper.aug.weak.contrast_hi;
    if (hyper.confidence_band) os << "|band" << hyper.confidence_band->lo << "," << hyper.confidence_band->hi;
    for (augment::GeoKind k : hyper.aug.strong_menu) os << "|" << augment::geo_kind_name(k);
    return os.str();
}

Experiment::Experiment(ExperimentConfig cfg, DataBundle data)
    : cfg_(std::move(cfg)), data_(std::move(data)), plans_(derive_stage_plans(cfg_)) {}

UnitsVariant Experiment::default_variant() const { return {cfg_.units.strategy, units_hyper(cfg_, plans_.units)}; }

const StageResult& Experiment::pretrain(std::uint64_t seed) {
    const std::string key = "pretrain/" + std::to_string(seed);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    return cache_.emplace(key, run_pretrain(plans_.pretrain, data_.synthetic, cfg_.detector, seed)).first->second;
}

const StageResult& Experiment::units(std::uint64_t seed, const UnitsVariant& v) {
    const std::string key = "units/" + std::to_string(seed) + "/" + v.key();
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const ParamSet init = pretrain(seed).params;
    return cache_
        .emplace(key, run_units(plans_.units, init, v.strategy, v.hyper, data_.synthetic, data_.real_unlabeled, seed))
        .first->second;
}

const StageResult& Experiment::baseline(std::uint64_t seed, std::optional<int> epochs) {
    StagePlan plan = plans_.finetune;
    if (epochs) plan.epochs = *epochs;
    const std::string key = "baseline/" + std::to_string(seed) + "/" + std::to_string(plan.epochs);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const ParamSet init = pretrain(seed).params;
    return cache_.emplace(key, run_finetune(plan, init, data_.real_train, seed)).first->second;
}

const StageResult& Experiment::finetuned(std::uint64_t seed, const UnitsVariant& v) {
    const std::string key = "finetune/" + std::to_string(seed) + "/" + v.key();
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const ParamSet init = units(seed, v).params;
    return cache_.emplace(key, run_finetune(plans_.finetune, init, data_.real_train, seed)).first->second;
}

MetricsReport Experiment::evaluate(const ParamSet& params) const {
    return evalkit::evaluate(params, data_.real_test, cfg_.iou_threshold);
}

// ---------------------------------------------------------------------------

const char* ablation_name(Ablation a) noexcept {
    switch (a) {
    case Ablation::Strategies: return "strategies";
    case Ablation::Augmentation: return "augmentation";
    case Ablation::ExtendedBaseline: return "extended_baseline";
    case Ablation::DirectTest: return "direct_test";
    }
    return "?";
}

Ablation parse_ablation(const std::string& name) {
    for (Ablation a : {Ablation::Strategies, Ablation::Augmentation, Ablation::ExtendedBaseline, Ablation::DirectTest}) {
        if (name == ablation_name(a)) return a;
    }
    throw ConfigError("unknown ablation '" + name +
                      "' (valid: strategies, augmentation, extended_baseline, direct_test)");
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw ValueError("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

std::vector<double> AblationTable::fmeasures(const std::string& method) const {
    std::vector<double> out;
    for (const AblationRow& r : rows)
        if (r.method == method) out.push_back(r.metrics.fmeasure);
    return out;
}

std::vector<MethodSummary> AblationTable::summarize() const {
    std::vector<MethodSummary> out;
    std::map<std::uint64_t, double> ref;
    for (const AblationRow& r : rows)
        if (r.method == reference) ref[r.seed] = r.metrics.fmeasure;
    for (const std::string& m : methods) {
        std::vector<double> p, rc, f;
        std::size_t wins = 0;
        for (const AblationRow& r : rows) {
            if (r.method != m) continue;
            p.push_back(r.metrics.precision);
            rc.push_back(r.metrics.recall);
            f.push_back(r.metrics.fmeasure);
            if (auto it = ref.find(r.seed); it != ref.end() && r.metrics.fmeasure > it->second) ++wins;
        }
        if (f.empty()) continue;
        MethodSummary s;
        s.method = m;
        s.runs = f.size();
        s.median_precision = median(p);
        s.median_recall = median(rc);
        s.median_fmeasure = median(f);
        s.iqr_fmeasure = quantile(f, 0.75) - quantile(f, 0.25);
        if (!reference.empty() && m != reference) s.wins_vs_reference = wins;
        out.push_back(s);
    }
    return out;
}

std::string AblationTable::csv() const {
    std::string out = "method,seed,precision,recall,fmeasure\n";
    for (const AblationRow& r : rows) {
        out += r.method + "," + std::to_string(r.seed) + "," + evalkit::fixed6(r.metrics.precision) + "," +
               evalkit::fixed6(r.metrics.recall) + "," + evalkit::fixed6(r.metrics.fmeasure) + "\n";
    }
    out += "\nmethod,runs,median_precision,median_recall,median_fmeasure,iqr_fmeasure,wins_vs_" +
           (reference.empty() ? std::string("reference") : reference) + "\n";
    for (const MethodSummary& s : summarize()) {
        out += s.method + "," + std::to_string(s.runs) + "," + evalkit::fixed6(s.median_precision) + "," +
               evalkit::fixed6(s.median_recall) + "," + evalkit::fixed6(s.median_fmeasure) + "," +
               evalkit::fixed6(s.iqr_fmeasure) + "," +
               (s.wins_vs_reference ? std::to_string(*s.wins_vs_reference) : std::string()) + "\n";
    }
    return out;
}

AblationTable run_ablation(Experiment& exp, Ablation which, const AblationOptions& opts) {
    AblationTable t;
    t.which = which;
    const UnitsVariant main = exp.default_variant();
    const std::string main_name = units::strategy_name(main.strategy);
    std::vector<std::pair<std::string, UnitsVariant>> variants;

    switch (which) {
    case Ablation::Strategies:
        t.methods = {"baseline", "sbss", "dbss", "dbds"};
        for (units::Strategy s : {units::Strategy::SBSS, units::Strategy::DBSS, units::Strategy::DBDS}) {
            UnitsVariant v = main;
            v.strategy = s;
            variants.emplace_back(units::strategy_name(s), v);
        }
        break;
    case Ablation::Augmentation: {
        t.methods = {"baseline", "weak-only", "strong"};
        UnitsVariant weak = main;
        weak.hyper.aug.strong_enabled = false;
        variants.emplace_back("weak-only", weak);
        variants.emplace_back("strong", main);
        if (opts.multi_augmentation) {
            UnitsVariant multi = main;
            multi.hyper.aug.strong_enabled = true;
            multi.hyper.aug.strong_menu = {augment::GeoKind::Rot90, augment::GeoKind::Rot180,
                                           augment::GeoKind::Rot270, augment::GeoKind::Crop,
                                           augment::GeoKind::Scale};
            t.methods.push_back("strong-multi");
            variants.emplace_back("strong-multi", multi);
        }
        break;
    }
    case Ablation::ExtendedBaseline:
        t.methods = {"baseline", "baseline-extended", main_name};
        variants.emplace_back(main_name, main);
        break;
    case Ablation::DirectTest:
        t.methods = {"pretrain", "units"};
        if (main.strategy != units::Strategy::SBSS) {
            t.methods.push_back("units-branch1");
            t.methods.push_back("units-branch2");
        }
        break;
    }
    t.reference = which == Ablation::DirectTest ? "pretrain" : "baseline";

    const ExperimentConfig& cfg = exp.config();
    for (std::uint64_t seed : cfg.seeds) {
        if (which == Ablation::DirectTest) {
            t.rows.push_back({"pretrain", seed, exp.evaluate(exp.pretrain(seed).params)});
            const StageResult& u = exp.units(seed, main);
            t.rows.push_back({"units", seed, exp.evaluate(u.params)});
            if (u.branches.size() == 2) {
                t.rows.push_back({"units-branch1", seed, exp.evaluate(u.branches[0])});
                t.rows.push_back({"units-branch2", seed, exp.evaluate(u.branches[1])});
            }
            continue;
        }
        t.rows.push_back({"baseline", seed, exp.evaluate(exp.baseline(seed).params)});
        if (which == Ablation::ExtendedBaseline) {
            const int epochs = extended_baseline_epochs(cfg.finetune.epochs);
            t.rows.push_back({"baseline-extended", seed, exp.evaluate(exp.baseline(seed, epochs).params)});
        }
        for (const auto& [name, v] : variants) {
            t.rows.push_back({name, seed, exp.evaluate(exp.finetuned(seed, v).params)});
        }
        log_info(std::string(ablation_name(which)) + ": seed " + std::to_string(seed) + " done");
    }
    return t;
}

// ---------------------------------------------------------------------------

RunSummary run_experiment(const ExperimentConfig& cfg, const DataBundle& data, std::uint64_t seed) {
    const fs::path dir = fs::path(cfg.out_dir) / ("run-" + std::to_string(seed));
    fs::create_directories(dir);
    StagePlans plans = derive_stage_plans(cfg);
    const std::string strategy = units::strategy_name(cfg.units.strategy);
    json checkpoints = json::object();
    json orders = json::object();

    const StageResult pre =
        guarded(Stage::Pretrain, dir, [&] { return run_pretrain(plans.pretrain, data.synthetic, cfg.detector, seed); });
    const std::string pre_digest = save(pre.params, dir / "pretrain.ckpt");
    checkpoints["pretrain"] = {{"file", "pretrain.ckpt"}, {"digest", pre_digest}};
    orders["pretrain"] = pre.batch_order_hash;

    plans.units.init_checkpoint = dir / "pretrain.ckpt";
    const ParamSet units_init = load_verified(*plans.units.init_checkpoint, pre_digest);
    const StageResult uni = guarded(Stage::Units, dir, [&] {
        return run_units(plans.units, units_init, cfg.units.strategy, units_hyper(cfg, plans.units), data.synthetic,
                         data.real_unlabeled, seed);
    });
    const std::string units_digest = save(uni.params, dir / "units.ckpt");
    checkpoints["units"] = {{"file", "units.ckpt"}, {"digest", units_digest}};
    for (std::size_t b = 0; b < uni.branches.size(); ++b) {
        const std::string name = "units.branch" + std::to_string(b + 1) + ".ckpt";
        checkpoints["units_branch" + std::to_string(b + 1)] = {{"file", name}, {"digest", save(uni.branches[b], dir / name)}};
    }
    orders["units"] = uni.batch_order_hash;

    StagePlan ft_plan = plans.finetune;
    ft_plan.init_checkpoint = dir / "units.ckpt";
    const ParamSet ft_init = load_verified(*ft_plan.init_checkpoint, units_digest);
    const StageResult ft =
        guarded(Stage::Finetune, dir, [&] { return run_finetune(ft_plan, ft_init, data.real_train, seed); });
    checkpoints["finetune"] = {{"file", "finetune.ckpt"}, {"digest", save(ft.params, dir / "finetune.ckpt")}};
    orders["finetune"] = ft.batch_order_hash;

    StagePlan bl_plan = plans.finetune;
    bl_plan.init_checkpoint = dir / "pretrain.ckpt";
    const ParamSet bl_init = load_verified(*bl_plan.init_checkpoint, pre_digest);
    const StageResult bl =
        guarded(Stage::Finetune, dir, [&] { return run_finetune(bl_plan, bl_init, data.real_train, seed); });
    checkpoints["baseline"] = {{"file", "baseline.ckpt"}, {"digest", save(bl.params, dir / "baseline.ckpt")}};
    orders["baseline"] = bl.batch_order_hash;

    RunSummary s;
    s.dir = dir;
    s.pretrain = evalkit::evaluate(pre.params, data.real_test, cfg.iou_threshold);
    s.units = evalkit::evaluate(uni.params, data.real_test, cfg.iou_threshold);
    s.finetune = evalkit::evaluate(ft.params, data.real_test, cfg.iou_threshold);
    s.baseline = evalkit::evaluate(bl.params, data.real_test, cfg.iou_threshold);

    const std::string run_id = "run-" + std::to_string(seed);
    std::string metrics = evalkit::csv_header() + "\n";
    metrics += evalkit::csv_row(run_id, "pretrain", "none", "real_test", s.pretrain) + "\n";
    metrics += evalkit::csv_row(run_id, "units", strategy, "real_test", s.units) + "\n";
    metrics += evalkit::csv_row(run_id, "finetune", strategy, "real_test", s.finetune) + "\n";
    metrics += evalkit::csv_row(run_id, "finetune", "baseline", "real_test", s.baseline) + "\n";
    write_text(dir / "metrics.csv", metrics);

    std::string losses = "stage,epoch,mean_loss\n";
    append_losses(losses, "pretrain", pre.epoch_losses);
    append_losses(losses, "units", uni.epoch_losses);
    append_losses(losses, "finetune", ft.epoch_losses);
    append_losses(losses, "baseline_finetune", bl.epoch_losses);
    write_text(dir / "losses.csv", losses);

    json ft_arm = plan_json(ft_plan);
    json bl_arm = plan_json(bl_plan);
    json diff = json::object();
    for (const auto& [k, v] : ft_arm.items())
        if (bl_arm.at(k) != v) diff[k] = {{"units", v}, {"baseline", bl_arm.at(k)}};

    const json run{{"run_id", run_id},
                   {"seed", seed},
                   {"strategy", strategy},
                   {"config", to_json(cfg)},
                   {"config_digest", config_digest(cfg)},
                   {"kernels", numcore::kernels::active().name},
                   {"plans",
                    {{"pretrain", plan_json(plans.pretrain)},
                     {"units", plan_json(plans.units)},
                     {"finetune", ft_arm},
                     {"baseline_finetune", bl_arm}}},
                   {"finetune_arm_diff", diff},
                   {"checkpoints", checkpoints},
                   {"batch_order", orders}};
    write_text(dir / "run.json", run.dump(2) + "\n");
    log_info(run_id + ": F pretrain " + evalkit::fixed6(s.pretrain.fmeasure) + ", units " +
             evalkit::fixed6(s.units.fmeasure) + ", finetune " + evalkit::fixed6(s.finetune.fmeasure) +
             ", baseline " + evalkit::fixed6(s.baseline.fmeasure));
    return s;
}

fs::path run_single_stage(const ExperimentConfig& cfg, const DataBundle& data, Stage stage, std::uint64_t seed,
                          const std::optional<fs::path>& init, const fs::path& out) {
    fs::create_directories(out);
    const StagePlans plans = derive_stage_plans(cfg);
    if (stage != Stage::Pretrain && !init) {
        throw ConfigError(std::string(stage_name(stage)) + " needs an init checkpoint (--init)");
    }
    StageResult r;
    switch (stage) {
    case Stage::Pretrain:
        r = guarded(stage, out, [&] { return run_pretrain(plans.pretrain, data.synthetic, cfg.detector, seed); });
        break;
    case Stage::Units: {
        const ParamSet p = numcore::checkpoint_load(*init);
        r = guarded(stage, out, [&] {
            return run_units(plans.units, p, cfg.units.strategy, units_hyper(cfg, plans.units), data.synthetic,
                             data.real_unlabeled, seed);
        });
        for (std::size_t b = 0; b < r.branches.size(); ++b) {
            numcore::checkpoint_save(r.branches[b], out / ("units.branch" + std::to_string(b + 1) + ".ckpt"));
        }
        break;
    }
    case Stage::Finetune: {
        const ParamSet p = numcore::checkpoint_load(*init);
        r = guarded(stage, out, [&] { return run_finetune(plans.finetune, p, data.real_train, seed); });
        break;
    }
    }
    const fs::path ckpt = out / (std::string(stage_name(stage)) + ".ckpt");
    numcore::checkpoint_save(r.params, ckpt);
    std::string losses = "stage,epoch,mean_loss\n";
    append_losses(losses, stage_name(stage), r.epoch_losses);
    write_text(out / (std::string(stage_name(stage)) + ".losses.csv"), losses);
    return ckpt;
}

} // namespace unitslab::pipeline
