// Command-line front end: data generation, full runs, single stages,
// checkpoint evaluation, ablations and config inspection.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "unitslab/numcore/checkpoint.hpp"
#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/log.hpp"
#include "unitslab/pipeline/experiment.hpp"

namespace fs = std::filesystem;
using namespace unitslab;
using namespace unitslab::pipeline;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string strategy;
    bool quiet = false;
};

ExperimentConfig resolve_config(const Globals& g) {
    ExperimentConfig cfg = g.config.empty() ? default_config() : load_config(g.config);
    if (!g.strategy.empty()) cfg.units.strategy = units::parse_strategy(g.strategy);
    return cfg;
}

std::vector<std::uint64_t> seeds_of(const Globals& g, const ExperimentConfig& cfg) {
    if (g.seed) return {*g.seed};
    return cfg.seeds;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

Stage parse_stage(const std::string& name) {
    for (Stage s : {Stage::Pretrain, Stage::Units, Stage::Finetune})
        if (name == stage_name(s)) return s;
    throw ConfigError("unknown stage '" + name + "' (valid: pretrain, units, finetune)");
}

int cmd_gen_data(const Globals& g) {
    ExperimentConfig cfg = resolve_config(g);
    const fs::path dir = !g.out.empty() ? fs::path(g.out) : fs::path(cfg.data.data_dir.empty() ? "data" : cfg.data.data_dir);
    generate_data(cfg, dir);
    std::cout << "wrote datasets to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_run(const Globals& g) {
    ExperimentConfig cfg = resolve_config(g);
    if (!g.out.empty()) cfg.out_dir = g.out;
    const DataBundle data = load_data(cfg);
    for (std::uint64_t seed : seeds_of(g, cfg)) {
        const RunSummary s = run_experiment(cfg, data, seed);
        std::cout << s.dir.string() << ": F pretrain " << evalkit::fixed6(s.pretrain.fmeasure) << ", units "
                  << evalkit::fixed6(s.units.fmeasure) << ", finetune " << evalkit::fixed6(s.finetune.fmeasure)
                  << ", baseline " << evalkit::fixed6(s.baseline.fmeasure) << "\n";
    }
    return kExitOk;
}

int cmd_stage(const Globals& g, const std::string& name, const std::string& init) {
    const ExperimentConfig cfg = resolve_config(g);
    const Stage stage = parse_stage(name);
    const std::uint64_t seed = g.seed ? *g.seed : cfg.seeds.front();
    const fs::path out = !g.out.empty() ? fs::path(g.out) : fs::path(cfg.out_dir) / ("run-" + std::to_string(seed));
    std::optional<fs::path> init_path;
    if (!init.empty()) init_path = init;
    const fs::path ckpt = run_single_stage(cfg, load_data(cfg), stage, seed, init_path, out);
    std::cout << ckpt.string() << " " << file_digest(ckpt) << "\n";
    return kExitOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint) {
    const ExperimentConfig cfg = resolve_config(g);
    const numcore::ParamSet params = numcore::checkpoint_load(checkpoint);
    const DataBundle data = load_data(cfg);
    const MetricsReport m = evalkit::evaluate(params, data.real_test, cfg.iou_threshold);
    const std::string stem = fs::path(checkpoint).stem().string();
    const std::string csv = evalkit::csv_header() + "\n" +
                            evalkit::csv_row(stem, "eval", units::strategy_name(cfg.units.strategy), "real_test", m) +
                            "\n";
    if (!g.out.empty()) write_file(g.out, csv);
    std::cout << csv;
    return kExitOk;
}

int cmd_ablate(const Globals& g, const std::string& name, bool multi) {
    ExperimentConfig cfg = resolve_config(g);
    if (!g.out.empty()) cfg.out_dir = g.out;
    const Ablation which = parse_ablation(name);
    if (g.seed) cfg.seeds = {*g.seed};
    Experiment exp(cfg, load_data(cfg));
    const AblationTable t = run_ablation(exp, which, {multi});
    const fs::path path = fs::path(cfg.out_dir) / ("ablation-" + name + ".csv");
    write_file(path, t.csv());
    for (const MethodSummary& s : t.summarize()) {
        std::printf("%-18s median F %s  IQR %s", s.method.c_str(), evalkit::fixed6(s.median_fmeasure).c_str(),
                    evalkit::fixed6(s.iqr_fmeasure).c_str());
        if (s.wins_vs_reference) std::printf("  wins vs %s %zu/%zu", t.reference.c_str(), *s.wins_vs_reference, s.runs);
        std::printf("\n");
    }
    std::cout << "wrote " << path.string() << "\n";
    return kExitOk;
}

int cmd_show_config(const Globals& g) {
    const ExperimentConfig cfg = resolve_config(g);
    const StagePlans p = derive_stage_plans(cfg);
    nlohmann::json j = to_json(cfg);
    j["derived"] = {{"units_lr", p.units.lr},
                    {"units_epochs", p.units.epochs},
                    {"extended_baseline_epochs", extended_baseline_epochs(cfg.finetune.epochs)},
                    {"config_digest", config_digest(cfg)}};
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic pre-training, unsupervised intermediate training and fine-tuning on toy text scenes"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::uint64_t seed_value = 0;
    app.add_option("--config", g.config, "JSON config (defaults apply to missing keys)");
    CLI::Option* seed_opt = app.add_option("--seed", seed_value, "Run one seed instead of the config's list");
    app.add_option("--out", g.out, "Output directory (file for eval)");
    app.add_option("--strategy", g.strategy, "Intermediate-stage strategy")
        ->check(CLI::IsMember({"sbss", "dbss", "dbds"}));
    app.add_flag("--quiet", g.quiet, "Suppress progress logging");

    CLI::App* gen = app.add_subcommand("gen-data", "Write all dataset splits as PGM/JSON");
    CLI::App* run = app.add_subcommand("run", "Pretrain, intermediate stage and fine-tuning of both arms");

    CLI::App* stage = app.add_subcommand("stage", "Run a single stage");
    std::string stage_name_arg;
    std::string init;
    stage->add_option("name", stage_name_arg, "pretrain, units or finetune")->required();
    stage->add_option("--init", init, "Init checkpoint for units and finetune");

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the real test split");
    std::string checkpoint;
    eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);

    CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation over the config's seeds");
    std::string ablation;
    bool multi = false;
    ablate->add_option("name", ablation, "strategies, augmentation, extended_baseline or direct_test")->required();
    ablate->add_flag("--multi-aug", multi, "Add the rotation+crop+scale row to the augmentation ablation");

    CLI::App* show = app.add_subcommand("show-config", "Print the resolved config and derived stage values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitConfig;
    }
    if (*seed_opt) g.seed = seed_value;
    set_log_quiet(g.quiet);

    try {
        if (*gen) return cmd_gen_data(g);
        if (*run) return cmd_run(g);
        if (*stage) return cmd_stage(g, stage_name_arg, init);
        if (*eval) return cmd_eval(g, checkpoint);
        if (*ablate) return cmd_ablate(g, ablation, multi);
        if (*show) return cmd_show_config(g);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
