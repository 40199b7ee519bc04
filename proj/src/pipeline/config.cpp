#include "unitslab/pipeline/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "unitslab/numcore/checkpoint.hpp"
#include "unitslab/numcore/error.hpp"
#include "unitslab/scenegen/dataset.hpp"

namespace unitslab::pipeline {

using nlohmann::json;

namespace {

json optim_json(const OptimConfig& o) {
    return json{{"lr", o.lr}, {"momentum", o.momentum}, {"epochs", o.epochs}, {"batch", o.batch}};
}

OptimConfig optim_from(const json& j) {
    OptimConfig o;
    o.lr = j.at("lr").get<double>();
    o.momentum = j.at("momentum").get<double>();
    o.epochs = j.at("epochs").get<int>();
    o.batch = j.at("batch").get<std::size_t>();
    return o;
}

json domain_json(const DomainConfig& c) { return json::parse(scenegen::config_json(c)); }

void check_known_keys(const json& reference, const json& patch, const std::string& path) {
    if (!patch.is_object() || !reference.is_object()) return;
    for (const auto& [key, value] : patch.items()) {
        const auto it = reference.find(key);
        if (it == reference.end()) throw ConfigError("unknown config key '" + path + key + "'");
        check_known_keys(*it, value, path + key + ".");
    }
}

template <typename Fn>
auto field(const char* what, Fn&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + what + "': " + e.what());
    }
}

} // namespace

ExperimentConfig default_config() {
    ExperimentConfig c;
    for (std::uint64_t s = 1; s <= 10; ++s) c.seeds.push_back(s);
    c.data.sizes = {64, 24, 160, 100};
    c.pretrain = {0.05, 0.9, 30, 8};
    c.finetune = {0.002, 0.9, 30, 8};
    c.units.hyper.synth_batch = 8;
    c.units.hyper.unlabeled_batch = 8;
    // Hard pseudo-labels from a toy teacher shrink the predicted foreground
    // unless low-confidence pixels are left out.
    c.units.hyper.confidence_band = units::ConfidenceBand{0.02, 0.5};
    c.units.hyper.aug.weak.brightness_max = 0.05;
    return c;
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    data.synthetic.validate();
    data.real.validate();
    if (data.synthetic.height != data.real.height || data.synthetic.width != data.real.width) {
        throw ConfigError("synthetic and real images must share one size");
    }
    const SplitSizes& s = data.sizes;
    if (s.synthetic == 0 || s.real_train == 0 || s.real_unlabeled == 0 || s.real_test == 0) {
        throw ConfigError("every split needs at least one sample");
    }
    if (data.unlabeled_pools.size() != 1) {
        throw ConfigError("exactly one unlabeled pool is supported (got " +
                          std::to_string(data.unlabeled_pools.size()) + ")");
    }
    if (data.unlabeled_pools[0] != "real") throw ConfigError("the unlabeled pool must be 'real'");
    detector.validate();
    for (const auto* o : {&pretrain, &finetune}) {
        if (!(o->lr > 0.0) || !std::isfinite(o->lr)) throw ConfigError("learning rates must be positive");
        if (!(o->momentum >= 0.0 && o->momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
        if (o->epochs < 1) throw ConfigError("epochs must be at least 1");
        if (o->batch == 0) throw ConfigError("batch must be positive");
    }
    units::UnitsHyper h = units.hyper;
    h.lr = derived_units_lr(pretrain.lr);
    h.validate();
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("iou_threshold must lie in (0, 1]");
    derive_stage_plans(*this);
}

json to_json(const ExperimentConfig& c) {
    const units::UnitsHyper& h = c.units.hyper;
    json menu = json::array();
    for (augment::GeoKind k : h.aug.strong_menu) menu.push_back(augment::geo_kind_name(k));
    json band = nullptr;
    if (h.confidence_band) band = json{h.confidence_band->lo, h.confidence_band->hi};
    return json{
        {"seeds", c.seeds},
        {"data",
         {{"synthetic", domain_json(c.data.synthetic)},
          {"real", domain_json(c.data.real)},
          {"splits",
           {{"synthetic", c.data.sizes.synthetic},
            {"real_train", c.data.sizes.real_train},
            {"real_unlabeled", c.data.sizes.real_unlabeled},
            {"real_test", c.data.sizes.real_test}}},
          {"unlabeled_pools", c.data.unlabeled_pools},
          {"data_dir", c.data.data_dir}}},
        {"detector", {{"channels", c.detector.channels}, {"init_scale", c.detector.init_scale}}},
        {"pretrain", optim_json(c.pretrain)},
        {"finetune", optim_json(c.finetune)},
        {"units",
         {{"strategy", units::strategy_name(c.units.strategy)},
          {"lr", c.units.lr ? json(*c.units.lr) : json(nullptr)},
          {"epochs", c.units.epochs ? json(*c.units.epochs) : json(nullptr)},
          {"momentum", h.momentum},
          {"pseudo_threshold", h.pseudo_threshold},
          {"confidence_band", band},
          {"synth_batch", h.synth_batch},
          {"unlabeled_batch", h.unlabeled_batch},
          {"loss_weight_units", h.loss_weight_units},
          {"loss_weight_det", h.loss_weight_det},
          {"mirror_weight", h.mirror_weight},
          {"strong_on_synth", h.strong_on_synth},
          {"augment",
           {{"brightness_max", h.aug.weak.brightness_max},
            {"contrast_range", {h.aug.weak.contrast_lo, h.aug.weak.contrast_hi}},
            {"strong_enabled", h.aug.strong_enabled},
            {"strong_menu", menu},
            {"crop_fraction", h.aug.crop_fraction}}}}},
        {"eval", {{"iou_threshold", c.iou_threshold}}},
        {"out_dir", c.out_dir}};
}

ExperimentConfig config_from_json(const json& patch) {
    if (!patch.is_object()) throw ConfigError("config must be a JSON object");
    const json reference = to_json(default_config());
    check_known_keys(reference, patch, "");
    json j = reference;
    j.merge_patch(patch);

    ExperimentConfig c;
    c.seeds = field("seeds", [&] { return j.at("seeds").get<std::vector<std::uint64_t>>(); });
    const json& d = j.at("data");
    c.data.synthetic = scenegen::config_from_json(d.at("synthetic").dump());
    c.data.real = scenegen::config_from_json(d.at("real").dump());
    field("data.splits", [&] {
        const json& s = d.at("splits");
        c.data.sizes = {s.at("synthetic").get<std::size_t>(), s.at("real_train").get<std::size_t>(),
                        s.at("real_unlabeled").get<std::size_t>(), s.at("real_test").get<std::size_t>()};
        return 0;
    });
    c.data.unlabeled_pools = field("data.unlabeled_pools", [&] {
        return d.contains("unlabeled_pools") ? d.at("unlabeled_pools").get<std::vector<std::string>>()
                                             : std::vector<std::string>{"real"};
    });
    c.data.data_dir = field("data.data_dir", [&] { return d.value("data_dir", std::string()); });
    field("detector", [&] {
        c.detector.channels = j.at("detector").at("channels").get<std::vector<std::size_t>>();
        c.detector.init_scale = j.at("detector").at("init_scale").get<double>();
        return 0;
    });
    c.pretrain = field("pretrain", [&] { return optim_from(j.at("pretrain")); });
    c.finetune = field("finetune", [&] { return optim_from(j.at("finetune")); });

    const json& u = j.at("units");
    units::UnitsHyper& h = c.units.hyper;
    field("units", [&] {
        c.units.strategy = units::parse_strategy(u.at("strategy").get<std::string>());
        if (u.contains("lr") && !u.at("lr").is_null()) c.units.lr = u.at("lr").get<double>();
        if (u.contains("epochs") && !u.at("epochs").is_null()) c.units.epochs = u.at("epochs").get<int>();
        h.momentum = u.at("momentum").get<double>();
        h.pseudo_threshold = u.at("pseudo_threshold").get<double>();
        if (u.contains("confidence_band") && !u.at("confidence_band").is_null()) {
            const auto band = u.at("confidence_band").get<std::vector<double>>();
            if (band.size() != 2) throw ConfigError("units.confidence_band must be [lo, hi]");
            h.confidence_band = units::ConfidenceBand{band[0], band[1]};
        }
        h.synth_batch = u.at("synth_batch").get<std::size_t>();
        h.unlabeled_batch = u.at("unlabeled_batch").get<std::size_t>();
        h.loss_weight_units = u.at("loss_weight_units").get<double>();
        h.loss_weight_det = u.at("loss_weight_det").get<double>();
        h.mirror_weight = u.at("mirror_weight").get<double>();
        h.strong_on_synth = u.at("strong_on_synth").get<bool>();
        const json& a = u.at("augment");
        h.aug.weak.brightness_max = a.at("brightness_max").get<double>();
        const auto contrast = a.at("contrast_range").get<std::vector<double>>();
        if (contrast.size() != 2) throw ConfigError("units.augment.contrast_range must be [lo, hi]");
        h.aug.weak.contrast_lo = contrast[0];
        h.aug.weak.contrast_hi = contrast[1];
        h.aug.strong_enabled = a.at("strong_enabled").get<bool>();
        h.aug.strong_menu.clear();
        for (const auto& name : a.at("strong_menu").get<std::vector<std::string>>()) {
            h.aug.strong_menu.push_back(augment::parse_geo_kind(name));
        }
        h.aug.crop_fraction = a.at("crop_fraction").get<double>();
        return 0;
    });
    c.iou_threshold = field("eval", [&] { return j.at("eval").at("iou_threshold").get<double>(); });
    c.out_dir = field("out_dir", [&] { return j.at("out_dir").get<std::string>(); });
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string config_digest(const ExperimentConfig& cfg) {
    const std::string text = to_json(cfg).dump();
    return numcore::hex_digest(numcore::fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

const char* stage_name(Stage s) noexcept {
    switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Units: return "units";
    case Stage::Finetune: return "finetune";
    }
    return "?";
}

int derived_units_epochs(int finetune_epochs) { return std::max(1, (finetune_epochs + 1) / 2); }

double derived_units_lr(double pretrain_lr) { return 0.1 * pretrain_lr; }

int extended_baseline_epochs(int finetune_epochs) { return (3 * finetune_epochs + 1) / 2; }

StagePlans derive_stage_plans(const ExperimentConfig& cfg) {
    StagePlans p;
    p.pretrain = {Stage::Pretrain, cfg.pretrain.lr, cfg.pretrain.momentum, cfg.pretrain.epochs, cfg.pretrain.batch,
                  std::nullopt};
    p.finetune = {Stage::Finetune, cfg.finetune.lr, cfg.finetune.momentum, cfg.finetune.epochs, cfg.finetune.batch,
                  std::nullopt};
    p.units.stage = Stage::Units;
    p.units.momentum = cfg.units.hyper.momentum;
    p.units.batch = cfg.units.hyper.synth_batch;
    p.units.lr = derived_units_lr(cfg.pretrain.lr);
    p.units.epochs = derived_units_epochs(cfg.finetune.epochs);
    if (cfg.units.lr) {
        const double lr = *cfg.units.lr;
        if (!(lr > 0.0 && lr <= cfg.pretrain.lr)) {
            throw ConfigError("units.lr override must lie in (0, pretrain.lr]");
        }
        p.units.lr = lr;
        p.units.lr_overridden = true;
    }
    if (cfg.units.epochs) {
        if (*cfg.units.epochs < 1) throw ConfigError("units.epochs override must be at least 1");
        p.units.epochs = *cfg.units.epochs;
        p.units.epochs_overridden = true;
    }
    if (cfg.pretrain.epochs < 1 || cfg.finetune.epochs < 1) throw ConfigError("epochs must be at least 1");
    return p;
}

units::UnitsHyper units_hyper(const ExperimentConfig& cfg, const StagePlan& plan) {
    units::UnitsHyper h = cfg.units.hyper;
    h.lr = plan.lr;
    h.momentum = plan.momentum;
    return h;
}

} // namespace unitslab::pipeline
