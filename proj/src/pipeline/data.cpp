#include "unitslab/pipeline/data.hpp"

#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/log.hpp"
#include "unitslab/scenegen/dataset.hpp"

namespace unitslab::pipeline {

namespace fs = std::filesystem;
using scenegen::Domain;

namespace {

struct SplitSpec {
    const char* name;
    Domain domain;
    std::uint64_t base;
    std::size_t count;
};

std::vector<SplitSpec> split_specs(const ExperimentConfig& cfg) {
    const SplitSizes& s = cfg.data.sizes;
    return {{"synthetic", Domain::Synthetic, kSyntheticBase, s.synthetic},
            {"real_train", Domain::Real, kRealTrainBase, s.real_train},
            {"real_unlabeled", Domain::Real, kRealUnlabeledBase, s.real_unlabeled},
            {"real_test", Domain::Real, kRealTestBase, s.real_test}};
}

const DomainConfig& domain_cfg(const ExperimentConfig& cfg, Domain d) {
    return d == Domain::Synthetic ? cfg.data.synthetic : cfg.data.real;
}

std::vector<LabeledSample> generate_quantized(const SplitSpec& s, const DomainConfig& dc) {
    std::vector<LabeledSample> out = scenegen::gen_samples(s.base, s.count, s.domain, dc);
    for (LabeledSample& x : out)
        for (double& v : x.image.values) v = scenegen::quantize(v);
    return out;
}

std::vector<LabeledSample> load_split(const fs::path& dir, const SplitSpec& s, const DomainConfig& dc) {
    const scenegen::Manifest m = scenegen::load_manifest(dir);
    scenegen::check_manifest(m, dc);
    if (m.domain != s.domain) throw FormatError((dir / "manifest.json").string(), 0, "split has the wrong domain");
    if (m.ids.size() != s.count || (!m.ids.empty() && m.ids.front() != s.base)) {
        log_warning("split " + dir.string() + " holds " + std::to_string(m.ids.size()) + " samples, config asks for " +
                    std::to_string(s.count) + "; regenerating in memory");
        return generate_quantized(s, dc);
    }
    return scenegen::load_samples(m);
}

} // namespace

void generate_data(const ExperimentConfig& cfg, const fs::path& dir) {
    for (const SplitSpec& s : split_specs(cfg)) {
        const fs::path split_dir = dir / s.name;
        fs::create_directories(split_dir);
        scenegen::write_dataset(split_dir, s.count, s.domain, domain_cfg(cfg, s.domain), s.base);
        log_info("wrote " + std::to_string(s.count) + " samples to " + split_dir.string());
    }
}

DataBundle load_data(const ExperimentConfig& cfg) {
    const bool from_disk = !cfg.data.data_dir.empty() && fs::exists(fs::path(cfg.data.data_dir) / "synthetic" / "manifest.json");
    DataBundle b;
    std::vector<LabeledSample>* targets[] = {&b.synthetic, &b.real_train, nullptr, &b.real_test};
    std::size_t k = 0;
    for (const SplitSpec& s : split_specs(cfg)) {
        const DomainConfig& dc = domain_cfg(cfg, s.domain);
        std::vector<LabeledSample> samples =
            from_disk ? load_split(fs::path(cfg.data.data_dir) / s.name, s, dc) : generate_quantized(s, dc);
        if (targets[k] != nullptr) {
            *targets[k] = std::move(samples);
        } else {
            b.real_unlabeled = scenegen::strip_labels(samples);
        }
        ++k;
    }
    return b;
}

} // namespace unitslab::pipeline
