#include "unitslab/scenegen/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "unitslab/numcore/checkpoint.hpp"
#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/log.hpp"

namespace unitslab::scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json to_json(const DomainConfig& c) {
    return json{{"height", c.height},
                {"width", c.width},
                {"background_level", {c.background_level_lo, c.background_level_hi}},
                {"background_noise_std", c.background_noise_std},
                {"background_texture_amp", c.background_texture_amp},
                {"stroke_intensity_range", {c.stroke_intensity_lo, c.stroke_intensity_hi}},
                {"instance_rotation_max_deg", c.instance_rotation_max_deg},
                {"blur_kernel", c.blur == Blur::None ? "none" : "box3x3"},
                {"instance_count_range", {c.instance_count_min, c.instance_count_max}},
                {"min_instance_area", c.min_instance_area}};
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

json parse_json_file(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string(), e.byte, "invalid JSON");
    }
}

} // namespace

std::string config_json(const DomainConfig& cfg) { return to_json(cfg).dump(); }

DomainConfig config_from_json(const std::string& text) {
    DomainConfig c;
    try {
        const json j = json::parse(text);
        c.height = j.at("height").get<std::size_t>();
        c.width = j.at("width").get<std::size_t>();
        c.background_level_lo = j.at("background_level").at(0).get<double>();
        c.background_level_hi = j.at("background_level").at(1).get<double>();
        c.background_noise_std = j.at("background_noise_std").get<double>();
        c.background_texture_amp = j.at("background_texture_amp").get<double>();
        c.stroke_intensity_lo = j.at("stroke_intensity_range").at(0).get<double>();
        c.stroke_intensity_hi = j.at("stroke_intensity_range").at(1).get<double>();
        c.instance_rotation_max_deg = j.at("instance_rotation_max_deg").get<double>();
        const std::string blur = j.at("blur_kernel").get<std::string>();
        if (blur != "none" && blur != "box3x3") throw ConfigError("unknown blur_kernel '" + blur + "'");
        c.blur = blur == "none" ? Blur::None : Blur::Box3x3;
        c.instance_count_min = j.at("instance_count_range").at(0).get<int>();
        c.instance_count_max = j.at("instance_count_range").at(1).get<int>();
        c.min_instance_area = j.at("min_instance_area").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("domain config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string config_hash(const DomainConfig& cfg) {
    const std::string text = config_json(cfg);
    return numcore::hex_digest(
        numcore::fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

std::uint8_t quantize_level(double v) noexcept {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

double quantize(double v) noexcept { return static_cast<double>(quantize_level(v)) / 255.0; }

void write_pgm(const fs::path& path, const Grid& g) {
    std::string data = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n255\n";
    const std::size_t header = data.size();
    data.resize(header + g.size());
    for (std::size_t i = 0; i < g.size(); ++i) data[header + i] = static_cast<char>(quantize_level(g.values[i]));
    write_text(path, data);
}

Grid read_pgm(const fs::path& path) {
    const auto bytes = numcore::read_file_bytes(path);
    std::size_t pos = 0;
    const std::string where = path.string();
    auto eof = [&] { throw FormatError(where, pos, "unexpected end of file"); };
    auto skip_space = [&] {
        while (true) {
            if (pos >= bytes.size()) eof();
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                return;
            }
        }
    };
    auto number = [&] {
        skip_space();
        std::size_t v = 0;
        const std::size_t start = pos;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > 1u << 20) throw FormatError(where, start, "header value too large");
            ++pos;
        }
        if (pos == start) {
            if (pos >= bytes.size()) eof();
            throw FormatError(where, pos, "expected a number in PGM header");
        }
        return v;
    };
    if (bytes.size() < 2) eof();
    if (bytes[0] != 'P' || bytes[1] != '5') throw FormatError(where, 0, "not a binary PGM (P5)");
    pos = 2;
    const std::size_t w = number();
    const std::size_t h = number();
    const std::size_t maxval = number();
    if (maxval != 255) throw FormatError(where, pos, "unsupported maxval " + std::to_string(maxval));
    if (w == 0 || h == 0) throw FormatError(where, pos, "empty image");
    if (pos >= bytes.size()) eof();
    ++pos; // single whitespace before the raster
    if (bytes.size() - pos < w * h) {
        pos = bytes.size();
        eof();
    }
    Grid g(h, w);
    for (std::size_t i = 0; i < w * h; ++i) g.values[i] = static_cast<double>(bytes[pos + i]) / 255.0;
    return g;
}

std::string boxes_json(std::uint64_t sample_id, Domain domain, const std::vector<Box>& boxes,
                       const std::string& mask_file) {
    json jb = json::array();
    for (const Box& b : boxes) jb.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    return json{{"sample_id", sample_id}, {"domain", domain_name(domain)}, {"boxes", jb}, {"mask_file", mask_file}}
        .dump(1);
}

fs::path annotation_path(const fs::path& dir, std::uint64_t id) { return dir / (std::to_string(id) + ".json"); }

Manifest write_samples(const fs::path& dir, const std::vector<LabeledSample>& samples, Domain domain,
                       const DomainConfig& cfg, std::uint64_t base_seed) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
    Manifest m;
    m.domain = domain;
    m.base_seed = base_seed;
    m.config = cfg;
    m.config_hash = config_hash(cfg);
    m.dir = dir;
    for (const auto& s : samples) {
        const std::string id = std::to_string(s.sample_id);
        write_pgm(dir / (id + ".pgm"), s.image);
        write_pgm(dir / (id + ".mask.pgm"), s.mask);
        write_text(annotation_path(dir, s.sample_id), boxes_json(s.sample_id, s.domain, s.boxes, id + ".mask.pgm"));
        m.ids.push_back(s.sample_id);
    }
    const json manifest{{"domain", domain_name(domain)},
                        {"base_seed", base_seed},
                        {"count", m.ids.size()},
                        {"ids", m.ids},
                        {"config_hash", m.config_hash},
                        {"config", json::parse(config_json(cfg))}};
    write_text(dir / "manifest.json", manifest.dump(1));
    return m;
}

Manifest write_dataset(const fs::path& dir, std::size_t count, Domain domain, const DomainConfig& cfg,
                       std::uint64_t base_seed) {
    if (count == 0) throw ConfigError("write_dataset: count must be at least 1");
    return write_samples(dir, gen_samples(base_seed, count, domain, cfg), domain, cfg, base_seed);
}

Manifest load_manifest(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    const json j = parse_json_file(path);
    Manifest m;
    try {
        m.domain = parse_domain(j.at("domain").get<std::string>());
        m.base_seed = j.at("base_seed").get<std::uint64_t>();
        m.ids = j.at("ids").get<std::vector<std::uint64_t>>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.config = config_from_json(j.at("config").dump());
    } catch (const json::exception& e) {
        throw FormatError(path.string(), 0, std::string("malformed manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(path.string(), 0, std::string("malformed manifest: ") + e.what());
    }
    m.dir = dir;
    return m;
}

ManifestCheck check_manifest(const Manifest& manifest, const DomainConfig& expected) {
    ManifestCheck c;
    const std::string want = config_hash(expected);
    if (manifest.config_hash != want) {
        c.config_matches = false;
        c.warnings.push_back("config hash mismatch in " + manifest.dir.string() + ": manifest " +
                             manifest.config_hash + ", expected " + want);
        log_warning(c.warnings.back());
    }
    if (config_hash(manifest.config) != manifest.config_hash) {
        c.config_matches = false;
        c.warnings.push_back("manifest " + manifest.dir.string() + " records a config that does not match its hash");
        log_warning(c.warnings.back());
    }
    return c;
}

LabeledSample load_sample(const fs::path& annotation) {
    const json j = parse_json_file(annotation);
    LabeledSample s;
    std::string mask_file;
    try {
        s.sample_id = j.at("sample_id").get<std::uint64_t>();
        s.domain = parse_domain(j.at("domain").get<std::string>());
        for (const auto& b : j.at("boxes")) {
            s.boxes.push_back(Box{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()});
        }
        mask_file = j.at("mask_file").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(annotation.string(), 0, std::string("malformed annotation: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(annotation.string(), 0, std::string("malformed annotation: ") + e.what());
    }
    const fs::path dir = annotation.parent_path();
    s.image = read_pgm(dir / (std::to_string(s.sample_id) + ".pgm"));
    s.mask = read_pgm(dir / mask_file);
    if (s.mask.height != s.image.height || s.mask.width != s.image.width) {
        throw FormatError((dir / mask_file).string(), 0, "mask size differs from image size");
    }
    for (double& v : s.mask.values) v = v >= 0.5 ? 1.0 : 0.0;
    for (const Box& b : s.boxes) {
        if (!(b.x_min < b.x_max && b.y_min < b.y_max) || b.x_min < 0 || b.y_min < 0 ||
            b.x_max > static_cast<int>(s.image.width) || b.y_max > static_cast<int>(s.image.height)) {
            throw FormatError(annotation.string(), 0, "box outside image bounds");
        }
    }
    return s;
}

std::vector<LabeledSample> load_samples(const Manifest& manifest) {
    std::vector<LabeledSample> out;
    out.reserve(manifest.ids.size());
    for (std::uint64_t id : manifest.ids) out.push_back(load_sample(annotation_path(manifest.dir, id)));
    return out;
}

} // namespace unitslab::scenegen
