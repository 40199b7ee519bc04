#include "unitslab/detector/detector.hpp"

#include <algorithm>
#include <fstream>

#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/ops.hpp"
#include "unitslab/numcore/rng.hpp"
#include "unitslab/scenegen/dataset.hpp"

namespace unitslab::detector {

using numcore::Shape;

void DetectorConfig::validate() const {
    if (channels.size() < 3) throw ConfigError("detector: at least two layers are required");
    if (channels.front() != 1 || channels.back() != 1) {
        throw ConfigError("detector: first and last channel counts must be 1");
    }
    if (std::find(channels.begin(), channels.end(), std::size_t{0}) != channels.end()) {
        throw ConfigError("detector: channel counts must be positive");
    }
    if (kernel != 3) throw ConfigError("detector: only 3x3 kernels are supported");
    if (!(init_scale >= 0.0)) throw ConfigError("detector: init_scale must be >= 0");
}

ProbMap::ProbMap(Grid values) : values_(std::move(values)) {
    for (double v : values_.values) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValueError("ProbMap: value outside [0, 1]");
    }
}

std::vector<std::string> parameter_names(const DetectorConfig& cfg) {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < cfg.layer_count(); ++l) {
        names.push_back("conv" + std::to_string(l) + ".weight");
        names.push_back("conv" + std::to_string(l) + ".bias");
    }
    return names;
}

ParamSet init_detector(const DetectorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    numcore::Rng rng(numcore::derive_seed(seed, {0xDE7EC7}));
    ParamSet ps;
    for (std::size_t l = 0; l < cfg.layer_count(); ++l) {
        Tensor w({cfg.channels[l + 1], cfg.channels[l], 3, 3});
        for (double& v : w.mutable_data()) v = rng.uniform(-cfg.init_scale, cfg.init_scale);
        ps.add("conv" + std::to_string(l) + ".weight", w);
        ps.add("conv" + std::to_string(l) + ".bias", Tensor::zeros({cfg.channels[l + 1]}));
    }
    return ps;
}

DetectorConfig infer_config(const NamedTensors& params) {
    DetectorConfig cfg;
    cfg.channels = {1};
    std::size_t l = 0;
    for (;; ++l) {
        const Tensor* w = params.find("conv" + std::to_string(l) + ".weight");
        const Tensor* b = params.find("conv" + std::to_string(l) + ".bias");
        if (!w && !b) break;
        if (!w || !b) throw ShapeError("detector", "layer " + std::to_string(l) + " is missing weight or bias");
        if (w->rank() != 4 || w->dim(2) != 3 || w->dim(3) != 3 || w->dim(1) != cfg.channels.back()) {
            throw ShapeError("detector", "layer " + std::to_string(l) + " weight " + numcore::shape_str(w->shape()) +
                                             " does not follow " + std::to_string(cfg.channels.back()) + " channels");
        }
        if (b->shape() != Shape{w->dim(0)}) {
            throw ShapeError("detector", "layer " + std::to_string(l) + " bias " + numcore::shape_str(b->shape()));
        }
        cfg.channels.push_back(w->dim(0));
    }
    if (l < 2 || cfg.channels.back() != 1 || 2 * l != params.size()) {
        throw ShapeError("detector", "parameter set does not describe a conv stack ending in one channel");
    }
    return cfg;
}

Tensor image_tensor(const Grid& image) { return Tensor({1, image.height, image.width}, image.values); }

Grid tensor_grid(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 1) throw ShapeError("tensor_grid", "expected [1, H, W], got " + numcore::shape_str(t.shape()));
    Grid g(t.dim(1), t.dim(2));
    std::copy(t.data().begin(), t.data().end(), g.values.begin());
    return g;
}

Tensor forward(const NamedTensors& params, const Tensor& image) {
    const DetectorConfig cfg = infer_config(params);
    Tensor h = image;
    for (std::size_t l = 0; l < cfg.layer_count(); ++l) {
        const std::string p = "conv" + std::to_string(l);
        h = numcore::conv2d(h, params.at(p + ".weight"), params.at(p + ".bias"));
        h = l + 1 < cfg.layer_count() ? numcore::relu(h) : numcore::sigmoid(h);
    }
    return h;
}

ProbMap predict(const ParamSet& params, const Grid& image) {
    return ProbMap(tensor_grid(forward(params.params, image_tensor(image))));
}

Tensor det_loss(const Tensor& pred, const Grid& gt_mask, const Grid& valid_mask) {
    if (gt_mask.height != valid_mask.height || gt_mask.width != valid_mask.width) {
        throw ShapeError("det_loss", "mask and valid mask differ in size");
    }
    return numcore::masked_bce(pred, image_tensor(gt_mask), image_tensor(valid_mask));
}

Grid binarize(const Grid& values, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValueError("binarize: threshold must lie in (0, 1)");
    Grid out(values.height, values.width);
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = values.values[i] >= threshold ? 1.0 : 0.0;
    return out;
}

Grid binarize(const ProbMap& pm, double threshold) { return binarize(pm.grid(), threshold); }

std::vector<int> label_components(const Grid& binary, int* count) {
    const std::size_t w = binary.width;
    std::vector<int> label(binary.size(), -1);
    std::vector<std::size_t> queue;
    int next = 0;
    for (std::size_t start = 0; start < binary.size(); ++start) {
        if (binary.values[start] == 0.0 || label[start] >= 0) continue;
        label[start] = next;
        queue.assign(1, start);
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::size_t i = queue[head];
            const std::size_t y = i / w;
            const std::size_t x = i % w;
            const auto visit = [&](std::size_t j) {
                if (binary.values[j] != 0.0 && label[j] < 0) {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if (y > 0) visit(i - w);
            if (x > 0) visit(i - 1);
            if (x + 1 < w) visit(i + 1);
            if (y + 1 < binary.height) visit(i + w);
        }
        ++next;
    }
    if (count) *count = next;
    return label;
}

namespace {

std::vector<Box> boxes_from_labels(const Grid& binary, const Grid* probs, int min_area) {
    int count = 0;
    const std::vector<int> label = label_components(binary, &count);
    struct Acc {
        int x0 = INT32_MAX, y0 = INT32_MAX, x1 = -1, y1 = -1;
        long area = 0;
    };
    std::vector<Acc> acc(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < label.size(); ++i) {
        if (label[i] < 0) continue;
        Acc& a = acc[static_cast<std::size_t>(label[i])];
        const int y = static_cast<int>(i / binary.width);
        const int x = static_cast<int>(i % binary.width);
        a.x0 = std::min(a.x0, x);
        a.y0 = std::min(a.y0, y);
        a.x1 = std::max(a.x1, x + 1);
        a.y1 = std::max(a.y1, y + 1);
        ++a.area;
    }
    std::vector<Box> boxes;
    for (const Acc& a : acc) {
        if (a.area < min_area) continue;
        Box b{a.x0, a.y0, a.x1, a.y1};
        if (probs) {
            double s = 0.0;
            for (int y = b.y_min; y < b.y_max; ++y)
                for (int x = b.x_min; x < b.x_max; ++x) s += probs->at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            b.score = s / static_cast<double>(b.area());
        }
        boxes.push_back(b);
    }
    std::sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) {
        if (a.y_min != b.y_min) return a.y_min < b.y_min;
        if (a.x_min != b.x_min) return a.x_min < b.x_min;
        if (a.y_max != b.y_max) return a.y_max < b.y_max;
        return a.x_max < b.x_max;
    });
    return boxes;
}

} // namespace

std::vector<Box> extract_boxes(const Grid& binary, int min_area) { return boxes_from_labels(binary, nullptr, min_area); }

std::vector<Box> extract_boxes(const Grid& binary, const ProbMap& pm, int min_area) {
    if (pm.height() != binary.height || pm.width() != binary.width) {
        throw ShapeError("extract_boxes", "probability map and binary map differ in size");
    }
    return boxes_from_labels(binary, &pm.grid(), min_area);
}

std::vector<Box> detect(const ParamSet& params, const Grid& image, double threshold, int min_area) {
    const ProbMap pm = predict(params, image);
    return extract_boxes(binarize(pm, threshold), pm, min_area);
}

void dump_prediction(const std::filesystem::path& dir, std::uint64_t sample_id, scenegen::Domain domain,
                     const ProbMap& pm, const std::vector<Box>& boxes) {
    std::filesystem::create_directories(dir);
    const std::string stem = std::to_string(sample_id);
    scenegen::write_pgm(dir / (stem + ".prob.pgm"), pm.grid());
    std::ofstream out(dir / (stem + ".json"), std::ios::trunc);
    if (!out) throw IoError((dir / (stem + ".json")).string(), "cannot open for writing");
    out << scenegen::boxes_json(sample_id, domain, boxes, stem + ".prob.pgm");
}

} // namespace unitslab::detector
