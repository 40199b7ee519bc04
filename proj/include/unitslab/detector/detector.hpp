#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "unitslab/numcore/params.hpp"
#include "unitslab/numcore/tensor.hpp"
#include "unitslab/scenegen/raster.hpp"
#include "unitslab/scenegen/scenegen.hpp"

namespace unitslab::detector {

using numcore::NamedTensors;
using numcore::ParamSet;
using numcore::Tensor;

/// Threshold shared by post-processing and pseudo-label construction.
inline constexpr double kBinarizeThreshold = 0.5;
inline constexpr int kDefaultMinArea = 8;

/// Layer widths of a conv-relu stack; the last layer feeds a sigmoid.
struct DetectorConfig {
    std::vector<std::size_t> channels{1, 8, 8, 1};
    std::size_t kernel = 3;
    double init_scale = 0.1;

    std::size_t layer_count() const noexcept { return channels.size() - 1; }
    void validate() const;
};

/// Per-pixel text probability for one image. Values lie in [0, 1]; a
/// ProbMap never carries a tape attachment, so it is safe as a teacher.
class ProbMap {
public:
    explicit ProbMap(Grid values);

    const Grid& grid() const noexcept { return values_; }
    std::size_t height() const noexcept { return values_.height; }
    std::size_t width() const noexcept { return values_.width; }
    double at(std::size_t y, std::size_t x) const { return values_.at(y, x); }

private:
    Grid values_;
};

/// Parameter names in declaration order: conv0.weight, conv0.bias, conv1.weight, ...
std::vector<std::string> parameter_names(const DetectorConfig& cfg);

/// Weights uniform in [-init_scale, init_scale] from the seeded generator, zero biases.
ParamSet init_detector(const DetectorConfig& cfg, std::uint64_t seed);

/// Reads the layer widths back from a parameter set; throws ShapeError when
/// the layers do not chain or do not start and end with one channel.
DetectorConfig infer_config(const NamedTensors& params);

/// [H, W] grid -> [1, H, W] tensor.
Tensor image_tensor(const Grid& image);
Grid tensor_grid(const Tensor& t);

/// Differentiable forward pass. `params` may be tape-attached leaves; the
/// result is [1, H, W] probabilities.
Tensor forward(const NamedTensors& params, const Tensor& image);

/// Plain evaluation of the detector on one image.
ProbMap predict(const ParamSet& params, const Grid& image);

/// Mean masked BCE of `pred` ([1, H, W]) against the ground-truth mask over
/// valid pixels. Zero (with a warning) when nothing is valid.
Tensor det_loss(const Tensor& pred, const Grid& gt_mask, const Grid& valid_mask);

/// 1 where value >= threshold. Threshold must lie in (0, 1).
Grid binarize(const Grid& values, double threshold = kBinarizeThreshold);
Grid binarize(const ProbMap& pm, double threshold = kBinarizeThreshold);

/// Bounding boxes of 4-connected components with at least `min_area`
/// pixels, sorted by (y_min, x_min). Scores are zero.
std::vector<Box> extract_boxes(const Grid& binary, int min_area = kDefaultMinArea);
/// Same, scoring each box by the mean probability inside it.
std::vector<Box> extract_boxes(const Grid& binary, const ProbMap& pm, int min_area = kDefaultMinArea);

/// Component label per pixel (-1 for background), labels in raster discovery order.
std::vector<int> label_components(const Grid& binary, int* count = nullptr);

/// predict -> binarize -> extract_boxes.
std::vector<Box> detect(const ParamSet& params, const Grid& image, double threshold = kBinarizeThreshold,
                        int min_area = kDefaultMinArea);

/// Writes <stem>.prob.pgm and <stem>.json (annotation schema) into `dir`.
void dump_prediction(const std::filesystem::path& dir, std::uint64_t sample_id, scenegen::Domain domain,
                     const ProbMap& pm, const std::vector<Box>& boxes);

} // namespace unitslab::detector
