#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unitslab/detector/detector.hpp"
#include "unitslab/scenegen/dataset.hpp"
#include "unitslab/scenegen/scenegen.hpp"

namespace unitslab::evalkit {

using scenegen::LabeledSample;

inline constexpr double kDefaultIouThreshold = 0.5;

/// Intersection over union of pixel areas; 0 when the union is empty.
double iou(const Box& a, const Box& b);

struct MatchResult {
    std::vector<std::pair<std::size_t, std::size_t>> pairs; // (pred, gt)
    std::vector<std::size_t> unmatched_preds;
    std::vector<std::size_t> unmatched_gts;
};

/// Greedy one-to-one matching in descending IoU order over pairs with
/// IoU >= threshold; ties go to the smaller (pred, gt) index pair.
MatchResult match_detections(const std::vector<Box>& preds, const std::vector<Box>& gts,
                             double iou_threshold = kDefaultIouThreshold);

struct SampleCounts {
    std::uint64_t sample_id = 0;
    std::size_t num_pred = 0;
    std::size_t num_gt = 0;
    std::size_t num_matched = 0;
};

struct MetricsReport {
    double precision = 0.0;
    double recall = 0.0;
    double fmeasure = 0.0;
    std::size_t num_pred = 0;
    std::size_t num_gt = 0;
    std::size_t num_matched = 0;
    std::vector<SampleCounts> per_sample;
};

/// Micro-averaged metrics from summed counts. With no predictions precision
/// is 1 if there is also no ground truth and 0 otherwise; recall is 1 when
/// there is no ground truth. F is 0 when P + R = 0.
MetricsReport metrics_from_counts(std::size_t num_pred, std::size_t num_gt, std::size_t num_matched);

double fmeasure(double precision, double recall);

/// Scores precomputed predictions; `preds[i]` belongs to `samples[i]`.
MetricsReport evaluate_predictions(std::span<const std::vector<Box>> preds, std::span<const LabeledSample> samples,
                                   double iou_threshold = kDefaultIouThreshold);

/// predict -> binarize(0.5) -> extract_boxes -> match, per sample.
/// Throws ValueError for an empty split.
MetricsReport evaluate(const numcore::ParamSet& params, std::span<const LabeledSample> samples,
                       double iou_threshold = kDefaultIouThreshold);
/// Same over a split on disk.
MetricsReport evaluate(const numcore::ParamSet& params, const scenegen::Manifest& split,
                       double iou_threshold = kDefaultIouThreshold);

std::string csv_header();
/// run_id,stage,strategy,split,precision,recall,fmeasure,num_pred,num_gt,num_matched
std::string csv_row(const std::string& run_id, const std::string& stage, const std::string& strategy,
                    const std::string& split, const MetricsReport& m);

/// Fixed-point formatting with six decimals.
std::string fixed6(double v);

} // namespace unitslab::evalkit
