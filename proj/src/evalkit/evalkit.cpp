#include "unitslab/evalkit/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <tuple>

#include "unitslab/numcore/error.hpp"

namespace unitslab::evalkit {

double iou(const Box& a, const Box& b) {
    const long iw = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const long ih = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const long inter = iw * ih;
    const long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

MatchResult match_detections(const std::vector<Box>& preds, const std::vector<Box>& gts, double iou_threshold) {
    std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;
    for (std::size_t p = 0; p < preds.size(); ++p)
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(preds[p], gts[g]);
            if (v >= iou_threshold && v > 0.0) candidates.emplace_back(v, p, g);
        }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
    });
    std::vector<bool> pred_used(preds.size(), false), gt_used(gts.size(), false);
    MatchResult r;
    for (const auto& [v, p, g] : candidates) {
        if (pred_used[p] || gt_used[g]) continue;
        pred_used[p] = gt_used[g] = true;
        r.pairs.emplace_back(p, g);
    }
    for (std::size_t p = 0; p < preds.size(); ++p)
        if (!pred_used[p]) r.unmatched_preds.push_back(p);
    for (std::size_t g = 0; g < gts.size(); ++g)
        if (!gt_used[g]) r.unmatched_gts.push_back(g);
    return r;
}

double fmeasure(double precision, double recall) {
    const double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

MetricsReport metrics_from_counts(std::size_t num_pred, std::size_t num_gt, std::size_t num_matched) {
    MetricsReport m;
    m.num_pred = num_pred;
    m.num_gt = num_gt;
    m.num_matched = num_matched;
    if (num_pred == 0) {
        m.precision = num_gt == 0 ? 1.0 : 0.0;
    } else {
        m.precision = static_cast<double>(num_matched) / static_cast<double>(num_pred);
    }
    m.recall = num_gt == 0 ? 1.0 : static_cast<double>(num_matched) / static_cast<double>(num_gt);
    m.fmeasure = fmeasure(m.precision, m.recall);
    return m;
}

MetricsReport evaluate_predictions(std::span<const std::vector<Box>> preds, std::span<const LabeledSample> samples,
                                   double iou_threshold) {
    if (samples.empty()) throw ValueError("evaluate: empty split");
    if (preds.size() != samples.size()) throw ValueError("evaluate: prediction count differs from sample count");
    std::size_t np = 0, ng = 0, nm = 0;
    std::vector<SampleCounts> rows;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const MatchResult r = match_detections(preds[i], samples[i].boxes, iou_threshold);
        rows.push_back({samples[i].sample_id, preds[i].size(), samples[i].boxes.size(), r.pairs.size()});
        np += preds[i].size();
        ng += samples[i].boxes.size();
        nm += r.pairs.size();
    }
    MetricsReport m = metrics_from_counts(np, ng, nm);
    m.per_sample = std::move(rows);
    return m;
}

MetricsReport evaluate(const numcore::ParamSet& params, std::span<const LabeledSample> samples, double iou_threshold) {
    if (samples.empty()) throw ValueError("evaluate: empty split");
    std::vector<std::vector<Box>> preds;
    preds.reserve(samples.size());
    for (const LabeledSample& s : samples) preds.push_back(detector::detect(params, s.image));
    return evaluate_predictions(preds, samples, iou_threshold);
}

MetricsReport evaluate(const numcore::ParamSet& params, const scenegen::Manifest& split, double iou_threshold) {
    const std::vector<LabeledSample> samples = scenegen::load_samples(split);
    return evaluate(params, samples, iou_threshold);
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string csv_header() {
    return "run_id,stage,strategy,split,precision,recall,fmeasure,num_pred,num_gt,num_matched";
}

std::string csv_row(const std::string& run_id, const std::string& stage, const std::string& strategy,
                    const std::string& split, const MetricsReport& m) {
    return run_id + "," + stage + "," + strategy + "," + split + "," + fixed6(m.precision) + "," + fixed6(m.recall) +
           "," + fixed6(m.fmeasure) + "," + std::to_string(m.num_pred) + "," + std::to_string(m.num_gt) + "," +
           std::to_string(m.num_matched);
}

} // namespace unitslab::evalkit
