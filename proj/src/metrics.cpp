#include "pollen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <json.hpp>

namespace pollen {

namespace {

void sort_by_confidence(std::vector<Detection>& dets) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        return a.box.cx < b.box.cx;
    });
}

int64_t cell_of(double cx, double cy, int64_t grid_s, double image_extent) {
    const double cell = image_extent / static_cast<double>(grid_s);
    const int64_t col = std::clamp<int64_t>(static_cast<int64_t>(cx / cell), 0, grid_s - 1);
    const int64_t row = std::clamp<int64_t>(static_cast<int64_t>(cy / cell), 0, grid_s - 1);
    return row * grid_s + col;
}

MatchCounts match_impl(std::vector<Detection> dets, const std::vector<GroundTruth>& gts,
                       double iou_threshold, int64_t grid_s, double image_extent) {
    sort_by_confidence(dets);
    MatchCounts counts;
    std::vector<bool> gt_taken(gts.size(), false);
    for (const auto& d : dets) {
        int best = -1;
        double best_iou = 0;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_taken[g] || gts[g].class_id != d.class_id) continue;
            const double v = iou(d.box, gts[g].box);
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            gt_taken[best] = true;
            ++counts.tp;
        } else {
            ++counts.fp;
        }
    }
    counts.fn = static_cast<int64_t>(gts.size()) - counts.tp;

    std::set<int64_t> occupied;
    for (const auto& g : gts) occupied.insert(cell_of(g.box.cx, g.box.cy, grid_s, image_extent));
    for (const auto& d : dets) occupied.insert(cell_of(d.box.cx, d.box.cy, grid_s, image_extent));
    counts.tn = grid_s * grid_s - static_cast<int64_t>(occupied.size());
    return counts;
}

}  // namespace

MatchCounts match_detections(std::vector<Detection> dets, const std::vector<GroundTruth>& gts,
                             double iou_threshold, int64_t grid_s, double image_extent) {
    if (iou_threshold <= 0 || iou_threshold >= 1)
        throw ValueError("match_detections: iou threshold must lie in (0, 1)");
    return match_impl(std::move(dets), gts, iou_threshold, grid_s, image_extent);
}

MatchCounts match_detections_class(const std::vector<Detection>& dets,
                                   const std::vector<GroundTruth>& gts, int class_id,
                                   double iou_threshold, int64_t grid_s, double image_extent) {
    std::vector<Detection> cls_dets;
    std::vector<GroundTruth> cls_gts;
    for (const auto& d : dets)
        if (d.class_id == class_id) cls_dets.push_back(d);
    for (const auto& g : gts)
        if (g.class_id == class_id) cls_gts.push_back(g);
    return match_impl(std::move(cls_dets), cls_gts, iou_threshold, grid_s, image_extent);
}

MetricsReport compute_metrics(const MatchCounts& counts) {
    if (counts.tp < 0 || counts.fp < 0 || counts.fn < 0 || counts.tn < 0)
        throw ValueError("compute_metrics: negative counts");
    MetricsReport r;
    r.counts = counts;
    const auto ratio = [](int64_t num, int64_t den, double& out, bool& defined) {
        if (den == 0) {
            out = 0;
            defined = false;
        } else {
            out = static_cast<double>(num) / static_cast<double>(den);
            defined = true;
        }
    };
    ratio(counts.tp, counts.tp + counts.fp, r.precision, r.precision_defined);
    ratio(counts.tp, counts.tp + counts.fn, r.sensitivity, r.sensitivity_defined);
    ratio(counts.tn, counts.tn + counts.fp, r.specificity, r.specificity_defined);
    const double denom = r.precision + r.sensitivity;
    if (r.precision_defined && r.sensitivity_defined && denom > 0) {
        r.f1 = 2 * r.precision * r.sensitivity / denom;
        r.f1_defined = true;
    } else {
        r.f1 = 0;
        r.f1_defined = false;
    }
    return r;
}

EvaluationResult evaluate_detections(const std::vector<Annotation>& annotations,
                                     const std::vector<Detection>& detections,
                                     double iou_threshold, int64_t grid_s, double image_extent,
                                     const std::vector<double>& pr_thresholds) {
    std::map<std::string, std::vector<Detection>> dets_by_image;
    for (const auto& d : detections) dets_by_image[d.image_id].push_back(d);

    EvaluationResult result;
    result.images = static_cast<int64_t>(annotations.size());

    MatchCounts overall;
    std::array<MatchCounts, 3> per_class{};
    std::vector<MatchCounts> pr_counts(pr_thresholds.size());

    auto eval_image = [&](const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts) {
        overall += match_detections(dets, gts, iou_threshold, grid_s, image_extent);
        for (int c = 0; c < 3; ++c)
            per_class[c] +=
                match_detections_class(dets, gts, c, iou_threshold, grid_s, image_extent);
        for (size_t t = 0; t < pr_thresholds.size(); ++t) {
            std::vector<Detection> cut;
            for (const auto& d : dets)
                if (d.confidence >= pr_thresholds[t]) cut.push_back(d);
            pr_counts[t] += match_detections(cut, gts, iou_threshold, grid_s, image_extent);
        }
    };

    std::set<std::string> seen;
    for (const auto& ann : annotations) {
        seen.insert(ann.image_id);
        auto it = dets_by_image.find(ann.image_id);
        static const std::vector<Detection> kNone;
        eval_image(it == dets_by_image.end() ? kNone : it->second, ann.boxes);
    }
    // detections for images without annotations count as pure false positives
    for (const auto& [image, dets] : dets_by_image) {
        if (!seen.count(image)) eval_image(dets, {});
    }

    result.overall = compute_metrics(overall);
    for (int c = 0; c < 3; ++c) result.per_class[c] = compute_metrics(per_class[c]);
    for (size_t t = 0; t < pr_thresholds.size(); ++t) {
        EvaluationResult::PrPoint p;
        p.threshold = pr_thresholds[t];
        const auto m = compute_metrics(pr_counts[t]);
        p.precision = m.precision;
        p.sensitivity = m.sensitivity;
        p.counts = pr_counts[t];
        result.pr_points.push_back(p);
    }
    return result;
}

std::string metrics_table(const EvaluationResult& result,
                          const std::vector<std::string>& class_names) {
    char buf[256];
    std::string out;
    auto row = [&](const std::string& name, const MetricsReport& r) {
        std::snprintf(buf, sizeof(buf),
                      "%-12s %9.3f %11.3f %11.3f %8.3f   tp %6lld fp %6lld fn %6lld tn %8lld\n",
                      name.c_str(), r.precision, r.sensitivity, r.specificity, r.f1,
                      static_cast<long long>(r.counts.tp), static_cast<long long>(r.counts.fp),
                      static_cast<long long>(r.counts.fn), static_cast<long long>(r.counts.tn));
        out += buf;
    };
    std::snprintf(buf, sizeof(buf), "%-12s %9s %11s %11s %8s\n", "", "precision", "sensitivity",
                  "specificity", "f1");
    out += buf;
    row("overall", result.overall);
    for (size_t c = 0; c < class_names.size() && c < 3; ++c)
        row(class_names[c], result.per_class[c]);
    if (!result.pr_points.empty()) {
        out += "\nconfidence-threshold sweep (precision / sensitivity):\n";
        for (const auto& p : result.pr_points) {
            std::snprintf(buf, sizeof(buf), "  conf >= %.2f   %6.3f / %6.3f\n", p.threshold,
                          p.precision, p.sensitivity);
            out += buf;
        }
    }
    return out;
}

std::string metrics_json(const EvaluationResult& result,
                         const std::vector<std::string>& class_names) {
    using nlohmann::json;
    auto report_json = [](const MetricsReport& r) {
        return json{{"precision", r.precision},
                    {"sensitivity", r.sensitivity},
                    {"specificity", r.specificity},
                    {"f1", r.f1},
                    {"defined",
                     {{"precision", r.precision_defined},
                      {"sensitivity", r.sensitivity_defined},
                      {"specificity", r.specificity_defined},
                      {"f1", r.f1_defined}}},
                    {"counts",
                     {{"tp", r.counts.tp},
                      {"fp", r.counts.fp},
                      {"fn", r.counts.fn},
                      {"tn", r.counts.tn}}}};
    };
    json j;
    j["images"] = result.images;
    j["overall"] = report_json(result.overall);
    for (size_t c = 0; c < class_names.size() && c < 3; ++c)
        j["per_class"][class_names[c]] = report_json(result.per_class[c]);
    json pr = json::array();
    for (const auto& p : result.pr_points)
        pr.push_back({{"threshold", p.threshold},
                      {"precision", p.precision},
                      {"sensitivity", p.sensitivity}});
    j["pr_points"] = std::move(pr);
    return j.dump(2) + "\n";
}

}  // namespace pollen
