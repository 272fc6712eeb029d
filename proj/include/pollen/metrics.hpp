#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pollen/boxes.hpp"
#include "pollen/loss.hpp"
#include "pollen/synth.hpp"

namespace pollen {

struct MatchCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    MatchCounts& operator+=(const MatchCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

struct MetricsReport {
    double precision = 0, sensitivity = 0, specificity = 0, f1 = 0;
    bool precision_defined = true, sensitivity_defined = true, specificity_defined = true,
         f1_defined = true;
    MatchCounts counts;
};

// Greedy one-to-one matching on a single image: detections in descending
// confidence claim the highest-IoU unmatched gt of their class at or above
// the threshold. True negatives are counted over the S x S evaluation grid:
// cells holding neither a gt center nor a detection center.
MatchCounts match_detections(std::vector<Detection> dets, const std::vector<GroundTruth>& gts,
                             double iou_threshold, int64_t grid_s, double image_extent);

// Same protocol restricted to one class (tn over cells free of that class).
MatchCounts match_detections_class(const std::vector<Detection>& dets,
                                   const std::vector<GroundTruth>& gts, int class_id,
                                   double iou_threshold, int64_t grid_s, double image_extent);

MetricsReport compute_metrics(const MatchCounts& counts);

struct EvaluationResult {
    MetricsReport overall;
    std::array<MetricsReport, 3> per_class;
    struct PrPoint {
        double threshold = 0;
        double precision = 0, sensitivity = 0;
        MatchCounts counts;
    };
    std::vector<PrPoint> pr_points;  // metrics of the same detection set at rising cutoffs
    int64_t images = 0;
};

// Micro-averaged evaluation across images; detections and ground truth are
// keyed by image id. iou_threshold applies to matching, conf thresholds in
// pr_thresholds build the PR table.
EvaluationResult evaluate_detections(const std::vector<Annotation>& annotations,
                                     const std::vector<Detection>& detections,
                                     double iou_threshold, int64_t grid_s, double image_extent,
                                     const std::vector<double>& pr_thresholds = {});

std::string metrics_table(const EvaluationResult& result,
                          const std::vector<std::string>& class_names);
std::string metrics_json(const EvaluationResult& result,
                         const std::vector<std::string>& class_names);

}  // namespace pollen
