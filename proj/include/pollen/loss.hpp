#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pollen/boxes.hpp"
#include "pollen/tensor.hpp"

namespace pollen {

struct GroundTruth {
    BoundingBox box;  // image pixels
    int class_id = 0;
};

// Per-(cell, anchor) assignment produced from ground truth. Responsible slots
// carry the inverse box transform (logit-domain offsets, log-domain sizes)
// plus the gt box in grid units for the objectness IoU target.
template <class T>
struct TargetGrid {
    int64_t grid = 0, anchors = 0, classes = 0;

    std::vector<uint8_t> obj_mask;     // grid*grid*anchors
    std::vector<uint8_t> noobj_mask;   // disjoint from obj_mask
    std::vector<T> tx, ty, tw, th;     // valid where obj_mask; tx/ty logit-domain
    std::vector<int> class_id;         // valid where obj_mask
    std::vector<T> gt_cx, gt_cy, gt_w, gt_h;  // grid units, valid where obj_mask
    // Objectness regression target per responsible anchor. Starts at 1;
    // update_objectness_targets refreshes it to the IoU between the decoded
    // prediction and its gt, in which form it enters the loss as data (the
    // coordinate gradients stay owned by the coordinate term).
    std::vector<T> obj_iou;

    int64_t slots() const { return grid * grid * anchors; }
};

// Weighted term values; total is their exact sum (weights already applied).
struct LossBreakdown {
    double total = 0;
    double coord = 0;
    double obj = 0;
    double noobj = 0;
    double class_term = 0;
};

struct YoloLossParams {
    double lambda_coord = 5.0;
    double lambda_noobj = 0.5;
    double noobj_iou_exclusion = 0.6;
};

// Maps each gt box to the cell holding its center and the best shape-IoU
// anchor there (next-best when taken). Anchors placed at their cell centers
// overlapping any gt above the exclusion threshold leave the noobj set.
template <class T>
TargetGrid<T> assign_targets(const std::vector<GroundTruth>& gts,
                             const std::vector<std::pair<float, float>>& anchors, int64_t grid,
                             int64_t image_extent, int num_classes,
                             double noobj_iou_exclusion = 0.6);

template <class T>
struct YoloLossResult {
    TensorT<T> total;  // scalar, differentiable back to the raw grid
    LossBreakdown breakdown;
};

// Writes the per-anchor objectness targets: IoU between the decoded
// prediction in `raw` and the assigned gt box. Called once per step before
// the loss, so the loss itself is a pure function of (raw, targets).
template <class T>
void update_objectness_targets(TargetGrid<T>& targets, const TensorT<T>& raw,
                               const std::vector<std::pair<float, float>>& anchors);

// The detection objective over a raw S x S x B x (5+C) grid.
template <class T>
YoloLossResult<T> yolo_loss(const TensorT<T>& raw, const TargetGrid<T>& targets,
                            const std::vector<std::pair<float, float>>& anchors,
                            const YoloLossParams& params);

// 1-IoU k-means over box shapes. Returns k (w,h) priors sorted by area;
// k-means++ seeding, at most 25 iterations, stops when assignments stabilize.
// iteration_objectives, when given, receives the mean 1-IoU after each
// assignment pass.
std::vector<std::pair<float, float>> kmeans_anchors(const std::vector<BoundingBox>& boxes, int k,
                                                    uint64_t seed,
                                                    std::vector<double>* iteration_objectives =
                                                        nullptr);

extern template struct TargetGrid<float>;
extern template struct TargetGrid<double>;
extern template TargetGrid<float> assign_targets<float>(const std::vector<GroundTruth>&,
                                                        const std::vector<std::pair<float, float>>&,
                                                        int64_t, int64_t, int, double);
extern template TargetGrid<double> assign_targets<double>(
    const std::vector<GroundTruth>&, const std::vector<std::pair<float, float>>&, int64_t, int64_t,
    int, double);
extern template YoloLossResult<float> yolo_loss<float>(const TensorT<float>&,
                                                       const TargetGrid<float>&,
                                                       const std::vector<std::pair<float, float>>&,
                                                       const YoloLossParams&);
extern template YoloLossResult<double> yolo_loss<double>(
    const TensorT<double>&, const TargetGrid<double>&,
    const std::vector<std::pair<float, float>>&, const YoloLossParams&);
extern template void update_objectness_targets<float>(
    TargetGrid<float>&, const TensorT<float>&, const std::vector<std::pair<float, float>>&);
extern template void update_objectness_targets<double>(
    TargetGrid<double>&, const TensorT<double>&, const std::vector<std::pair<float, float>>&);

}  // namespace pollen
