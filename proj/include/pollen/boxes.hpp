#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pollen {

// Axis-aligned box, center + extents, image pixel frame.
struct BoundingBox {
    double cx = 0, cy = 0, w = 0, h = 0;

    double left() const { return cx - w / 2; }
    double right() const { return cx + w / 2; }
    double top() const { return cy - h / 2; }
    double bottom() const { return cy + h / 2; }
    double area() const { return w * h; }
};

struct Detection {
    BoundingBox box;
    int class_id = 0;
    double confidence = 0;  // objectness * class probability, in [0,1]
    std::string image_id;
};

// Intersection over union, in [0,1]; 0 for degenerate unions.
double iou(const BoundingBox& a, const BoundingBox& b);

// Shape-only IoU of two (w,h) pairs as if both boxes were centered at the
// origin. The anchor-assignment and k-means currency.
double iou_wh(double wa, double ha, double wb, double hb);

// Greedy per-class suppression: keep the highest-confidence detection, drop
// same-class detections overlapping a kept box by more than iou_threshold.
// Output sorted by confidence descending; ties broken by class then box for
// determinism.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

}  // namespace pollen
