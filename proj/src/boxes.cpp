#include "pollen/boxes.hpp"

#include <algorithm>
#include <cmath>

namespace pollen {

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0.0;
    return inter / uni;
}

double iou_wh(double wa, double ha, double wb, double hb) {
    const double inter = std::min(wa, wb) * std::min(ha, hb);
    const double uni = wa * ha + wb * hb - inter;
    if (uni <= 0) return 0.0;
    return inter / uni;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
    std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
        return a.box.cy < b.box.cy;
    });
    std::vector<Detection> kept;
    kept.reserve(detections.size());
    for (const auto& d : detections) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

}  // namespace pollen
