#include "pollen/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <set>
#include <string>

#include "pollen/ops.hpp"
#include "pollen/rng.hpp"

namespace pollen {

namespace {

template <class T>
T logit(T p) {
    const T eps = static_cast<T>(1e-6);
    p = std::clamp(p, eps, T(1) - eps);
    return std::log(p / (T(1) - p));
}

}  // namespace

template <class T>
TargetGrid<T> assign_targets(const std::vector<GroundTruth>& gts,
                             const std::vector<std::pair<float, float>>& anchors, int64_t grid,
                             int64_t image_extent, int num_classes,
                             double noobj_iou_exclusion) {
    TargetGrid<T> tg;
    tg.grid = grid;
    tg.anchors = static_cast<int64_t>(anchors.size());
    tg.classes = num_classes;
    const int64_t n = tg.slots();
    tg.obj_mask.assign(n, 0);
    tg.noobj_mask.assign(n, 1);
    tg.tx.assign(n, T(0));
    tg.ty.assign(n, T(0));
    tg.tw.assign(n, T(0));
    tg.th.assign(n, T(0));
    tg.class_id.assign(n, -1);
    tg.gt_cx.assign(n, T(0));
    tg.gt_cy.assign(n, T(0));
    tg.gt_w.assign(n, T(0));
    tg.gt_h.assign(n, T(0));
    tg.obj_iou.assign(n, T(1));

    const double cell = static_cast<double>(image_extent) / static_cast<double>(grid);

    for (const auto& gt : gts) {
        if (gt.box.cx < 0 || gt.box.cx > image_extent || gt.box.cy < 0 ||
            gt.box.cy > image_extent)
            throw ValueError("assign_targets: gt box center (" + std::to_string(gt.box.cx) + ", " +
                             std::to_string(gt.box.cy) + ") outside the image frame");
        if (gt.class_id < 0 || gt.class_id >= num_classes)
            throw ValueError("assign_targets: gt class " + std::to_string(gt.class_id) +
                             " out of range");

        const double gx = gt.box.cx / cell;
        const double gy = gt.box.cy / cell;
        const double gw = gt.box.w / cell;
        const double gh = gt.box.h / cell;
        const int64_t col = std::min<int64_t>(grid - 1, static_cast<int64_t>(gx));
        const int64_t row = std::min<int64_t>(grid - 1, static_cast<int64_t>(gy));

        // Best shape IoU among anchors still free in this cell.
        int best = -1;
        double best_iou = -1;
        for (size_t a = 0; a < anchors.size(); ++a) {
            const int64_t slot = (row * grid + col) * tg.anchors + static_cast<int64_t>(a);
            if (tg.obj_mask[slot]) continue;
            const double v = iou_wh(gw, gh, anchors[a].first, anchors[a].second);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(a);
            }
        }
        if (best < 0) continue;  // cell saturated: more gts than anchors

        const int64_t slot = (row * grid + col) * tg.anchors + best;
        tg.obj_mask[slot] = 1;
        tg.noobj_mask[slot] = 0;
        tg.tx[slot] = logit(static_cast<T>(gx - col));
        tg.ty[slot] = logit(static_cast<T>(gy - row));
        tg.tw[slot] = static_cast<T>(std::log(gw / anchors[best].first));
        tg.th[slot] = static_cast<T>(std::log(gh / anchors[best].second));
        tg.class_id[slot] = gt.class_id;
        tg.gt_cx[slot] = static_cast<T>(gx);
        tg.gt_cy[slot] = static_cast<T>(gy);
        tg.gt_w[slot] = static_cast<T>(gw);
        tg.gt_h[slot] = static_cast<T>(gh);
    }

    // Anchors sitting on a gt (placed at their cell centers) are ambiguous:
    // drop them from the noobj penalty without making them responsible.
    for (int64_t row = 0; row < grid; ++row) {
        for (int64_t col = 0; col < grid; ++col) {
            for (int64_t a = 0; a < tg.anchors; ++a) {
                const int64_t slot = (row * grid + col) * tg.anchors + a;
                if (tg.obj_mask[slot] || !tg.noobj_mask[slot]) continue;
                BoundingBox anchor_box;
                anchor_box.cx = (col + 0.5) * cell;
                anchor_box.cy = (row + 0.5) * cell;
                anchor_box.w = anchors[a].first * cell;
                anchor_box.h = anchors[a].second * cell;
                for (const auto& gt : gts) {
                    if (iou(anchor_box, gt.box) > noobj_iou_exclusion) {
                        tg.noobj_mask[slot] = 0;
                        break;
                    }
                }
            }
        }
    }
    return tg;
}

template <class T>
void update_objectness_targets(TargetGrid<T>& targets, const TensorT<T>& raw,
                               const std::vector<std::pair<float, float>>& anchors) {
    const int64_t s = targets.grid;
    const int64_t b = targets.anchors;
    const int64_t stride = 5 + targets.classes;
    if (raw.shape() != std::vector<int64_t>{s, s, b, stride})
        throw ShapeError("update_objectness_targets: raw grid shape mismatch");
    const T* v = raw.raw();
    for (int64_t row = 0; row < s; ++row) {
        for (int64_t col = 0; col < s; ++col) {
            for (int64_t a = 0; a < b; ++a) {
                const int64_t slot = (row * s + col) * b + a;
                if (!targets.obj_mask[slot]) continue;
                const T* p = v + slot * stride;
                BoundingBox pred;
                pred.cx = col + ops::sigmoid_scalar(static_cast<double>(p[0]));
                pred.cy = row + ops::sigmoid_scalar(static_cast<double>(p[1]));
                pred.w = anchors[a].first * std::exp(static_cast<double>(p[2]));
                pred.h = anchors[a].second * std::exp(static_cast<double>(p[3]));
                BoundingBox gt;
                gt.cx = targets.gt_cx[slot];
                gt.cy = targets.gt_cy[slot];
                gt.w = targets.gt_w[slot];
                gt.h = targets.gt_h[slot];
                targets.obj_iou[slot] = static_cast<T>(iou(pred, gt));
            }
        }
    }
}

template <class T>
YoloLossResult<T> yolo_loss(const TensorT<T>& raw, const TargetGrid<T>& targets,
                            const std::vector<std::pair<float, float>>& anchors,
                            const YoloLossParams& params) {
    const int64_t s = targets.grid;
    const int64_t b = targets.anchors;
    const int64_t c = targets.classes;
    if (raw.shape() != std::vector<int64_t>{s, s, b, 5 + c})
        throw ShapeError("yolo_loss: raw grid " + TensorT<T>::shape_str(raw.shape()) +
                         " does not match targets " + std::to_string(s) + "x" + std::to_string(s) +
                         "x" + std::to_string(b) + "x" + std::to_string(5 + c));
    if (static_cast<int64_t>(anchors.size()) != b)
        throw ShapeError("yolo_loss: anchor count mismatch");

    const T* v = raw.raw();
    const int64_t stride = 5 + c;
    LossBreakdown bd;

    // Cached per-slot values for the analytic backward.
    struct RespCache {
        int64_t slot;
        double sx, sy, so, obj_target;
        std::vector<double> probs;
        int cls;
    };
    auto resp = std::make_shared<std::vector<RespCache>>();
    auto noobj_slots = std::make_shared<std::vector<std::pair<int64_t, double>>>();  // slot, sigma(to)

    for (int64_t slot = 0; slot < targets.slots(); ++slot) {
        const T* p = v + slot * stride;
        if (targets.obj_mask[slot]) {
            RespCache rc;
            rc.slot = slot;
            rc.sx = ops::sigmoid_scalar(static_cast<double>(p[0]));
            rc.sy = ops::sigmoid_scalar(static_cast<double>(p[1]));
            rc.so = ops::sigmoid_scalar(static_cast<double>(p[4]));
            rc.obj_target = static_cast<double>(targets.obj_iou[slot]);
            rc.cls = targets.class_id[slot];

            const double ox = ops::sigmoid_scalar(static_cast<double>(targets.tx[slot]));
            const double oy = ops::sigmoid_scalar(static_cast<double>(targets.ty[slot]));
            const double dx = rc.sx - ox;
            const double dy = rc.sy - oy;
            const double dw = static_cast<double>(p[2] - targets.tw[slot]);
            const double dh = static_cast<double>(p[3] - targets.th[slot]);
            bd.coord += params.lambda_coord * (dx * dx + dy * dy + dw * dw + dh * dh);

            const double dobj = rc.so - rc.obj_target;
            bd.obj += dobj * dobj;

            // class cross-entropy, max-subtracted softmax
            rc.probs.resize(static_cast<size_t>(c));
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(p[5 + k]));
            double denom = 0;
            for (int64_t k = 0; k < c; ++k) {
                rc.probs[k] = std::exp(static_cast<double>(p[5 + k]) - mx);
                denom += rc.probs[k];
            }
            for (auto& pr : rc.probs) pr /= denom;
            bd.class_term += -std::log(std::max(rc.probs[rc.cls], 1e-300));
            resp->push_back(std::move(rc));
        } else if (targets.noobj_mask[slot]) {
            const double so = ops::sigmoid_scalar(static_cast<double>(p[4]));
            bd.noobj += params.lambda_noobj * so * so;
            noobj_slots->emplace_back(slot, so);
        }
    }
    bd.total = bd.coord + bd.obj + bd.noobj + bd.class_term;

    auto check_term = [](double t, const char* name) {
        if (!std::isfinite(t))
            throw ValueError(std::string("yolo_loss: non-finite ") + name + " term");
    };
    check_term(bd.coord, "coord");
    check_term(bd.obj, "obj");
    check_term(bd.noobj, "noobj");
    check_term(bd.class_term, "class");

    // Single custom node: forward value above, closed-form backward below.
    auto out = TensorT<T>::scalar(static_cast<T>(bd.total));
    if (grad_enabled() && raw.requires_grad()) {
        auto& n = out.node();
        n.requires_grad = true;
        n.op = "yolo_loss";
        n.parents.push_back(raw.ptr());
        auto tgx = std::make_shared<std::vector<T>>(targets.tx);
        auto tgy = std::make_shared<std::vector<T>>(targets.ty);
        auto tgw = std::make_shared<std::vector<T>>(targets.tw);
        auto tgh = std::make_shared<std::vector<T>>(targets.th);
        n.backward_fn = [resp, noobj_slots, tgx, tgy, tgw, tgh, params, stride,
                         c](TensorNode<T>& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            const double g = static_cast<double>(node.grad[0]);
            const T* value = p.value.data();
            T* grad = p.grad.data();
            for (const auto& rc : *resp) {
                T* gslot = grad + rc.slot * stride;
                const T* vslot = value + rc.slot * stride;
                const double ox = ops::sigmoid_scalar(static_cast<double>((*tgx)[rc.slot]));
                const double oy = ops::sigmoid_scalar(static_cast<double>((*tgy)[rc.slot]));
                const double dsx = rc.sx * (1 - rc.sx);
                const double dsy = rc.sy * (1 - rc.sy);
                const double dso = rc.so * (1 - rc.so);

                // coord
                gslot[0] += static_cast<T>(g * 2 * params.lambda_coord * (rc.sx - ox) * dsx);
                gslot[1] += static_cast<T>(g * 2 * params.lambda_coord * (rc.sy - oy) * dsy);
                gslot[2] += static_cast<T>(
                    g * 2 * params.lambda_coord *
                    (static_cast<double>(vslot[2]) - static_cast<double>((*tgw)[rc.slot])));
                gslot[3] += static_cast<T>(
                    g * 2 * params.lambda_coord *
                    (static_cast<double>(vslot[3]) - static_cast<double>((*tgh)[rc.slot])));

                // obj: the IoU target is data here
                gslot[4] += static_cast<T>(g * 2 * (rc.so - rc.obj_target) * dso);

                // class: softmax cross-entropy
                for (int64_t k = 0; k < c; ++k) {
                    const double onehot = (k == rc.cls) ? 1.0 : 0.0;
                    gslot[5 + k] += static_cast<T>(g * (rc.probs[k] - onehot));
                }
            }
            for (const auto& [slot, so] : *noobj_slots) {
                grad[slot * stride + 4] +=
                    static_cast<T>(g * 2 * params.lambda_noobj * so * so * (1 - so));
            }
        };
    }
    YoloLossResult<T> result;
    result.total = out;
    result.breakdown = bd;
    return result;
}

std::vector<std::pair<float, float>> kmeans_anchors(const std::vector<BoundingBox>& boxes, int k,
                                                    uint64_t seed,
                                                    std::vector<double>* iteration_objectives) {
    if (k <= 0) throw ValueError("kmeans_anchors: k must be positive");
    std::set<std::pair<double, double>> distinct;
    for (const auto& b : boxes) distinct.emplace(b.w, b.h);
    if (static_cast<int>(distinct.size()) < k)
        throw ValueError("kmeans_anchors: k = " + std::to_string(k) + " exceeds the " +
                         std::to_string(distinct.size()) + " distinct box shapes");

    const size_t n = boxes.size();
    Rng rng(seed);
    std::vector<std::pair<double, double>> centroids;
    centroids.reserve(k);

    // k-means++ seeding over 1-IoU distances.
    const auto& first = boxes[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(n) - 1))];
    centroids.push_back({first.w, first.h});
    std::vector<double> d2(n);
    while (static_cast<int>(centroids.size()) < k) {
        double sum = 0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [cw, ch] : centroids)
                best = std::min(best, 1.0 - iou_wh(boxes[i].w, boxes[i].h, cw, ch));
            d2[i] = best * best;
            sum += d2[i];
        }
        double r = rng.uniform() * sum;
        size_t pick = n - 1;
        for (size_t i = 0; i < n; ++i) {
            r -= d2[i];
            if (r <= 0) {
                pick = i;
                break;
            }
        }
        centroids.push_back({boxes[pick].w, boxes[pick].h});
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 25; ++iter) {
        bool changed = false;
        double objective = 0;
        for (size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int ci = 0; ci < k; ++ci) {
                const double d =
                    1.0 - iou_wh(boxes[i].w, boxes[i].h, centroids[ci].first, centroids[ci].second);
                if (d < best_d) {
                    best_d = d;
                    best = ci;
                }
            }
            objective += best_d;
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (iteration_objectives) iteration_objectives->push_back(objective / static_cast<double>(n));
        if (!changed) break;
        std::vector<double> sw(k, 0), sh(k, 0);
        std::vector<int64_t> cnt(k, 0);
        for (size_t i = 0; i < n; ++i) {
            sw[assign[i]] += boxes[i].w;
            sh[assign[i]] += boxes[i].h;
            ++cnt[assign[i]];
        }
        for (int ci = 0; ci < k; ++ci) {
            if (cnt[ci] > 0) centroids[ci] = {sw[ci] / cnt[ci], sh[ci] / cnt[ci]};
        }
    }

    std::sort(centroids.begin(), centroids.end(), [](const auto& a, const auto& b) {
        const double aa = a.first * a.second, ab = b.first * b.second;
        if (aa != ab) return aa < ab;
        return a.first < b.first;
    });
    std::vector<std::pair<float, float>> out;
    out.reserve(k);
    for (const auto& [w, h] : centroids)
        out.emplace_back(static_cast<float>(w), static_cast<float>(h));
    return out;
}

template struct TargetGrid<float>;
template struct TargetGrid<double>;
template TargetGrid<float> assign_targets<float>(const std::vector<GroundTruth>&,
                                                 const std::vector<std::pair<float, float>>&,
                                                 int64_t, int64_t, int, double);
template TargetGrid<double> assign_targets<double>(const std::vector<GroundTruth>&,
                                                   const std::vector<std::pair<float, float>>&,
                                                   int64_t, int64_t, int, double);
template YoloLossResult<float> yolo_loss<float>(const TensorT<float>&, const TargetGrid<float>&,
                                                const std::vector<std::pair<float, float>>&,
                                                const YoloLossParams&);
template YoloLossResult<double> yolo_loss<double>(const TensorT<double>&,
                                                  const TargetGrid<double>&,
                                                  const std::vector<std::pair<float, float>>&,
                                                  const YoloLossParams&);
template void update_objectness_targets<float>(TargetGrid<float>&, const TensorT<float>&,
                                               const std::vector<std::pair<float, float>>&);
template void update_objectness_targets<double>(TargetGrid<double>&, const TensorT<double>&,
                                                const std::vector<std::pair<float, float>>&);

}  // namespace pollen
