#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pollen/detector.hpp"
#include "pollen/loss.hpp"
#include "pollen/ops.hpp"
#include "pollen/optim.hpp"
#include "pollen/rng.hpp"

using namespace pollen;

namespace {

const std::vector<std::pair<float, float>> kAnchors = {{0.8f, 0.8f}, {1.6f, 1.0f}, {2.5f, 2.5f}};

Tensor suppressed_raw(int64_t grid, int64_t anchors, int classes) {
    auto raw = Tensor::zeros({grid, grid, anchors, 5 + classes});
    for (int64_t i = 0; i < raw.numel(); i += 5 + classes) raw.data()[i + 4] = -1000.f;
    return raw;
}

}  // namespace

TEST_CASE("assign_targets: center grain lands in the middle cell") {
    GroundTruth gt;
    gt.box = {208, 208, 64, 64};
    auto tg = assign_targets<float>({gt}, kAnchors, 13, 416, 3);
    int64_t found = -1;
    for (int64_t slot = 0; slot < tg.slots(); ++slot)
        if (tg.obj_mask[slot]) found = slot;
    REQUIRE(found >= 0);
    const int64_t cell = found / 3;
    CHECK(cell / 13 == 6);
    CHECK(cell % 13 == 6);
    CHECK(tg.noobj_mask[found] == 0);
}

TEST_CASE("assign_targets: anchor-shaped box at a cell center has zero transforms") {
    // cell centers sit at (j+0.5)*32; anchor 1 is 1.6 x 1.0 cells
    GroundTruth gt;
    gt.box = {(3 + 0.5) * 32, (5 + 0.5) * 32, 1.6 * 32, 1.0 * 32};
    auto tg = assign_targets<float>({gt}, kAnchors, 13, 416, 3);
    const int64_t slot = ((5 * 13 + 3) * 3) + 1;
    REQUIRE(tg.obj_mask[slot] == 1);
    CHECK(tg.tx[slot] == doctest::Approx(0.f).epsilon(1e-4));
    CHECK(tg.ty[slot] == doctest::Approx(0.f).epsilon(1e-4));
    CHECK(tg.tw[slot] == doctest::Approx(0.f).epsilon(1e-4));
    CHECK(tg.th[slot] == doctest::Approx(0.f).epsilon(1e-4));
}

TEST_CASE("assign_targets rejects centers outside the frame") {
    GroundTruth gt;
    gt.box = {500, 200, 10, 10};
    CHECK_THROWS_AS(assign_targets<float>({gt}, kAnchors, 13, 416, 3), ValueError);
}

TEST_CASE("assign/decode round trip reproduces gt boxes within 1e-4 px") {
    Rng rng(77);
    DetectorConfig cfg;
    cfg.num_anchors = 3;
    cfg.anchors = kAnchors;
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<GroundTruth> gts;
        const int n = static_cast<int>(rng.uniform_int(1, 6));
        for (int i = 0; i < n; ++i) {
            GroundTruth gt;
            gt.box.w = rng.uniform(10, 90);
            gt.box.h = rng.uniform(10, 90);
            gt.box.cx = rng.uniform(gt.box.w / 2, 416 - gt.box.w / 2);
            gt.box.cy = rng.uniform(gt.box.h / 2, 416 - gt.box.h / 2);
            gt.class_id = static_cast<int>(rng.uniform_int(0, 2));
            gts.push_back(gt);
        }
        auto tg = assign_targets<float>(gts, kAnchors, 13, 416, 3);

        // write the target transforms into a raw grid with confident objectness
        auto raw = suppressed_raw(13, 3, 3);
        for (int64_t slot = 0; slot < tg.slots(); ++slot) {
            if (!tg.obj_mask[slot]) continue;
            float* p = raw.raw() + slot * 8;
            p[0] = tg.tx[slot];
            p[1] = tg.ty[slot];
            p[2] = tg.tw[slot];
            p[3] = tg.th[slot];
            p[4] = 100.f;
            p[5 + tg.class_id[slot]] = 10.f;
        }
        const auto dets = decode(raw, cfg, 0.5);
        REQUIRE(dets.size() == gts.size());
        for (const auto& gt : gts) {
            bool matched = false;
            for (const auto& d : dets) {
                if (std::abs(d.box.cx - gt.box.cx) <= 1e-3 &&
                    std::abs(d.box.cy - gt.box.cy) <= 1e-3 &&
                    std::abs(d.box.w - gt.box.w) <= 1e-3 &&
                    std::abs(d.box.h - gt.box.h) <= 1e-3 && d.class_id == gt.class_id) {
                    matched = true;
                    break;
                }
            }
            CHECK(matched);
        }
    }
}

TEST_CASE("yolo_loss: no gt and fully suppressed objectness gives exactly zero") {
    auto tg = assign_targets<float>({}, kAnchors, 4, 128, 3);
    auto raw = suppressed_raw(4, 3, 3);
    raw.set_requires_grad(true);
    auto res = yolo_loss<float>(raw, tg, kAnchors, {});
    CHECK(res.breakdown.total == 0.0);
    CHECK(res.breakdown.coord == 0.0);
    CHECK(res.breakdown.obj == 0.0);
    CHECK(res.breakdown.noobj == 0.0);
    CHECK(res.breakdown.class_term == 0.0);
}

TEST_CASE("yolo_loss: perfect predictions zero the coord and class terms") {
    GroundTruth gt;
    gt.box = {(6 + 0.5) * 32, (6 + 0.5) * 32, 0.8 * 32, 0.8 * 32};  // equals anchor 0
    auto tg = assign_targets<float>({gt}, kAnchors, 13, 416, 3);
    auto raw = suppressed_raw(13, 3, 3);
    const int64_t slot = ((6 * 13 + 6) * 3) + 0;
    float* p = raw.raw() + slot * 8;
    p[0] = p[1] = p[2] = p[3] = 0.f;
    p[4] = 100.f;   // sigma -> 1, and IoU of a perfect box is 1
    p[5] = 50.f;    // class 0 probability -> 1
    auto res = yolo_loss<float>(raw, tg, kAnchors, {});
    CHECK(res.breakdown.coord == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(res.breakdown.class_term == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(res.breakdown.obj == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(res.breakdown.total >= 0.0);
}

TEST_CASE("yolo_loss terms are non-negative and total is their sum") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<GroundTruth> gts;
        const int n = static_cast<int>(rng.uniform_int(0, 4));
        for (int i = 0; i < n; ++i) {
            GroundTruth gt;
            gt.box.w = rng.uniform(8, 100);
            gt.box.h = rng.uniform(8, 100);
            gt.box.cx = rng.uniform(gt.box.w / 2, 416 - gt.box.w / 2);
            gt.box.cy = rng.uniform(gt.box.h / 2, 416 - gt.box.h / 2);
            gt.class_id = static_cast<int>(rng.uniform_int(0, 2));
            gts.push_back(gt);
        }
        auto tg = assign_targets<float>(gts, kAnchors, 13, 416, 3);
        auto raw = Tensor::randn({13, 13, 3, 8}, rng, 1.5f);
        auto res = yolo_loss<float>(raw, tg, kAnchors, {});
        CHECK(res.breakdown.coord >= 0.0);
        CHECK(res.breakdown.obj >= 0.0);
        CHECK(res.breakdown.noobj >= 0.0);
        CHECK(res.breakdown.class_term >= 0.0);
        CHECK(res.breakdown.total ==
              doctest::Approx(res.breakdown.coord + res.breakdown.obj + res.breakdown.noobj +
                              res.breakdown.class_term));
    }
}

TEST_CASE("obj_mask and noobj_mask stay disjoint") {
    Rng rng(32);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<GroundTruth> gts;
        for (int i = 0; i < 5; ++i) {
            GroundTruth gt;
            gt.box.w = rng.uniform(20, 120);
            gt.box.h = rng.uniform(20, 120);
            gt.box.cx = rng.uniform(gt.box.w / 2, 416 - gt.box.w / 2);
            gt.box.cy = rng.uniform(gt.box.h / 2, 416 - gt.box.h / 2);
            gt.class_id = static_cast<int>(rng.uniform_int(0, 2));
            gts.push_back(gt);
        }
        auto tg = assign_targets<float>(gts, kAnchors, 13, 416, 3);
        int responsible = 0;
        for (int64_t slot = 0; slot < tg.slots(); ++slot) {
            CHECK((tg.obj_mask[slot] & tg.noobj_mask[slot]) == 0);
            responsible += tg.obj_mask[slot];
        }
        CHECK(responsible == 5);
    }
}

TEST_CASE("gradient descent on the loss overfits a single grid") {
    // 200 steps on one fixed slide's targets must cut the loss by >= 90%.
    Rng rng(90);
    std::vector<GroundTruth> gts;
    for (int i = 0; i < 3; ++i) {
        GroundTruth gt;
        gt.box.w = rng.uniform(20, 80);
        gt.box.h = rng.uniform(20, 80);
        gt.box.cx = rng.uniform(gt.box.w / 2, 416 - gt.box.w / 2);
        gt.box.cy = rng.uniform(gt.box.h / 2, 416 - gt.box.h / 2);
        gt.class_id = i;
        gts.push_back(gt);
    }
    auto tg = assign_targets<float>(gts, kAnchors, 13, 416, 3);
    auto raw = Tensor::randn({13, 13, 3, 8}, rng, 0.5f, true);
    std::vector<Tensor> params = {raw};
    OptimizerState<float> opt;
    opt.rule = OptimRule::adam;
    opt.lr = 0.05f;
    opt.init(params);
    double initial = -1;
    double final_loss = 0;
    for (int step = 0; step < 200; ++step) {
        zero_grads(params);
        update_objectness_targets(tg, raw, kAnchors);
        auto res = yolo_loss<float>(raw, tg, kAnchors, {});
        if (step == 0) initial = res.breakdown.total;
        final_loss = res.breakdown.total;
        res.total.backward();
        opt.step(params);
    }
    CHECK(final_loss <= 0.1 * initial);
}

TEST_CASE("kmeans_anchors: identical boxes collapse to that shape") {
    std::vector<BoundingBox> boxes(12, BoundingBox{0, 0, 3.0, 2.0});
    auto anchors = kmeans_anchors(boxes, 1, 5);
    REQUIRE(anchors.size() == 1);
    CHECK(anchors[0].first == doctest::Approx(3.0));
    CHECK(anchors[0].second == doctest::Approx(2.0));
    CHECK_THROWS_AS(kmeans_anchors(boxes, 2, 5), ValueError);  // k > distinct shapes
}

TEST_CASE("kmeans_anchors separates two size clusters") {
    Rng rng(8);
    std::vector<BoundingBox> boxes;
    for (int i = 0; i < 30; ++i)
        boxes.push_back({0, 0, rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1)});
    for (int i = 0; i < 30; ++i)
        boxes.push_back({0, 0, rng.uniform(3.8, 4.2), rng.uniform(3.8, 4.2)});
    auto anchors = kmeans_anchors(boxes, 2, 17);
    REQUIRE(anchors.size() == 2);
    CHECK(anchors[0].first == doctest::Approx(1.0).epsilon(0.1));
    CHECK(anchors[1].first == doctest::Approx(4.0).epsilon(0.1));
    // every box must sit closer (1-IoU) to its own cluster's centroid
    for (const auto& b : boxes) {
        const double d0 = 1 - iou_wh(b.w, b.h, anchors[0].first, anchors[0].second);
        const double d1 = 1 - iou_wh(b.w, b.h, anchors[1].first, anchors[1].second);
        if (b.w < 2)
            CHECK(d0 < d1);
        else
            CHECK(d1 < d0);
    }
}

TEST_CASE("kmeans objective never increases between iterations") {
    Rng rng(9);
    std::vector<BoundingBox> boxes;
    for (int i = 0; i < 200; ++i)
        boxes.push_back({0, 0, rng.uniform(0.3, 5.0), rng.uniform(0.3, 5.0)});
    std::vector<double> objectives;
    auto anchors = kmeans_anchors(boxes, 10, 4242, &objectives);
    CHECK(anchors.size() == 10);
    REQUIRE(objectives.size() >= 2);
    for (size_t i = 1; i < objectives.size(); ++i) CHECK(objectives[i] <= objectives[i - 1] + 1e-12);
    // sorted by area
    for (size_t i = 1; i < anchors.size(); ++i)
        CHECK(anchors[i].first * anchors[i].second >=
              anchors[i - 1].first * anchors[i - 1].second);
    // determinism
    auto again = kmeans_anchors(boxes, 10, 4242);
    CHECK(again == anchors);
}
