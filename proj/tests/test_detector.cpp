#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pollen/boxes.hpp"
#include "pollen/detector.hpp"
#include "pollen/rng.hpp"

using namespace pollen;

namespace {

// Independent quadratic reference for the greedy suppression.
std::vector<Detection> nms_reference(std::vector<Detection> dets, double threshold) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
        return a.box.cy < b.box.cy;
    });
    std::vector<bool> dead(dets.size(), false);
    std::vector<Detection> kept;
    for (size_t i = 0; i < dets.size(); ++i) {
        if (dead[i]) continue;
        kept.push_back(dets[i]);
        for (size_t j = i + 1; j < dets.size(); ++j) {
            if (dead[j] || dets[j].class_id != dets[i].class_id) continue;
            if (iou(dets[i].box, dets[j].box) > threshold) dead[j] = true;
        }
    }
    return kept;
}

// Pixel-count oracle for IoU at a fine sampling resolution. Boxes are
// axis-aligned, so the 2-D count factorizes into per-axis sample counts;
// this keeps the grid fine enough that the oracle itself is trustworthy.
double iou_raster(const BoundingBox& a, const BoundingBox& b, int64_t res = 200000) {
    const double x0 = std::min(a.left(), b.left()), x1 = std::max(a.right(), b.right());
    const double y0 = std::min(a.top(), b.top()), y1 = std::max(a.bottom(), b.bottom());
    auto count_axis = [res](double lo, double hi, double from, double to) {
        int64_t n = 0;
        const double step = (hi - lo) / static_cast<double>(res);
        for (int64_t i = 0; i < res; ++i) {
            const double v = lo + (static_cast<double>(i) + 0.5) * step;
            n += (v >= from && v <= to);
        }
        return n;
    };
    const int64_t ax = count_axis(x0, x1, a.left(), a.right());
    const int64_t ay = count_axis(y0, y1, a.top(), a.bottom());
    const int64_t bx = count_axis(x0, x1, b.left(), b.right());
    const int64_t by = count_axis(y0, y1, b.top(), b.bottom());
    const int64_t ix = count_axis(x0, x1, std::max(a.left(), b.left()), std::min(a.right(), b.right()));
    const int64_t iy = count_axis(y0, y1, std::max(a.top(), b.top()), std::min(a.bottom(), b.bottom()));
    const int64_t inter = ix * iy;
    const int64_t uni = ax * ay + bx * by - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

BoundingBox random_box(Rng& rng, double extent = 100) {
    BoundingBox b;
    b.w = rng.uniform(2, extent / 2);
    b.h = rng.uniform(2, extent / 2);
    b.cx = rng.uniform(b.w / 2, extent - b.w / 2);
    b.cy = rng.uniform(b.h / 2, extent - b.h / 2);
    return b;
}

Tensor empty_raw(const DetectorConfig& cfg, float objectness_logit = -1000.f) {
    auto raw = Tensor::zeros({cfg.grid(), cfg.grid(), cfg.num_anchors, 5 + cfg.num_classes});
    for (int64_t i = 0; i < raw.numel(); i += 5 + cfg.num_classes)
        raw.data()[i + 4] = objectness_logit;
    return raw;
}

}  // namespace

TEST_CASE("iou basics") {
    BoundingBox a{5, 5, 4, 4};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    BoundingBox b{50, 50, 4, 4};
    CHECK(iou(a, b) == doctest::Approx(0.0));
    // corner boxes (0,0)-(2,2) and (1,1)-(3,3): intersection 1, union 7
    BoundingBox c{1, 1, 2, 2}, d{2, 2, 2, 2};
    CHECK(iou(c, d) == doctest::Approx(1.0 / 7.0).epsilon(1e-9));
}

TEST_CASE("iou matches the rasterization oracle within 1e-3 on 100 pairs") {
    Rng rng(41);
    for (int i = 0; i < 100; ++i) {
        const auto a = random_box(rng);
        const auto b = random_box(rng);
        CHECK(std::abs(iou(a, b) - iou_raster(a, b)) <= 1e-3);
        CHECK(iou(a, b) == doctest::Approx(iou(b, a)));  // symmetry
        CHECK(iou(a, b) >= 0.0);
        CHECK(iou(a, b) <= 1.0);
    }
}

TEST_CASE("nms keeps the best of two identical boxes, per class") {
    Detection d1{{10, 10, 8, 8}, 0, 0.9, "img"};
    Detection d2{{10, 10, 8, 8}, 0, 0.8, "img"};
    auto kept = nms({d1, d2}, 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].confidence == doctest::Approx(0.9));

    Detection d3{{10, 10, 8, 8}, 1, 0.8, "img"};
    kept = nms({d1, d3}, 0.5);
    CHECK(kept.size() == 2);  // different classes never suppress each other
}

TEST_CASE("nms equals the quadratic reference on random 50-box sets") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Detection> dets;
        for (int i = 0; i < 50; ++i) {
            Detection d;
            d.box = random_box(rng, 60);
            d.class_id = static_cast<int>(rng.uniform_int(0, 2));
            d.confidence = rng.uniform(0.01, 1.0);
            dets.push_back(d);
        }
        const auto got = nms(dets, 0.45);
        const auto want = nms_reference(dets, 0.45);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].confidence == want[i].confidence);
            CHECK(got[i].class_id == want[i].class_id);
            CHECK(got[i].box.cx == want[i].box.cx);
        }
        // idempotence and subset property
        const auto twice = nms(got, 0.45);
        CHECK(twice.size() == got.size());
        for (const auto& k : got) {
            CHECK(std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
                return d.box.cx == k.box.cx && d.confidence == k.confidence;
            }));
        }
    }
}

TEST_CASE("build_network reproduces the canonical layer shapes") {
    DetectorConfig cfg;  // defaults: 416, B=10, C=3, full width
    Rng rng(7);
    auto model = build_network<float>(cfg, rng);

    // first conv parameter count: 3*3*3*32 kernel + 32 bias
    CHECK(model.trunk[0].kernel.numel() + model.trunk[0].bias.numel() == 896);

    const auto rows = expected_output_shapes(cfg);
    const std::vector<std::vector<int64_t>> table_head = {
        {416, 416, 32}, {208, 208, 32}, {208, 208, 64}, {104, 104, 64},
        {104, 104, 128}, {104, 104, 64}, {104, 104, 128}, {52, 52, 128},
        {52, 52, 256}, {52, 52, 128}, {52, 52, 256}, {26, 26, 256},
        {26, 26, 512}, {26, 26, 256}, {26, 26, 512}, {13, 13, 512},
        {13, 13, 1024}, {13, 13, 512}, {13, 13, 1024}, {13, 13, 512},
        {13, 13, 1024}, {13, 13, 1024}, {13, 13, 1024},
    };
    REQUIRE(rows.size() == table_head.size() + 6);
    for (size_t i = 0; i < table_head.size(); ++i) CHECK(rows[i] == table_head[i]);
    CHECK(rows[23] == std::vector<int64_t>{26, 26, 64});        // skip conv
    CHECK(rows[24] == std::vector<int64_t>{13, 13, 256});       // space_to_depth
    CHECK(rows[25] == std::vector<int64_t>{13, 13, 1280});      // concat
    CHECK(rows[26] == std::vector<int64_t>{13, 13, 1024});
    CHECK(rows[27] == std::vector<int64_t>{13, 13, 80});        // head: B*(5+C)
    CHECK(rows[28] == std::vector<int64_t>{13, 13, 10, 8});
}

TEST_CASE("invalid configs are rejected") {
    DetectorConfig cfg;
    cfg.num_anchors = 0;
    Rng rng(1);
    CHECK_THROWS_AS(build_network<float>(cfg, rng), ValueError);
    cfg.num_anchors = 10;
    cfg.num_classes = -1;
    CHECK_THROWS_AS(build_network<float>(cfg, rng), ValueError);
}

TEST_CASE("forward audit matches the expected shape rows on a reduced net") {
    DetectorConfig cfg;
    cfg.input_extent = 64;
    cfg.num_anchors = 4;
    cfg.width_mult = 0.05f;
    Rng rng(7);
    auto model = build_network<float>(cfg, rng);
    NoGradGuard ng;
    ShapeAudit audit;
    Rng img_rng(9);
    auto img = Tensor::randn({64, 64, 3}, img_rng, 0.25f);
    auto raw = forward(model, img, &audit);
    const auto rows = expected_output_shapes(cfg);
    REQUIRE(audit.entries.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) CHECK(audit.entries[i].second == rows[i]);
    CHECK(raw.shape() == std::vector<int64_t>{2, 2, 4, 8});
    CHECK(raw.all_finite());

    // determinism in infer mode
    auto raw2 = forward(model, img);
    CHECK(raw.data() == raw2.data());

    CHECK_THROWS_AS(forward(model, Tensor::zeros({32, 32, 3})), ShapeError);
}

TEST_CASE("decode geometry") {
    DetectorConfig cfg;
    cfg.input_extent = 416;
    cfg.num_anchors = 2;
    cfg.anchors = {{1.0f, 1.0f}, {2.0f, 3.0f}};

    auto raw = empty_raw(cfg);
    // cell (0,0), anchor 0: all-zero transforms, confident objectness
    float* slot = raw.raw();
    slot[0] = 0.f;
    slot[1] = 0.f;
    slot[2] = 0.f;
    slot[3] = 0.f;
    slot[4] = 10.f;
    auto dets = decode(raw, cfg, 0.2);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].box.cx == doctest::Approx(16.0));  // (sigma(0)+0)*32
    CHECK(dets[0].box.cy == doctest::Approx(16.0));
    CHECK(dets[0].box.w == doctest::Approx(32.0));   // anchor width 1 cell, exp(0)
    CHECK(dets[0].box.h == doctest::Approx(32.0));
    // uniform class logits over 3 classes: probability 1/3 each
    CHECK(dets[0].confidence == doctest::Approx(ops::sigmoid_scalar(10.0) / 3.0));
    CHECK(dets[0].class_id == 0);  // tie broken toward the lowest index
}

TEST_CASE("decode: suppressed objectness yields an empty list at any threshold") {
    DetectorConfig cfg;
    cfg.num_anchors = 3;
    cfg.anchors = {{1, 1}, {2, 2}, {3, 3}};
    auto raw = empty_raw(cfg, -1000.f);
    CHECK(decode(raw, cfg, 1e-6).empty());
}

TEST_CASE("decode centers stay inside the frame, extents positive") {
    DetectorConfig cfg;
    cfg.num_anchors = 3;
    cfg.anchors = {{0.5f, 0.7f}, {1.5f, 1.2f}, {3.0f, 2.0f}};
    Rng rng(55);
    auto raw = Tensor::randn({13, 13, 3, 8}, rng, 2.0f);
    for (const auto& d : decode(raw, cfg, 0.0)) {
        CHECK(d.box.cx >= 0.0);
        CHECK(d.box.cx <= 416.0);
        CHECK(d.box.cy >= 0.0);
        CHECK(d.box.cy <= 416.0);
        CHECK(d.box.w > 0.0);
        CHECK(d.box.h > 0.0);
        CHECK(d.confidence >= 0.0);
        CHECK(d.confidence <= 1.0);
    }
}

TEST_CASE("weights round-trip bit-identically and reject corruption") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "pollen_test_weights";
    fs::create_directories(dir);
    const std::string path = (dir / "model.plnw").string();

    DetectorConfig cfg;
    cfg.input_extent = 64;
    cfg.num_anchors = 3;
    cfg.width_mult = 0.05f;
    cfg.anchors = {{0.5f, 0.5f}, {1.f, 2.f}, {2.5f, 2.5f}};
    Rng rng(13);
    auto model = build_network<float>(cfg, rng);

    NoGradGuard ng;
    Rng img_rng(5);
    auto img = Tensor::randn({64, 64, 3}, img_rng, 0.3f);
    const auto before = forward(model, img).data();

    save_weights(model, path);
    auto loaded = load_weights(path);
    CHECK(loaded.config.input_extent == 64);
    CHECK(loaded.config.num_anchors == 3);
    CHECK(loaded.config.anchors == cfg.anchors);
    CHECK(loaded.config.class_names == cfg.class_names);
    const auto after = forward(loaded, img).data();
    CHECK(before == after);

    // truncation -> corrupt-file error, not a crash
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    {
        std::ofstream out(path + ".trunc", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_weights(path + ".trunc"), IoError);

    // flipped payload byte -> checksum error with offset
    {
        auto corrupt = bytes;
        corrupt[corrupt.size() / 2] ^= 0x5a;
        std::ofstream out(path + ".bad", std::ios::binary);
        out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    }
    CHECK_THROWS_WITH_AS(load_weights(path + ".bad"),
                         doctest::Contains("checksum mismatch at offset"), IoError);

    // unsupported version -> explicit version error
    {
        auto versioned = bytes;
        versioned[4] = 99;
        std::ofstream out(path + ".ver", std::ios::binary);
        out.write(versioned.data(), static_cast<std::streamsize>(versioned.size()));
    }
    CHECK_THROWS_WITH_AS(load_weights(path + ".ver"), doctest::Contains("version"), IoError);

    // wrong magic
    {
        auto bad = bytes;
        bad[0] = 'X';
        std::ofstream out(path + ".magic", std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    CHECK_THROWS_WITH_AS(load_weights(path + ".magic"), doctest::Contains("magic"), IoError);

    fs::remove_all(dir);
}
