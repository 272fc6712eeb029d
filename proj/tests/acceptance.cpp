// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// fail. Criterion 4 trains the detector for real and dominates the runtime.
//
//   acceptance [--only N[,M...]] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pollen/auth.hpp"
#include "pollen/detector.hpp"
#include "pollen/gradcheck.hpp"
#include "pollen/image.hpp"
#include "pollen/metrics.hpp"
#include "pollen/synth.hpp"
#include "pollen/threads.hpp"
#include "pollen/train.hpp"

#ifndef POLLEN_CLI_PATH
#define POLLEN_CLI_PATH "pollen"
#endif

using namespace pollen;
namespace fs = std::filesystem;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

struct Criterion {
    int number;
    std::string name;
    bool (*run)(const fs::path& work, std::string& detail);
};

// --------------------------------------------------------------------- 1
bool shape_conformance(const fs::path&, std::string& detail) {
    const double t0 = now_s();
    DetectorConfig cfg;  // canonical: 416, B=10, C=3, full width
    Rng rng(1);
    auto model = build_network<float>(cfg, rng);
    model.training = false;

    NoGradGuard ng;
    Rng img_rng(2);
    auto image = Tensor::randn({416, 416, 3}, img_rng, 0.2f);
    ShapeAudit audit;
    auto raw = forward(model, image, &audit);

    const std::vector<std::vector<int64_t>> table = {
        {416, 416, 32}, {208, 208, 32}, {208, 208, 64}, {104, 104, 64},
        {104, 104, 128}, {104, 104, 64}, {104, 104, 128}, {52, 52, 128},
        {52, 52, 256}, {52, 52, 128}, {52, 52, 256}, {26, 26, 256},
        {26, 26, 512}, {26, 26, 256}, {26, 26, 512}, {13, 13, 512},
        {13, 13, 1024}, {13, 13, 512}, {13, 13, 1024}, {13, 13, 512},
        {13, 13, 1024}, {13, 13, 1024}, {13, 13, 1024},
        {26, 26, 64},      // skip 1x1 conv
        {13, 13, 256},     // reorg to depth
        {13, 13, 1280},    // concat
        {13, 13, 1024},
    };
    if (audit.entries.size() != table.size() + 2) {
        detail = "unexpected audit length " + std::to_string(audit.entries.size());
        return false;
    }
    for (size_t i = 0; i < table.size(); ++i) {
        if (audit.entries[i].second != table[i]) {
            detail = "row " + std::to_string(i) + " diverges from the reference stack";
            return false;
        }
    }
    // head: B*(5+C) = 80 channels, viewed as 13x13x10x8. The reference table
    // prints 60 -> 13x13x10x6, which cannot carry 4 box + 1 objectness + 3
    // class values; the 8-vector head is the documented deviation.
    const std::vector<int64_t> head = {13, 13, 80};
    const std::vector<int64_t> reshape = {13, 13, 10, 8};
    if (audit.entries[table.size()].second != head ||
        audit.entries[table.size() + 1].second != reshape || raw.shape() != reshape) {
        detail = "head/reshape shapes diverge";
        return false;
    }
    const double dt = now_s() - t0;
    std::ostringstream os;
    os << "all 27 stack rows + head 13x13x80 (10 anchors x 8; table's 10x6 reshape cannot hold "
          "3 classes, deviation logged), "
       << std::fixed << dt << "s";
    detail = os.str();
    return dt < 10.0;
}

// --------------------------------------------------------------------- 2
bool gradient_correctness(const fs::path&, std::string& detail) {
    const double t0 = now_s();
    const auto results = run_gradcheck_suite(20260808ull, 20, true);
    double worst = 0;
    std::string worst_name;
    for (const auto& r : results) {
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.name;
        }
    }
    const double dt = now_s() - t0;
    std::ostringstream os;
    os << results.size() << " checks, worst " << worst_name << " " << std::scientific << worst
       << ", " << std::fixed << dt << "s";
    detail = os.str();
    return worst <= kGradCheckTolerance && dt < 300.0;
}

// --------------------------------------------------------------------- 3
std::vector<Detection> nms_reference(std::vector<Detection> dets, double threshold) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
        return a.box.cy < b.box.cy;
    });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool drop = false;
        for (const auto& k : kept)
            if (k.class_id == d.class_id && iou(k.box, d.box) > threshold) drop = true;
        if (!drop) kept.push_back(d);
    }
    return kept;
}

double iou_raster(const BoundingBox& a, const BoundingBox& b, int64_t res = 200000) {
    const double x0 = std::min(a.left(), b.left()), x1 = std::max(a.right(), b.right());
    const double y0 = std::min(a.top(), b.top()), y1 = std::max(a.bottom(), b.bottom());
    auto count = [res](double lo, double hi, double from, double to) {
        int64_t n = 0;
        const double step = (hi - lo) / static_cast<double>(res);
        for (int64_t i = 0; i < res; ++i) {
            const double v = lo + (static_cast<double>(i) + 0.5) * step;
            n += (v >= from && v <= to);
        }
        return n;
    };
    const int64_t ax = count(x0, x1, a.left(), a.right());
    const int64_t ay = count(y0, y1, a.top(), a.bottom());
    const int64_t bx = count(x0, x1, b.left(), b.right());
    const int64_t by = count(y0, y1, b.top(), b.bottom());
    const int64_t ix = count(x0, x1, std::max(a.left(), b.left()),
                             std::min(a.right(), b.right()));
    const int64_t iy = count(y0, y1, std::max(a.top(), b.top()),
                             std::min(a.bottom(), b.bottom()));
    const int64_t inter = ix * iy;
    const int64_t uni = ax * ay + bx * by - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

bool oracle_equivalence(const fs::path&, std::string& detail) {
    const double t0 = now_s();
    Rng rng(333);

    // conv + pool against the serial nested-loop oracles
    float conv_worst = 0, pool_worst = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const int64_t h = rng.uniform_int(2, 16), w = rng.uniform_int(2, 16);
        const int64_t cin = rng.uniform_int(1, 8), cout = rng.uniform_int(1, 8);
        const int64_t k = rng.uniform() < 0.5 ? 1 : 3;
        std::vector<float> in(static_cast<size_t>(h * w * cin)), ker(k * k * cin * cout),
            bias(cout);
        for (auto& v : in) v = static_cast<float>(rng.uniform(-1, 1));
        for (auto& v : ker) v = static_cast<float>(rng.uniform(-1, 1));
        for (auto& v : bias) v = static_cast<float>(rng.uniform(-1, 1));
        std::vector<float> got(static_cast<size_t>(h * w * cout)), want(got.size());
        kern::conv2d_forward(in.data(), h, w, cin, ker.data(), bias.data(), k, cout, 1,
                             kern::Pad::same, got.data());
        kern::ref::conv2d_forward(in.data(), h, w, cin, ker.data(), bias.data(), k, cout, 1,
                                  kern::Pad::same, want.data());
        for (size_t i = 0; i < got.size(); ++i)
            conv_worst = std::max(conv_worst, std::abs(got[i] - want[i]));

        if (h % 2 == 0 && w % 2 == 0) {
            std::vector<float> pooled(static_cast<size_t>(h / 2 * (w / 2) * cin)),
                pooled_ref(pooled.size());
            std::vector<int32_t> argmax(pooled.size());
            kern::maxpool2_forward(in.data(), h, w, cin, pooled.data(), argmax.data());
            kern::ref::maxpool2_forward(in.data(), h, w, cin, pooled_ref.data());
            for (size_t i = 0; i < pooled.size(); ++i)
                pool_worst = std::max(pool_worst, std::abs(pooled[i] - pooled_ref[i]));
        }
    }
    if (conv_worst > 1e-5f || pool_worst > 1e-5f) {
        detail = "kernel deviation conv " + std::to_string(conv_worst) + " pool " +
                 std::to_string(pool_worst);
        return false;
    }

    // nms equality on 100 random 50-box instances
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Detection> dets;
        for (int i = 0; i < 50; ++i) {
            Detection d;
            d.box.w = rng.uniform(4, 40);
            d.box.h = rng.uniform(4, 40);
            d.box.cx = rng.uniform(d.box.w / 2, 100 - d.box.w / 2);
            d.box.cy = rng.uniform(d.box.h / 2, 100 - d.box.h / 2);
            d.class_id = static_cast<int>(rng.uniform_int(0, 2));
            d.confidence = rng.uniform(0.01, 1.0);
            dets.push_back(d);
        }
        const auto got = nms(dets, 0.45);
        const auto want = nms_reference(dets, 0.45);
        if (got.size() != want.size()) {
            detail = "nms survivor count mismatch on trial " + std::to_string(trial);
            return false;
        }
        for (size_t i = 0; i < got.size(); ++i) {
            if (got[i].confidence != want[i].confidence || got[i].class_id != want[i].class_id ||
                got[i].box.cx != want[i].box.cx) {
                detail = "nms survivor mismatch on trial " + std::to_string(trial);
                return false;
            }
        }
    }

    // iou against the rasterization count on 100 random pairs
    double iou_worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto rand_box = [&rng]() {
            BoundingBox b;
            b.w = rng.uniform(2, 50);
            b.h = rng.uniform(2, 50);
            b.cx = rng.uniform(b.w / 2, 100 - b.w / 2);
            b.cy = rng.uniform(b.h / 2, 100 - b.h / 2);
            return b;
        };
        const auto a = rand_box(), b = rand_box();
        iou_worst = std::max(iou_worst, std::abs(iou(a, b) - iou_raster(a, b)));
    }
    const double dt = now_s() - t0;
    std::ostringstream os;
    os << "conv dev " << std::scientific << conv_worst << ", pool dev " << pool_worst
       << ", nms exact on 100x50, iou dev " << iou_worst << std::fixed << ", " << dt << "s";
    detail = os.str();
    return iou_worst <= 1e-3 && dt < 120.0;
}

// --------------------------------------------------------------------- 4
bool table2_reproduction(const fs::path& work, std::string& detail) {
    const double t0 = now_s();
    const fs::path train_dir = work / "table2_train";
    const fs::path held_dir = work / "table2_heldout";

    SlideSpec spec;  // canonical 1080px protocol
    if (!fs::exists(train_dir / "manifest.json")) gen_dataset(spec, 200, 1001, train_dir.string());
    if (!fs::exists(held_dir / "manifest.json")) gen_dataset(spec, 50, 2002, held_dir.string());

    TrainConfig tc;
    tc.data_dir = train_dir.string();
    tc.out_weights = (work / "table2.plnw").string();
    tc.log_csv = (work / "table2_train.csv").string();
    tc.epochs = POLLEN_ACCEPT_EPOCHS;
    tc.batch_size = 1;
    tc.lr = 2e-3f;
    tc.lambda_noobj = 0.25f;
    tc.input_extent = 416;
    tc.width_mult = POLLEN_ACCEPT_WIDTH;
    tc.num_anchors = 10;
    tc.seed = 7;
    const auto train_result = train_detector(tc, &std::cout);

    auto model = load_weights(train_result.final_path);
    model.training = false;
    const int64_t extent = model.config.input_extent;

    const auto manifest = load_manifest((held_dir / "manifest.json").string());
    const auto annotations =
        load_annotations((held_dir / "annotations.jsonl").string(), manifest.extent);

    std::vector<Detection> dets;
    {
        NoGradGuard ng;
        for (const auto& entry : manifest.images) {
            ImageU8 img = read_image((held_dir / entry.file).string());
            const double sx = static_cast<double>(img.width) / static_cast<double>(extent);
            const double sy = static_cast<double>(img.height) / static_cast<double>(extent);
            img = resize_area(img, extent, extent);
            auto raw = forward(model, image_to_tensor(img));
            auto d = nms(decode(raw, model.config, 0.5), 0.45);
            scale_detections(d, sx, sy);
            for (auto& det : d) det.image_id = entry.image_id;
            dets.insert(dets.end(), d.begin(), d.end());
        }
    }
    const auto result = evaluate_detections(annotations, dets, 0.5, 13,
                                            static_cast<double>(manifest.extent));
    const double dt = now_s() - t0;
    const auto& m = result.overall;
    std::ostringstream os;
    os << "precision " << std::fixed << m.precision << " (>=0.663), sensitivity "
       << m.sensitivity << " (>=0.914), specificity " << m.specificity
       << " (>=0.761), f1 " << m.f1 << " (>=0.769), " << dt << "s (<3600)";
    detail = os.str();
    return m.precision >= 0.663 && m.sensitivity >= 0.914 && m.specificity >= 0.761 &&
           m.f1 >= 0.769 && dt < 3600.0;
}

// --------------------------------------------------------------------- 5
bool auth_reproduction(const fs::path&, std::string& detail) {
    const double t0 = now_s();
    Rng rng(55);
    SlideSpec base;
    base = base.scaled_to(320);

    auto sample_features = [&](const HoneyProfile& profile) {
        const auto anns = profile_sample_annotations(profile, 10, base, rng);
        return features_from_annotations(anns);
    };

    std::vector<AuthSample> train_set;
    for (int i = 0; i < 5; ++i)
        train_set.push_back({sample_features(HoneyProfile::eucalyptus()), "eucalyptus"});
    for (int i = 0; i < 5; ++i)
        train_set.push_back({sample_features(HoneyProfile::manuka()), "manuka"});

    AuthConfig cfg;
    cfg.seed = 5;
    cfg.positive_label = "eucalyptus";
    const auto model = train_auth(train_set, cfg);

    int train_correct = 0;
    for (const auto& s : train_set)
        train_correct += authenticate(model, s.features).decision == s.label;

    int fresh_correct = 0;
    for (int i = 0; i < 10; ++i) {
        fresh_correct += authenticate(model, sample_features(HoneyProfile::eucalyptus()))
                             .decision == "eucalyptus";
        fresh_correct +=
            authenticate(model, sample_features(HoneyProfile::manuka())).decision == "manuka";
    }
    const double dt = now_s() - t0;
    std::ostringstream os;
    os << "training samples " << train_correct << "/10, fresh " << fresh_correct
       << "/20 (>=18), " << std::fixed << dt << "s (<60)";
    detail = os.str();
    return train_correct == 10 && fresh_correct >= 18 && dt < 60.0;
}

// --------------------------------------------------------------------- 6
bool dilution_and_distribution(const fs::path&, std::string& detail) {
    Rng rng(66);
    SlideSpec reference;  // default counts
    SlideSpec halved = reference;
    for (int c = 0; c < 3; ++c) {
        halved.count_min[c] = reference.count_min[c] / 2;
        halved.count_max[c] = reference.count_max[c] / 2;
    }
    const int frames = 10;

    auto sample_density = [&](const SlideSpec& spec) {
        int64_t grains = 0;
        for (int f = 0; f < frames; ++f)
            grains +=
                static_cast<int64_t>(gen_slide_annotation(spec, rng.next_u64()).boxes.size());
        return static_cast<double>(grains) / frames;
    };

    double reference_density = 0;
    for (int i = 0; i < 100; ++i) reference_density += sample_density(reference);
    reference_density /= 100.0;

    int flagged = 0;
    for (int i = 0; i < 100; ++i)
        flagged += dilution_check(sample_density(halved), reference_density, 0.3).flagged;

    // distribution divergence between and within the two profiles
    const int dist_frames = 50;
    double cross_min = 1, same_max = 0;
    for (int i = 0; i < 100; ++i) {
        const auto e1 = profile_sample_features(HoneyProfile::eucalyptus(), dist_frames, rng);
        const auto e2 = profile_sample_features(HoneyProfile::eucalyptus(), dist_frames, rng);
        const auto m1 = profile_sample_features(HoneyProfile::manuka(), dist_frames, rng);
        const auto m2 = profile_sample_features(HoneyProfile::manuka(), dist_frames, rng);
        cross_min = std::min(cross_min, distribution_compare(e1.counts, m1.counts));
        same_max = std::max(same_max, distribution_compare(e1.counts, e2.counts));
        same_max = std::max(same_max, distribution_compare(m1.counts, m2.counts));
    }
    std::ostringstream os;
    os << "dilution flagged " << flagged << "/100 (>=95), cross-profile TV min " << std::fixed
       << cross_min << " (>0.3), same-profile TV max " << same_max << " (<0.15)";
    detail = os.str();
    return flagged >= 95 && cross_min > 0.3 && same_max < 0.15;
}

// --------------------------------------------------------------------- 7
int run_cli(const std::string& args) {
    const std::string cmd = std::string(POLLEN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

bool file_bytes_equal(const fs::path& a, const fs::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return !sa.empty() && sa == sb;
}

bool determinism(const fs::path& work, std::string& detail) {
    const double t0 = now_s();
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = work / ("det_run" + std::to_string(run));
        fs::remove_all(dir);
        fs::create_directories(dir);
        const std::string d = dir.string();
        if (run_cli("gen-data --out " + d + "/ds --n 8 --extent 512 --seed 99 --threads 1") != 0 ||
            run_cli("train-detector --data " + d + "/ds --out " + d +
                    "/w.plnw --epochs 5 --batch 2 --extent 128 --width-mult 0.08 --anchors 5 "
                    "--seed 99 --threads 1 --log " + d + "/train.csv") != 0 ||
            run_cli("detect --weights " + d + "/w.plnw --images " + d + "/ds --out " + d +
                    "/dets.txt --threads 1") != 0 ||
            run_cli("evaluate --detections " + d + "/dets.txt --annotations " + d +
                    "/ds/annotations.jsonl --data " + d + "/ds --out " + d +
                    "/report.json --threads 1") != 0) {
            detail = "pipeline run " + std::to_string(run) + " failed";
            return false;
        }
    }
    const fs::path a = work / "det_run0", b = work / "det_run1";
    const bool weights_ok = file_bytes_equal(a / "w.plnw", b / "w.plnw") &&
                            file_bytes_equal(a / "w.plnw.best", b / "w.plnw.best");
    const bool report_ok = file_bytes_equal(a / "report.json", b / "report.json") &&
                           file_bytes_equal(a / "dets.txt", b / "dets.txt");
    const bool manifest_ok = file_bytes_equal(a / "ds/manifest.json", b / "ds/manifest.json");
    const double dt = now_s() - t0;
    std::ostringstream os;
    os << "weights " << (weights_ok ? "identical" : "DIFFER") << ", reports "
       << (report_ok ? "identical" : "DIFFER") << ", manifests "
       << (manifest_ok ? "identical" : "DIFFER") << ", " << std::fixed << dt << "s";
    detail = os.str();
    return weights_ok && report_ok && manifest_ok;
}

// --------------------------------------------------------------------- 8
bool metric_identity(const fs::path&, std::string& detail) {
    MatchCounts counts;
    counts.tp = 663;
    counts.fp = 337;  // precision 663/1000 = 0.663
    counts.fn = 62;   // sensitivity 663/725 = 0.9145 -> 0.914
    const auto r = compute_metrics(counts);
    const double f1_paper = 2 * 0.663 * 0.914 / (0.663 + 0.914);
    const bool ok = std::abs(r.precision - 0.663) < 5e-4 &&
                    std::round(r.sensitivity * 1000) == 914 && std::round(r.f1 * 1000) == 769 &&
                    std::round(f1_paper * 1000) == 769;
    std::ostringstream os;
    os << "precision " << std::fixed << r.precision << ", sensitivity " << r.sensitivity
       << ", f1 " << r.f1 << " -> 0.769 at 3 d.p.";
    detail = os.str();
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    fs::path work = fs::temp_directory_path() / "pollen_acceptance";
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string tok;
            while (std::getline(ss, tok, ',')) only.insert(std::atoi(tok.c_str()));
        } else if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) {
            work = argv[++i];
        }
    }
    fs::create_directories(work);

    const std::vector<Criterion> criteria = {
        {1, "shape conformance (reference stack audit)", shape_conformance},
        {2, "gradient correctness (central differences, 64-bit)", gradient_correctness},
        {3, "oracle equivalence (conv/pool/nms/iou)", oracle_equivalence},
        {4, "held-out metrics floors after budgeted training", table2_reproduction},
        {5, "authentication 5v5 reproduction", auth_reproduction},
        {6, "dilution and distribution signals", dilution_and_distribution},
        {7, "bit-deterministic pipeline (threads=1)", determinism},
        {8, "metric identity (f1 from precision/sensitivity)", metric_identity},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.number)) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(work, detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] criterion %d: %s — %s\n", ok ? "PASS" : "FAIL", c.number,
                    c.name.c_str(), detail.c_str());
        std::fflush(stdout);
        failures += !ok;
    }
    return failures == 0 ? 0 : 1;
}
