#include "pollen/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "pollen/image.hpp"
#include "pollen/optim.hpp"
#include "pollen/ops.hpp"
#include "pollen/synth.hpp"

namespace pollen {

namespace fs = std::filesystem;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

struct TrainImage {
    std::string id;
    std::vector<uint8_t> pixels;  // resized to the network extent
    std::vector<GroundTruth> gts; // scaled to network pixels
};

// One of the 8 symmetries of the square frame: bit 0 flips x, bit 1 flips y,
// bit 2 transposes. Applied to pixels and boxes alike.
void dihedral_pixels(const std::vector<uint8_t>& src, int64_t e, int d,
                     std::vector<uint8_t>& dst) {
    dst.resize(src.size());
    const bool fx = d & 1, fy = d & 2, tr = d & 4;
#pragma omp parallel for schedule(static)
    for (int64_t y = 0; y < e; ++y) {
        for (int64_t x = 0; x < e; ++x) {
            int64_t sx = tr ? y : x;
            int64_t sy = tr ? x : y;
            if (fx) sx = e - 1 - sx;
            if (fy) sy = e - 1 - sy;
            const uint8_t* p = src.data() + (sy * e + sx) * 3;
            uint8_t* q = dst.data() + (y * e + x) * 3;
            q[0] = p[0];
            q[1] = p[1];
            q[2] = p[2];
        }
    }
}

std::vector<GroundTruth> dihedral_boxes(const std::vector<GroundTruth>& gts, int64_t e, int d) {
    const bool fx = d & 1, fy = d & 2, tr = d & 4;
    std::vector<GroundTruth> out;
    out.reserve(gts.size());
    for (auto gt : gts) {
        // invert the source lookup: the pixel map reads (sx, sy), so a box at
        // (sx, sy) lands at the (x, y) that reads it
        double cx = gt.box.cx, cy = gt.box.cy, w = gt.box.w, h = gt.box.h;
        if (fx) cx = e - cx;
        if (fy) cy = e - cy;
        if (tr) {
            std::swap(cx, cy);
            std::swap(w, h);
        }
        gt.box = {cx, cy, w, h};
        out.push_back(gt);
    }
    return out;
}

}  // namespace

Tensor load_network_input(const std::string& image_path, int64_t extent) {
    ImageU8 img = read_image(image_path);
    if (img.width != extent || img.height != extent) img = resize_area(img, extent, extent);
    return image_to_tensor(img);
}

TrainResult train_detector(const TrainConfig& config, std::ostream* progress) {
    if (config.epochs < 0) throw ValueError("train: negative epoch count");
    if (config.batch_size < 1) throw ValueError("train: batch size must be >= 1");

    const auto manifest = load_manifest((fs::path(config.data_dir) / "manifest.json").string());
    auto annotations =
        load_annotations((fs::path(config.data_dir) / "annotations.jsonl").string(),
                         manifest.extent);
    std::map<std::string, const Annotation*> ann_by_id;
    for (const auto& a : annotations) ann_by_id[a.image_id] = &a;

    int64_t n_images = static_cast<int64_t>(manifest.images.size());
    if (config.max_images > 0) n_images = std::min<int64_t>(n_images, config.max_images);
    if (n_images == 0) throw ValueError("train: dataset '" + config.data_dir + "' has no images");

    const int64_t extent = config.input_extent;
    const double scale = static_cast<double>(extent) / static_cast<double>(manifest.extent);

    // Cache the resized 8-bit frames; float tensors are built per step.
    std::vector<TrainImage> images;
    images.reserve(static_cast<size_t>(n_images));
    for (int64_t i = 0; i < n_images; ++i) {
        const auto& entry = manifest.images[i];
        TrainImage ti;
        ti.id = entry.image_id;
        ImageU8 img = read_image((fs::path(config.data_dir) / entry.file).string());
        if (img.width != extent || img.height != extent) img = resize_area(img, extent, extent);
        ti.pixels = std::move(img.pixels);
        if (auto it = ann_by_id.find(entry.image_id); it != ann_by_id.end()) {
            for (auto gt : it->second->boxes) {
                gt.box.cx *= scale;
                gt.box.cy *= scale;
                gt.box.w *= scale;
                gt.box.h *= scale;
                ti.gts.push_back(gt);
            }
        }
        images.push_back(std::move(ti));
    }

    Rng rng(config.seed);

    DetectorModel<float> model;
    if (!config.resume.empty()) {
        model = load_weights(config.resume);
        if (model.config.input_extent != extent)
            throw ValueError("train: resume weights were built for extent " +
                             std::to_string(model.config.input_extent));
    } else {
        DetectorConfig cfg;
        cfg.input_extent = extent;
        cfg.num_anchors = config.num_anchors;
        cfg.num_classes = config.num_classes;
        cfg.width_mult = config.width_mult;

        // anchor priors from the training boxes, in grid-cell units
        std::vector<BoundingBox> shapes;
        for (const auto& ti : images)
            for (const auto& gt : ti.gts)
                shapes.push_back({0, 0, gt.box.w / 32.0, gt.box.h / 32.0});
        if (static_cast<int>(shapes.size()) >= config.num_anchors) {
            cfg.anchors = kmeans_anchors(shapes, config.num_anchors, rng.next_u64());
        } else {
            cfg.anchors = DetectorConfig::default_anchors(config.num_anchors);
        }
        Rng init_rng(rng.next_u64());
        model = build_network<float>(cfg, init_rng);
    }
    model.training = true;

    const int64_t grid = model.config.grid();
    YoloLossParams loss_params;
    loss_params.lambda_coord = config.lambda_coord;
    loss_params.lambda_noobj = config.lambda_noobj;

    auto params = model.parameters();
    OptimizerState<float> opt;
    opt.rule = optim_rule_from_name(config.optimizer);
    opt.lr = config.lr;
    opt.init(params);

    std::ofstream log;
    if (!config.log_csv.empty()) {
        log.open(config.log_csv);
        if (!log) throw IoError("train: cannot open log '" + config.log_csv + "'");
        log << "epoch,total,coord,obj,noobj,class,seconds\n";
    }

    TrainResult result;
    result.final_path = config.out_weights;
    result.best_path = config.out_weights + ".best";
    result.best_loss = std::numeric_limits<double>::infinity();
    result.anchors = model.config.anchors;

    std::vector<int64_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double t0 = now_s();
        rng.shuffle(order);
        LossBreakdown sum;
        int64_t steps = 0;
        for (size_t at = 0; at < order.size();) {
            const size_t batch_end = std::min(order.size(), at + config.batch_size);
            const float inv_batch = 1.0f / static_cast<float>(batch_end - at);
            zero_grads(params);
            for (; at < batch_end; ++at) {
                const auto& ti = images[order[at]];
                const int d = config.augment ? static_cast<int>(rng.uniform_int(0, 7)) : 0;
                const std::vector<uint8_t>* frame = &ti.pixels;
                std::vector<uint8_t> transformed;
                std::vector<GroundTruth> gts = ti.gts;
                if (d != 0) {
                    dihedral_pixels(ti.pixels, extent, d, transformed);
                    frame = &transformed;
                    gts = dihedral_boxes(ti.gts, extent, d);
                }
                auto targets = assign_targets<float>(gts, model.config.anchors, grid, extent,
                                                     model.config.num_classes,
                                                     loss_params.noobj_iou_exclusion);
                std::vector<float> pix(frame->size());
                for (size_t i = 0; i < pix.size(); ++i) pix[i] = (*frame)[i] / 255.0f;
                auto input = Tensor::from_data({extent, extent, 3}, std::move(pix));
                auto raw = forward(model, input);
                update_objectness_targets(targets, raw, model.config.anchors);
                auto res = yolo_loss<float>(raw, targets, model.config.anchors,
                                            loss_params);
                if (!std::isfinite(res.breakdown.total))
                    throw ValueError("train: non-finite loss on image " + ti.id + " at epoch " +
                                     std::to_string(epoch));
                sum.total += res.breakdown.total;
                sum.coord += res.breakdown.coord;
                sum.obj += res.breakdown.obj;
                sum.noobj += res.breakdown.noobj;
                sum.class_term += res.breakdown.class_term;
                ops::scale(res.total, inv_batch).backward();
            }
            opt.step(params);
            ++steps;
        }
        const double inv_n = 1.0 / static_cast<double>(images.size());
        EpochStats stats;
        stats.epoch = epoch;
        stats.mean.total = sum.total * inv_n;
        stats.mean.coord = sum.coord * inv_n;
        stats.mean.obj = sum.obj * inv_n;
        stats.mean.noobj = sum.noobj * inv_n;
        stats.mean.class_term = sum.class_term * inv_n;
        stats.seconds = now_s() - t0;
        result.epochs.push_back(stats);

        if (log) {
            log << epoch << ',' << stats.mean.total << ',' << stats.mean.coord << ','
                << stats.mean.obj << ',' << stats.mean.noobj << ',' << stats.mean.class_term
                << ',' << stats.seconds << '\n';
            log.flush();
        }
        if (progress) {
            char buf[192];
            std::snprintf(buf, sizeof(buf),
                          "epoch %3d  loss %9.4f (coord %8.4f obj %7.4f noobj %7.4f class %7.4f)"
                          "  %5.1fs\n",
                          epoch, stats.mean.total, stats.mean.coord, stats.mean.obj,
                          stats.mean.noobj, stats.mean.class_term, stats.seconds);
            (*progress) << buf << std::flush;
        }
        if (stats.mean.total < result.best_loss) {
            result.best_loss = stats.mean.total;
            save_weights(model, result.best_path);
        }
    }

    save_weights(model, result.final_path);
    if (config.epochs == 0 || result.epochs.empty()) {
        // no steps were run; the "best" weights are the initialized ones
        save_weights(model, result.best_path);
    }
    return result;
}

}  // namespace pollen
