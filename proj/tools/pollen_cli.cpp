// pollen: synthetic-slide pollen detection and honey authentication pipeline.
//
// Subcommands: gen-data, train-detector, detect, evaluate, train-auth,
// authenticate, grad-check. A declarative config file ([section], key =
// value) supplies defaults; flags override; --print-config emits the
// resolved settings. Exit codes: 0 success, 1 usage/config error, 2 runtime
// failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "pollen/auth.hpp"
#include "pollen/config.hpp"
#include "pollen/detector.hpp"
#include "pollen/gradcheck.hpp"
#include "pollen/metrics.hpp"
#include "pollen/serialize.hpp"
#include "pollen/synth.hpp"
#include "pollen/threads.hpp"
#include "pollen/train.hpp"

using namespace pollen;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::optional<int> threads;
    std::optional<uint64_t> seed;
    bool print_config = false;

    ConfigMap file;

    void finalize() {
        if (!config_path.empty()) file = ConfigMap::from_file(config_path);
        int n = 0;
        if (threads) {
            n = *threads;
        } else if (const char* env = std::getenv("POLLEN_THREADS")) {
            n = std::atoi(env);
        } else {
            n = static_cast<int>(file.get_int("run.threads", 0));
        }
        if (n > 0) set_threads(n);
    }

    uint64_t run_seed() const {
        if (seed) return *seed;
        return file.get_u64("run.seed", 42);
    }

    void maybe_print(const ConfigMap& effective) const {
        if (print_config) std::cout << effective.dump() << std::flush;
    }
};

SlideSpec slide_spec_from(const ConfigMap& cfg, int64_t extent) {
    SlideSpec base;
    SlideSpec spec = extent == base.extent ? base : base.scaled_to(extent);
    for (int c = 0; c < 3; ++c) {
        spec.count_min[c] = static_cast<int>(cfg.get_int("synth.count_min", spec.count_min[c]));
        spec.count_max[c] = static_cast<int>(cfg.get_int("synth.count_max", spec.count_max[c]));
    }
    spec.bubble_min = static_cast<int>(cfg.get_int("synth.bubble_min", spec.bubble_min));
    spec.bubble_max = static_cast<int>(cfg.get_int("synth.bubble_max", spec.bubble_max));
    spec.blur_sigma = cfg.get_double("synth.blur_sigma", spec.blur_sigma);
    spec.noise_amplitude = cfg.get_double("synth.noise_amplitude", spec.noise_amplitude);
    spec.overlap_limit = cfg.get_double("synth.overlap_limit", spec.overlap_limit);
    return spec;
}

std::vector<std::string> list_images(const std::vector<std::string>& inputs) {
    std::vector<std::string> files;
    auto push_if_image = [&files](const fs::path& p) {
        const auto ext = p.extension().string();
        if (ext == ".png" || ext == ".ppm") files.push_back(p.string());
    };
    for (const auto& input : inputs) {
        const fs::path p(input);
        if (fs::is_directory(p)) {
            const fs::path imgdir = fs::is_directory(p / "images") ? p / "images" : p;
            std::vector<std::string> here;
            for (const auto& e : fs::directory_iterator(imgdir))
                if (e.is_regular_file()) {
                    const auto ext = e.path().extension().string();
                    if (ext == ".png" || ext == ".ppm") here.push_back(e.path().string());
                }
            std::sort(here.begin(), here.end());
            files.insert(files.end(), here.begin(), here.end());
        } else if (fs::is_regular_file(p)) {
            push_if_image(p);
        } else {
            throw IoError("detect: '" + input + "' is neither a file nor a directory");
        }
    }
    if (files.empty()) throw IoError("detect: no .png/.ppm images found");
    return files;
}

AuthFeatures features_from_json(const json& j) {
    AuthFeatures f;
    const auto counts = j.at("counts");
    if (!counts.is_array() || counts.size() != 3)
        throw IoError("features: 'counts' must be an array of three integers");
    for (int c = 0; c < 3; ++c) f.counts[c] = counts[c].get<int64_t>();
    f.frames = j.at("frames").get<int64_t>();
    if (f.frames <= 0) throw IoError("features: 'frames' must be positive");
    return f;
}

json features_to_json(const AuthFeatures& f) {
    return json{{"counts", f.counts}, {"frames", f.frames}, {"density", f.density()}};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const GlobalOpts& g, int n_images, const std::string& out_dir, int64_t extent,
                 const std::string& format, const std::string& profile_name, int samples,
                 int frames) {
    const uint64_t seed = g.run_seed();
    if (profile_name.empty()) {
        SlideSpec spec = slide_spec_from(g.file, extent);
        ConfigMap eff;
        eff.set("gen-data.n", std::to_string(n_images));
        eff.set("gen-data.out", out_dir);
        eff.set("gen-data.extent", std::to_string(extent));
        eff.set("gen-data.format", format);
        eff.set("run.seed", std::to_string(seed));
        g.maybe_print(eff);

        const auto manifest = gen_dataset(spec, n_images, seed, out_dir, format);
        std::cout << "wrote " << manifest.images.size() << " images to " << out_dir << "\n"
                  << "grains: " << manifest.grain_total << " (round "
                  << manifest.class_totals[0] << ", triangular " << manifest.class_totals[1]
                  << ", spiky " << manifest.class_totals[2] << "), bubbles "
                  << manifest.bubble_total << "\n";
        return 0;
    }

    HoneyProfile profile;
    if (profile_name == "eucalyptus") {
        profile = HoneyProfile::eucalyptus();
    } else if (profile_name == "manuka") {
        profile = HoneyProfile::manuka();
    } else {
        throw ValueError("gen-data: unknown profile '" + profile_name +
                         "' (eucalyptus, manuka)");
    }
    ConfigMap eff;
    eff.set("gen-data.profile", profile.label);
    eff.set("gen-data.samples", std::to_string(samples));
    eff.set("gen-data.frames", std::to_string(frames));
    eff.set("gen-data.extent", std::to_string(extent));
    eff.set("run.seed", std::to_string(seed));
    g.maybe_print(eff);

    SlideSpec base = slide_spec_from(g.file, extent);
    Rng rng(seed);
    fs::create_directories(out_dir);
    json all = json::array();
    for (int s = 0; s < samples; ++s) {
        const std::string sample_dir =
            (fs::path(out_dir) / (profile.label + "_" + std::to_string(s))).string();
        fs::create_directories(fs::path(sample_dir) / "images");
        const auto frame_counts = sample_profile_frames(profile, frames, rng);
        std::vector<Annotation> anns;
        AuthFeatures features;
        features.frames = frames;
        for (int f = 0; f < frames; ++f) {
            SlideSpec spec = base;
            for (int c = 0; c < 3; ++c) {
                spec.count_min[c] = frame_counts[f][c];
                spec.count_max[c] = frame_counts[f][c];
                features.counts[c] += frame_counts[f][c];
            }
            char name[64];
            std::snprintf(name, sizeof(name), "frame_%03d", f);
            auto [img, ann] = gen_slide(spec, rng.next_u64(), name);
            write_image((fs::path(sample_dir) / "images" / (std::string(name) + "." + format))
                            .string(),
                        img);
            anns.push_back(std::move(ann));
        }
        save_annotations(anns, (fs::path(sample_dir) / "annotations.jsonl").string());
        json fj = features_to_json(features);
        fj["label"] = profile.label;
        fj["sample"] = sample_dir;
        all.push_back(std::move(fj));
    }
    const std::string features_path = (fs::path(out_dir) / "features.json").string();
    json existing = json::array();
    if (fs::exists(features_path)) {
        std::ifstream in(features_path);
        in >> existing;
    }
    for (auto& e : all) existing.push_back(e);
    write_file_atomic(features_path, existing.dump(2) + "\n");
    std::cout << "wrote " << samples << " " << profile.label << " samples (" << frames
              << " frames each) under " << out_dir << "\n";
    return 0;
}

int cmd_train_detector(const GlobalOpts& g, TrainConfig tc) {
    tc.seed = g.seed ? *g.seed : g.file.get_u64("run.seed", tc.seed);
    ConfigMap eff;
    eff.set("train.data", tc.data_dir);
    eff.set("train.out", tc.out_weights);
    eff.set("train.epochs", std::to_string(tc.epochs));
    eff.set("train.batch_size", std::to_string(tc.batch_size));
    eff.set("train.lr", std::to_string(tc.lr));
    eff.set("train.optimizer", tc.optimizer);
    eff.set("train.lambda_coord", std::to_string(tc.lambda_coord));
    eff.set("train.lambda_noobj", std::to_string(tc.lambda_noobj));
    eff.set("detector.input_extent", std::to_string(tc.input_extent));
    eff.set("detector.width_mult", std::to_string(tc.width_mult));
    eff.set("detector.anchors", std::to_string(tc.num_anchors));
    eff.set("run.seed", std::to_string(tc.seed));
    g.maybe_print(eff);

    const auto result = train_detector(tc, &std::cout);
    std::cout << "final weights: " << result.final_path << "\n"
              << "best weights:  " << result.best_path << " (loss " << result.best_loss << ")\n";
    return 0;
}

int cmd_detect(const GlobalOpts& g, const std::string& weights,
               const std::vector<std::string>& inputs, const std::string& out_path, double conf,
               double nms_iou) {
    ConfigMap eff;
    eff.set("detect.weights", weights);
    eff.set("detect.out", out_path);
    eff.set("detect.conf_threshold", std::to_string(conf));
    eff.set("detect.nms_threshold", std::to_string(nms_iou));
    g.maybe_print(eff);

    auto model = load_weights(weights);
    model.training = false;
    const int64_t extent = model.config.input_extent;

    std::vector<Detection> all;
    NoGradGuard ng;
    for (const auto& file : list_images(inputs)) {
        ImageU8 img = read_image(file);
        const double sx = static_cast<double>(img.width) / static_cast<double>(extent);
        const double sy = static_cast<double>(img.height) / static_cast<double>(extent);
        if (img.width != extent || img.height != extent) img = resize_area(img, extent, extent);
        auto raw = forward(model, image_to_tensor(img));
        auto dets = decode(raw, model.config, conf);
        dets = nms(std::move(dets), nms_iou);
        scale_detections(dets, sx, sy);
        const std::string id = fs::path(file).stem().string();
        for (auto& d : dets) d.image_id = id;
        all.insert(all.end(), dets.begin(), dets.end());
    }
    save_detections(all, model.config.class_names, out_path);
    std::cout << "wrote " << all.size() << " detections to " << out_path << "\n";
    return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& det_path, const std::string& ann_path,
                 const std::string& out_json, double iou_thr, int64_t grid_s, int64_t extent) {
    ConfigMap eff;
    eff.set("evaluate.detections", det_path);
    eff.set("evaluate.annotations", ann_path);
    eff.set("evaluate.iou_threshold", std::to_string(iou_thr));
    eff.set("evaluate.grid", std::to_string(grid_s));
    eff.set("evaluate.extent", std::to_string(extent));
    g.maybe_print(eff);

    const std::vector<std::string> class_names = {"round", "triangular", "spiky"};
    const auto annotations = load_annotations(ann_path, extent);
    const auto detections = load_detections(det_path, class_names);
    const std::vector<double> pr = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    const auto result = evaluate_detections(annotations, detections, iou_thr, grid_s,
                                            static_cast<double>(extent), pr);
    std::cout << metrics_table(result, class_names);
    if (!out_json.empty()) {
        write_file_atomic(out_json, metrics_json(result, class_names));
        std::cout << "report: " << out_json << "\n";
    }
    return 0;
}

int cmd_train_auth(const GlobalOpts& g, const std::string& features_path,
                   const std::string& out_path, AuthConfig cfg) {
    cfg.seed = g.seed ? *g.seed : g.file.get_u64("run.seed", cfg.seed);
    ConfigMap eff;
    eff.set("auth.features", features_path);
    eff.set("auth.out", out_path);
    eff.set("auth.hidden", std::to_string(cfg.hidden));
    eff.set("auth.lr", std::to_string(cfg.lr));
    eff.set("auth.max_epochs", std::to_string(cfg.max_epochs));
    eff.set("auth.threshold", std::to_string(cfg.threshold));
    eff.set("run.seed", std::to_string(cfg.seed));
    g.maybe_print(eff);

    std::ifstream in(features_path);
    if (!in) throw IoError("cannot open features '" + features_path + "'");
    json j;
    in >> j;
    if (!j.is_array()) throw IoError("train-auth: features file must be a JSON array");
    std::vector<AuthSample> samples;
    for (const auto& e : j) {
        AuthSample s;
        s.features = features_from_json(e);
        s.label = e.at("label").get<std::string>();
        samples.push_back(std::move(s));
    }
    const auto model = train_auth(samples, cfg);
    save_auth_model(model, out_path);
    std::cout << "trained on " << samples.size() << " samples: loss " << model.final_loss
              << " after " << model.epochs_run << " epochs"
              << (model.converged ? " (converged)" : "") << "\n"
              << "positive label: " << model.positive_label << "\n";
    if (model.non_separable)
        std::cout << "warning: identical feature vectors with conflicting labels; the data is "
                     "not separable\n";
    std::cout << "model: " << out_path << "\n";
    return 0;
}

int cmd_authenticate(const GlobalOpts& g, const std::string& model_path,
                     const std::string& features_path, const std::string& det_path, int frames,
                     double reference_density, double tolerance,
                     const std::string& compare_counts, const std::string& out_path) {
    ConfigMap eff;
    eff.set("authenticate.model", model_path);
    g.maybe_print(eff);

    const auto model = load_auth_model(model_path);
    AuthFeatures features;
    if (!features_path.empty()) {
        std::ifstream in(features_path);
        if (!in) throw IoError("cannot open features '" + features_path + "'");
        json j;
        in >> j;
        features = features_from_json(j.is_array() ? j.at(0) : j);
    } else if (!det_path.empty()) {
        if (frames <= 0)
            throw ValueError("authenticate: --frames is required with --detections");
        const std::vector<std::string> class_names = {"round", "triangular", "spiky"};
        const auto dets = load_detections(det_path, class_names);
        std::map<std::string, std::vector<Detection>> by_image;
        for (const auto& d : dets) by_image[d.image_id].push_back(d);
        if (static_cast<int>(by_image.size()) > frames)
            throw ValueError("authenticate: detections span " +
                             std::to_string(by_image.size()) + " images but --frames is " +
                             std::to_string(frames));
        std::vector<std::vector<Detection>> per_frame;
        for (auto& [id, v] : by_image) per_frame.push_back(std::move(v));
        per_frame.resize(frames);  // frames without detections still count
        features = extract_features(per_frame);
    } else {
        throw ValueError("authenticate: provide --features or --detections");
    }

    const auto decision = authenticate(model, features);
    json verdict;
    verdict["decision"] = decision.decision;
    verdict["score"] = decision.score;
    verdict["genuine_label"] = model.positive_label;
    verdict["features"] = features_to_json(features);
    if (reference_density > 0) {
        const auto d = dilution_check(features.density(), reference_density, tolerance);
        verdict["dilution"] = {{"ratio", d.ratio},
                               {"flagged", d.flagged},
                               {"reference_density", reference_density},
                               {"tolerance", tolerance}};
    }
    if (!compare_counts.empty()) {
        std::array<int64_t, 3> other = {0, 0, 0};
        if (std::sscanf(compare_counts.c_str(), "%ld,%ld,%ld", &other[0], &other[1], &other[2]) !=
            3)
            throw ValueError("authenticate: --compare-counts wants 'a,b,c'");
        verdict["distribution_divergence"] = distribution_compare(features.counts, other);
    }
    const std::string text = verdict.dump(2) + "\n";
    std::cout << text;
    if (!out_path.empty()) write_file_atomic(out_path, text);
    return 0;
}

int cmd_grad_check(const GlobalOpts& g, int trials) {
    const uint64_t seed = g.run_seed();
    ConfigMap eff;
    eff.set("grad-check.trials", std::to_string(trials));
    eff.set("run.seed", std::to_string(seed));
    g.maybe_print(eff);

    const auto results = run_gradcheck_suite(seed, trials, true);
    bool ok = true;
    std::printf("%-28s %7s %14s\n", "op", "trials", "max rel err");
    for (const auto& r : results) {
        std::printf("%-28s %7d %14.3e%s\n", r.name.c_str(), r.trials, r.max_rel_err,
                    r.max_rel_err <= kGradCheckTolerance ? "" : "  FAIL");
        ok = ok && r.max_rel_err <= kGradCheckTolerance;
    }
    std::printf("%s (tolerance %.1e)\n", ok ? "all gradients verified" : "gradient check FAILED",
                kGradCheckTolerance);
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pollen slide synthesis, detector training and honey authentication"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "declarative config file (key = value sections)");
    int threads_flag = 0;
    auto* threads_opt =
        app.add_option("--threads", threads_flag, "worker threads (1 = bit-deterministic)");
    uint64_t seed_flag = 0;
    auto* seed_opt = app.add_option("--seed", seed_flag, "master seed (no wall-clock seeding)");
    app.add_flag("--print-config", g.print_config, "emit the resolved configuration");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate synthetic annotated slides");
    int gen_n = 0;
    std::string gen_out, gen_format = "png", gen_profile;
    int64_t gen_extent = 0;
    int gen_samples = 5, gen_frames = 10;
    gen->add_option("--n", gen_n, "number of slides");
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--extent", gen_extent, "frame extent in pixels (default 1080)");
    gen->add_option("--format", gen_format, "png or ppm")
        ->check(CLI::IsMember({"png", "ppm"}));
    gen->add_option("--profile", gen_profile, "honey profile samples: eucalyptus or manuka");
    gen->add_option("--samples", gen_samples, "profile samples to generate");
    gen->add_option("--frames", gen_frames, "frames per profile sample");

    // train-detector
    auto* train = app.add_subcommand("train-detector", "train the detector on a dataset");
    TrainConfig tc;
    train->add_option("--data", tc.data_dir, "dataset directory (manifest.json)")->required();
    train->add_option("--out", tc.out_weights, "output weights path")->required();
    std::optional<int> t_epochs, t_batch, t_anchors, t_max_images;
    std::optional<double> t_lr, t_lc, t_ln, t_wm;
    std::optional<int64_t> t_extent;
    std::optional<std::string> t_opt, t_log, t_resume;
    train->add_option("--epochs", t_epochs, "training epochs");
    train->add_option("--batch", t_batch, "images per optimizer step");
    train->add_option("--lr", t_lr, "learning rate");
    train->add_option("--optimizer", t_opt, "adam, sgd_momentum or sgd");
    train->add_option("--lambda-coord", t_lc, "coordinate loss weight");
    train->add_option("--lambda-noobj", t_ln, "no-object loss weight");
    train->add_option("--extent", t_extent, "network input extent (multiple of 32)");
    train->add_option("--width-mult", t_wm, "interior filter width multiplier");
    train->add_option("--anchors", t_anchors, "anchor count (k-means k)");
    train->add_option("--log", t_log, "per-epoch CSV loss log");
    train->add_option("--resume", t_resume, "continue from existing weights");
    train->add_option("--max-images", t_max_images, "cap the training set size");
    bool t_noaug = false;
    train->add_flag("--no-augment", t_noaug, "disable dihedral frame augmentation");

    // detect
    auto* detect = app.add_subcommand("detect", "run the detector over images");
    std::string d_weights, d_out;
    std::vector<std::string> d_inputs;
    std::optional<double> d_conf, d_nms;
    detect->add_option("--weights", d_weights, "detector weights")->required();
    detect->add_option("--images", d_inputs, "image files or directories")->required();
    detect->add_option("--out", d_out, "detection record file")->required();
    detect->add_option("--conf", d_conf, "confidence threshold");
    detect->add_option("--nms", d_nms, "NMS IoU threshold");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "score detections against annotations");
    std::string e_dets, e_anns, e_out;
    std::optional<double> e_iou;
    std::optional<int64_t> e_grid, e_extent;
    std::optional<std::string> e_data;
    eval->add_option("--detections", e_dets, "detection record file")->required();
    eval->add_option("--annotations", e_anns, "annotations jsonl")->required();
    eval->add_option("--out", e_out, "JSON report path");
    eval->add_option("--iou", e_iou, "matching IoU threshold");
    eval->add_option("--grid", e_grid, "true-negative grid extent");
    eval->add_option("--extent", e_extent, "image extent in pixels");
    eval->add_option("--data", e_data, "dataset dir (reads extent from its manifest)");

    // train-auth
    auto* tauth = app.add_subcommand("train-auth", "train the authentication classifier");
    std::string a_features, a_out;
    AuthConfig acfg;
    std::optional<int> a_hidden, a_epochs;
    std::optional<double> a_lr, a_thresh;
    std::optional<std::string> a_positive;
    tauth->add_option("--features", a_features, "JSON array of labeled feature records")
        ->required();
    tauth->add_option("--out", a_out, "output model path")->required();
    tauth->add_option("--hidden", a_hidden, "hidden layer width");
    tauth->add_option("--lr", a_lr, "learning rate");
    tauth->add_option("--epochs", a_epochs, "max training epochs");
    tauth->add_option("--threshold", a_thresh, "decision threshold");
    tauth->add_option("--positive-label", a_positive, "label treated as genuine");

    // authenticate
    auto* auth = app.add_subcommand("authenticate", "classify a sample's features");
    std::string au_model, au_features, au_dets, au_compare, au_out;
    int au_frames = 0;
    double au_refdensity = 0, au_tolerance = 0.3;
    auth->add_option("--model", au_model, "trained auth model")->required();
    auth->add_option("--features", au_features, "feature JSON for the sample");
    auth->add_option("--detections", au_dets, "detection record file for the sample");
    auth->add_option("--frames", au_frames, "frame count when using --detections");
    auth->add_option("--reference-density", au_refdensity,
                     "reference grains/frame for the dilution check");
    auth->add_option("--tolerance", au_tolerance, "dilution tolerance fraction");
    auth->add_option("--compare-counts", au_compare,
                     "reference class counts a,b,c for distribution comparison");
    auth->add_option("--out", au_out, "also write the verdict JSON here");

    // grad-check
    auto* gcheck = app.add_subcommand("grad-check", "finite-difference gradient audit");
    int gc_trials = 20;
    gcheck->add_option("--trials", gc_trials, "trials per op");

    // global flags may appear after the subcommand name
    for (auto* sub : {gen, train, detect, eval, tauth, auth, gcheck}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (threads_opt->count()) g.threads = threads_flag;
        if (seed_opt->count()) g.seed = seed_flag;
        g.finalize();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }

    try {
        const auto& f = g.file;

        if (gen->parsed()) {
            const int64_t extent =
                gen_extent > 0 ? gen_extent : f.get_int("synth.extent", 1080);
            return cmd_gen_data(g, gen_n, gen_out, extent, gen_format, gen_profile, gen_samples,
                                gen_frames);
        }
        if (train->parsed()) {
            tc.epochs = t_epochs ? *t_epochs : static_cast<int>(f.get_int("train.epochs", 30));
            tc.batch_size =
                t_batch ? *t_batch : static_cast<int>(f.get_int("train.batch_size", 8));
            tc.lr = t_lr ? static_cast<float>(*t_lr)
                         : static_cast<float>(f.get_double("train.lr", 1e-3));
            tc.optimizer = t_opt ? *t_opt : f.get_str("train.optimizer", "adam");
            tc.lambda_coord = t_lc ? static_cast<float>(*t_lc)
                                   : static_cast<float>(f.get_double("train.lambda_coord", 5.0));
            tc.lambda_noobj = t_ln ? static_cast<float>(*t_ln)
                                   : static_cast<float>(f.get_double("train.lambda_noobj", 0.5));
            tc.input_extent =
                t_extent ? *t_extent : f.get_int("detector.input_extent", 416);
            tc.width_mult = t_wm ? static_cast<float>(*t_wm)
                                 : static_cast<float>(f.get_double("detector.width_mult", 1.0));
            tc.num_anchors =
                t_anchors ? *t_anchors : static_cast<int>(f.get_int("detector.anchors", 10));
            tc.log_csv = t_log ? *t_log : "";
            tc.resume = t_resume ? *t_resume : "";
            tc.max_images = t_max_images ? *t_max_images : -1;
            tc.augment = !t_noaug && f.get_bool("train.augment", true);
            return cmd_train_detector(g, tc);
        }
        if (detect->parsed()) {
            const double conf = d_conf ? *d_conf : f.get_double("detector.conf_threshold", 0.5);
            const double nms_iou = d_nms ? *d_nms : f.get_double("detector.nms_threshold", 0.45);
            return cmd_detect(g, d_weights, d_inputs, d_out, conf, nms_iou);
        }
        if (eval->parsed()) {
            const double iou_thr = e_iou ? *e_iou : f.get_double("evaluate.iou_threshold", 0.5);
            const int64_t grid_s = e_grid ? *e_grid : f.get_int("evaluate.grid", 13);
            int64_t extent = e_extent ? *e_extent : f.get_int("evaluate.extent", 0);
            if (e_data) {
                const auto manifest =
                    load_manifest((fs::path(*e_data) / "manifest.json").string());
                extent = manifest.extent;
            }
            if (extent <= 0)
                throw ValueError("evaluate: provide --extent or --data for the image extent");
            return cmd_evaluate(g, e_dets, e_anns, e_out, iou_thr, grid_s, extent);
        }
        if (tauth->parsed()) {
            acfg.hidden = a_hidden ? *a_hidden : static_cast<int>(f.get_int("auth.hidden", 8));
            acfg.lr = a_lr ? *a_lr : f.get_double("auth.lr", 0.05);
            acfg.max_epochs =
                a_epochs ? *a_epochs : static_cast<int>(f.get_int("auth.max_epochs", 20000));
            acfg.threshold = a_thresh ? *a_thresh : f.get_double("auth.threshold", 0.5);
            acfg.positive_label = a_positive ? *a_positive : f.get_str("auth.positive_label", "");
            return cmd_train_auth(g, a_features, a_out, acfg);
        }
        if (auth->parsed()) {
            return cmd_authenticate(g, au_model, au_features, au_dets, au_frames, au_refdensity,
                                    au_tolerance, au_compare, au_out);
        }
        if (gcheck->parsed()) {
            return cmd_grad_check(g, gc_trials);
        }
        std::cerr << "no subcommand given\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
