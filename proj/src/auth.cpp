#include "pollen/auth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pollen/errors.hpp"
#include "pollen/ops.hpp"
#include "pollen/optim.hpp"
#include "pollen/serialize.hpp"

namespace pollen {

double AuthFeatures::density() const {
    if (frames <= 0) throw ValueError("auth features: no frames");
    return static_cast<double>(total()) / static_cast<double>(frames);
}

std::array<double, 4> AuthFeatures::feature_vector() const {
    if (frames <= 0) throw ValueError("auth features: no frames");
    const double f = static_cast<double>(frames);
    return {counts[0] / f, counts[1] / f, counts[2] / f, density()};
}

AuthFeatures extract_features(const std::vector<std::vector<Detection>>& per_frame_detections) {
    if (per_frame_detections.empty())
        throw ValueError("extract_features: at least one frame is required");
    AuthFeatures features;
    features.frames = static_cast<int64_t>(per_frame_detections.size());
    for (const auto& frame : per_frame_detections) {
        for (const auto& d : frame) {
            if (d.class_id < 0 || d.class_id > 2)
                throw ValueError("extract_features: class id out of range");
            features.counts[d.class_id]++;
        }
    }
    return features;
}

AuthFeatures features_from_annotations(const std::vector<Annotation>& frames) {
    if (frames.empty()) throw ValueError("features_from_annotations: no frames");
    AuthFeatures features;
    features.frames = static_cast<int64_t>(frames.size());
    for (const auto& ann : frames)
        for (const auto& gt : ann.boxes) features.counts[gt.class_id]++;
    return features;
}

HoneyProfile HoneyProfile::eucalyptus() {
    return {"eucalyptus", {0.80, 0.15, 0.05}, 8.0, 12.0};
}

HoneyProfile HoneyProfile::manuka() {
    return {"manuka", {0.25, 0.15, 0.60}, 4.0, 7.0};
}

std::vector<std::array<int, 3>> sample_profile_frames(const HoneyProfile& profile, int frames,
                                                      Rng& rng) {
    if (frames <= 0) throw ValueError("profile sampling: frames must be positive");
    const double mix_sum = profile.mixture[0] + profile.mixture[1] + profile.mixture[2];
    if (std::abs(mix_sum - 1.0) > 1e-6)
        throw ValueError("profile '" + profile.label + "': mixture must sum to 1");
    if (profile.density_min <= 0 || profile.density_max < profile.density_min)
        throw ValueError("profile '" + profile.label + "': bad density range");

    std::vector<std::array<int, 3>> out;
    out.reserve(frames);
    for (int f = 0; f < frames; ++f) {
        const int total = static_cast<int>(rng.uniform_int(
            static_cast<int64_t>(std::llround(profile.density_min)),
            static_cast<int64_t>(std::llround(profile.density_max))));
        std::array<int, 3> counts = {0, 0, 0};
        for (int g = 0; g < total; ++g) {
            const double u = rng.uniform();
            if (u < profile.mixture[0])
                counts[0]++;
            else if (u < profile.mixture[0] + profile.mixture[1])
                counts[1]++;
            else
                counts[2]++;
        }
        out.push_back(counts);
    }
    return out;
}

AuthFeatures profile_sample_features(const HoneyProfile& profile, int frames, Rng& rng) {
    AuthFeatures features;
    features.frames = frames;
    for (const auto& counts : sample_profile_frames(profile, frames, rng))
        for (int c = 0; c < 3; ++c) features.counts[c] += counts[c];
    return features;
}

std::vector<Annotation> profile_sample_annotations(const HoneyProfile& profile, int frames,
                                                   const SlideSpec& base_spec, Rng& rng) {
    std::vector<Annotation> out;
    const auto frame_counts = sample_profile_frames(profile, frames, rng);
    for (int f = 0; f < frames; ++f) {
        SlideSpec spec = base_spec;
        for (int c = 0; c < 3; ++c) {
            spec.count_min[c] = frame_counts[f][c];
            spec.count_max[c] = frame_counts[f][c];
        }
        out.push_back(gen_slide_annotation(spec, rng.next_u64(),
                                           profile.label + "_frame_" + std::to_string(f)));
    }
    return out;
}

AuthModel train_auth(const std::vector<AuthSample>& samples, const AuthConfig& config) {
    if (samples.size() < 2) throw ValueError("train_auth: at least two samples required");
    std::set<std::string> labels;
    for (const auto& s : samples) labels.insert(s.label);
    if (labels.size() != 2)
        throw ValueError("train_auth: exactly two labels required, got " +
                         std::to_string(labels.size()));

    AuthModel model;
    model.hidden = config.hidden;
    model.threshold = config.threshold;
    model.positive_label =
        config.positive_label.empty() ? samples[0].label : config.positive_label;
    if (!labels.count(model.positive_label))
        throw ValueError("train_auth: positive label '" + model.positive_label +
                         "' not present in the samples");
    for (const auto& l : labels)
        if (l != model.positive_label) model.negative_label = l;

    const int64_t n = static_cast<int64_t>(samples.size());
    std::vector<std::array<double, 4>> raw(n);
    std::vector<float> targets(n);
    for (int64_t i = 0; i < n; ++i) {
        raw[i] = samples[i].features.feature_vector();
        targets[i] = samples[i].label == model.positive_label ? 1.f : 0.f;
    }

    // standardize per feature
    for (int f = 0; f < 4; ++f) {
        double mean = 0;
        for (const auto& r : raw) mean += r[f];
        mean /= static_cast<double>(n);
        double var = 0;
        for (const auto& r : raw) var += (r[f] - mean) * (r[f] - mean);
        var /= static_cast<double>(n);
        // stored as f32 in the container, so quantize now for exact round trips
        model.scaler_mean[f] = static_cast<float>(mean);
        model.scaler_scale[f] = static_cast<float>(var > 1e-12 ? std::sqrt(var) : 1.0);
    }

    // identical feature vectors with conflicting labels cannot separate
    for (int64_t i = 0; i < n && !model.non_separable; ++i) {
        for (int64_t j = i + 1; j < n; ++j) {
            if (targets[i] == targets[j]) continue;
            double d2 = 0;
            for (int f = 0; f < 4; ++f) d2 += (raw[i][f] - raw[j][f]) * (raw[i][f] - raw[j][f]);
            if (d2 < 1e-16) {
                model.non_separable = true;
                break;
            }
        }
    }

    std::vector<float> xdata(static_cast<size_t>(n) * 4);
    for (int64_t i = 0; i < n; ++i)
        for (int f = 0; f < 4; ++f)
            xdata[i * 4 + f] = static_cast<float>((raw[i][f] - model.scaler_mean[f]) /
                                                  model.scaler_scale[f]);

    Rng rng(config.seed);
    auto x = Tensor::from_data({n, 4}, std::move(xdata));
    auto w1 = Tensor::randn({4, config.hidden}, rng, 0.5f, true);
    auto b1 = Tensor::zeros({config.hidden}, true);
    auto w2 = Tensor::randn({config.hidden, 1}, rng, 0.5f, true);
    auto b2 = Tensor::zeros({1}, true);
    std::vector<Tensor> params = {w1, b1, w2, b2};

    OptimizerState<float> opt;
    opt.rule = OptimRule::sgd;
    opt.lr = static_cast<float>(config.lr);
    opt.init(params);

    double loss_value = 0;
    int epoch = 0;
    for (; epoch < config.max_epochs; ++epoch) {
        zero_grads(params);
        auto hiddenv = ops::tanh_op(ops::linear(x, w1, b1));
        auto logits = ops::reshape(ops::linear(hiddenv, w2, b2), {n});
        auto loss = ops::bce_with_logits(logits, targets);
        loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw ValueError("train_auth: loss diverged at epoch " + std::to_string(epoch));
        if (loss_value < config.converge_loss) {
            model.converged = true;
            break;
        }
        loss.backward();
        opt.step(params);
    }
    model.final_loss = loss_value;
    model.epochs_run = epoch;
    model.w1 = w1.data();
    model.b1 = b1.data();
    model.w2 = w2.data();
    model.b2 = b2.data();
    return model;
}

AuthDecision authenticate(const AuthModel& model, const AuthFeatures& features) {
    if (model.w1.empty()) throw ValueError("authenticate: model is not trained");
    const auto raw = features.feature_vector();
    std::array<double, 4> x;
    for (int f = 0; f < 4; ++f) x[f] = (raw[f] - model.scaler_mean[f]) / model.scaler_scale[f];

    std::vector<double> hidden(model.hidden, 0.0);
    for (int h = 0; h < model.hidden; ++h) {
        double acc = model.b1[h];
        for (int f = 0; f < 4; ++f) acc += x[f] * model.w1[f * model.hidden + h];
        hidden[h] = std::tanh(acc);
    }
    double logit = model.b2[0];
    for (int h = 0; h < model.hidden; ++h) logit += hidden[h] * model.w2[h];
    const double score = ops::sigmoid_scalar(logit);

    AuthDecision out;
    out.score = score;
    // a score exactly at the threshold resolves to "not genuine"
    out.decision = score > model.threshold ? model.positive_label : model.negative_label;
    return out;
}

DilutionResult dilution_check(double sample_density, double reference_density,
                              double tolerance_fraction) {
    if (reference_density <= 0)
        throw ValueError("dilution_check: reference density must be positive");
    if (tolerance_fraction < 0 || tolerance_fraction >= 1)
        throw ValueError("dilution_check: tolerance must lie in [0, 1)");
    DilutionResult r;
    r.ratio = sample_density / reference_density;
    r.flagged = r.ratio < 1.0 - tolerance_fraction;
    return r;
}

double distribution_compare(const std::array<int64_t, 3>& counts_a,
                            const std::array<int64_t, 3>& counts_b) {
    const double ta = static_cast<double>(counts_a[0] + counts_a[1] + counts_a[2]);
    const double tb = static_cast<double>(counts_b[0] + counts_b[1] + counts_b[2]);
    if (ta <= 0 || tb <= 0)
        throw ValueError("distribution_compare: both count totals must be positive");
    double tv = 0;
    for (int c = 0; c < 3; ++c)
        tv += std::abs(counts_a[c] / ta - counts_b[c] / tb);
    return tv / 2.0;
}

// --------------------------------------------------------------------------
// PLNA container: config (kind 0), labels (kind 6), two linear layers (kind 5)

namespace {
constexpr char kAuthMagic[4] = {'P', 'L', 'N', 'A'};
}

void save_auth_model(const AuthModel& model, const std::string& path) {
    std::vector<Record> records;
    Record conf;
    conf.kind = 0;
    conf.extents = {4u, static_cast<uint32_t>(model.hidden)};
    std::vector<float> scaler;
    for (double v : model.scaler_mean) scaler.push_back(static_cast<float>(v));
    for (double v : model.scaler_scale) scaler.push_back(static_cast<float>(v));
    conf.buffers.push_back(std::move(scaler));
    conf.buffers.push_back({static_cast<float>(model.threshold),
                            model.non_separable ? 1.f : 0.f, model.converged ? 1.f : 0.f});
    records.push_back(std::move(conf));

    Record labels;
    labels.kind = 6;
    labels.extents = {static_cast<uint32_t>(model.positive_label.size()),
                      static_cast<uint32_t>(model.negative_label.size())};
    std::vector<float> chars;
    for (char c : model.positive_label + model.negative_label)
        chars.push_back(static_cast<float>(static_cast<unsigned char>(c)));
    labels.buffers.push_back(std::move(chars));
    records.push_back(std::move(labels));

    Record l1;
    l1.kind = 5;
    l1.extents = {4u, static_cast<uint32_t>(model.hidden)};
    l1.buffers = {model.w1, model.b1};
    records.push_back(std::move(l1));
    Record l2;
    l2.kind = 5;
    l2.extents = {static_cast<uint32_t>(model.hidden), 1u};
    l2.buffers = {model.w2, model.b2};
    records.push_back(std::move(l2));

    write_container(path, kAuthMagic, records);
}

AuthModel load_auth_model(const std::string& path) {
    const auto records = read_container(path, kAuthMagic);
    if (records.size() != 4 || records[0].kind != 0 || records[1].kind != 6 ||
        records[2].kind != 5 || records[3].kind != 5)
        throw IoError("auth model '" + path + "': unexpected record layout");

    AuthModel model;
    const auto& conf = records[0];
    if (conf.extents.size() != 2 || conf.buffers.size() != 2 || conf.buffers[0].size() != 8 ||
        conf.buffers[1].size() != 3)
        throw IoError("auth model: malformed config record");
    model.hidden = static_cast<int>(conf.extents[1]);
    for (int f = 0; f < 4; ++f) {
        model.scaler_mean[f] = conf.buffers[0][f];
        model.scaler_scale[f] = conf.buffers[0][4 + f];
    }
    model.threshold = conf.buffers[1][0];
    model.non_separable = conf.buffers[1][1] != 0.f;
    model.converged = conf.buffers[1][2] != 0.f;

    const auto& labels = records[1];
    if (labels.extents.size() != 2 || labels.buffers.size() != 1 ||
        labels.buffers[0].size() != labels.extents[0] + labels.extents[1])
        throw IoError("auth model: malformed labels record");
    for (uint32_t i = 0; i < labels.extents[0]; ++i)
        model.positive_label.push_back(static_cast<char>(labels.buffers[0][i]));
    for (uint32_t i = 0; i < labels.extents[1]; ++i)
        model.negative_label.push_back(
            static_cast<char>(labels.buffers[0][labels.extents[0] + i]));

    const auto& l1 = records[2];
    const auto& l2 = records[3];
    if (l1.buffers.size() != 2 || l2.buffers.size() != 2 ||
        l1.buffers[0].size() != static_cast<size_t>(4 * model.hidden) ||
        l1.buffers[1].size() != static_cast<size_t>(model.hidden) ||
        l2.buffers[0].size() != static_cast<size_t>(model.hidden) || l2.buffers[1].size() != 1)
        throw IoError("auth model: layer buffer lengths do not match the config");
    model.w1 = l1.buffers[0];
    model.b1 = l1.buffers[1];
    model.w2 = l2.buffers[0];
    model.b2 = l2.buffers[1];
    return model;
}

}  // namespace pollen
