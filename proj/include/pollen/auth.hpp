#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pollen/boxes.hpp"
#include "pollen/rng.hpp"
#include "pollen/synth.hpp"

namespace pollen {

// Per-sample pollen statistics: class totals over the sample's frames plus
// mean grains per frame. The classifier sees per-frame-normalized values, so
// scaling frames and counts together changes nothing.
struct AuthFeatures {
    std::array<int64_t, 3> counts = {0, 0, 0};
    int64_t frames = 0;

    int64_t total() const { return counts[0] + counts[1] + counts[2]; }
    double density() const;
    std::array<double, 4> feature_vector() const;  // normalized counts + density
};

struct AuthSample {
    AuthFeatures features;
    std::string label;
};

AuthFeatures extract_features(const std::vector<std::vector<Detection>>& per_frame_detections);
AuthFeatures features_from_annotations(const std::vector<Annotation>& frames);

// Class mixture + per-frame density range; the synthetic stand-in for a
// honey variety.
struct HoneyProfile {
    std::string label;
    std::array<double, 3> mixture = {1, 0, 0};
    double density_min = 1, density_max = 1;

    static HoneyProfile eucalyptus();
    static HoneyProfile manuka();
};

// Frame-count draws for one sample: per frame, a total from the density
// range split multinomially across classes.
std::vector<std::array<int, 3>> sample_profile_frames(const HoneyProfile& profile, int frames,
                                                      Rng& rng);
AuthFeatures profile_sample_features(const HoneyProfile& profile, int frames, Rng& rng);

// Slide layouts for one sample (annotation-only path; the CLI renders
// pixels as well when asked to write a dataset).
std::vector<Annotation> profile_sample_annotations(const HoneyProfile& profile, int frames,
                                                   const SlideSpec& base_spec, Rng& rng);

struct AuthConfig {
    int hidden = 8;
    double lr = 0.05;
    int max_epochs = 20000;
    double converge_loss = 1e-3;
    double threshold = 0.5;
    uint64_t seed = 7;
    std::string positive_label;  // defaults to the first sample's label
};

struct AuthModel {
    int hidden = 8;
    std::array<double, 4> scaler_mean = {0, 0, 0, 0};
    std::array<double, 4> scaler_scale = {1, 1, 1, 1};
    std::vector<float> w1, b1;  // 4 x hidden, hidden
    std::vector<float> w2, b2;  // hidden x 1, 1
    std::string positive_label, negative_label;
    double threshold = 0.5;

    bool converged = false;
    bool non_separable = false;
    double final_loss = 0;
    int epochs_run = 0;
};

// Single-hidden-layer classifier on standardized features, full-batch
// gradient descent on binary cross-entropy. Deterministic given the seed.
AuthModel train_auth(const std::vector<AuthSample>& samples, const AuthConfig& config);

struct AuthDecision {
    std::string decision;
    double score = 0;  // sigmoid output: probability of the positive label
};

AuthDecision authenticate(const AuthModel& model, const AuthFeatures& features);

struct DilutionResult {
    double ratio = 0;
    bool flagged = false;
};

// ratio = sample / reference; flagged when it drops below 1 - tolerance.
DilutionResult dilution_check(double sample_density, double reference_density,
                              double tolerance_fraction);

// Total-variation distance between normalized class distributions, in [0,1].
double distribution_compare(const std::array<int64_t, 3>& counts_a,
                            const std::array<int64_t, 3>& counts_b);

void save_auth_model(const AuthModel& model, const std::string& path);
AuthModel load_auth_model(const std::string& path);

}  // namespace pollen
