#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pollen/boxes.hpp"
#include "pollen/ops.hpp"
#include "pollen/rng.hpp"
#include "pollen/tensor.hpp"

namespace pollen {

// Geometry and hyperparameters of the detector. Defaults reproduce the
// reference architecture exactly: 416 input, 13x13 grid, 10 anchors, 3
// classes, full filter widths. width_mult scales the interior filter counts
// (head stays B*(5+C)) for budgeted training runs; 1.0 is the canonical net.
struct DetectorConfig {
    int64_t input_extent = 416;
    int num_anchors = 10;
    int num_classes = 3;
    float width_mult = 1.0f;
    std::vector<std::pair<float, float>> anchors;  // (w,h) in grid-cell units
    std::vector<std::string> class_names = {"round", "triangular", "spiky"};

    float leaky_slope = 0.1f;
    float bn_eps = 1e-5f;
    float bn_momentum = 0.99f;

    int64_t grid() const { return input_extent / 32; }
    int64_t cell_pixels() const { return 32; }
    int64_t head_channels() const { return int64_t(num_anchors) * (5 + num_classes); }

    void validate() const;
    // Fallback priors spread over plausible grain sizes, used before k-means.
    static std::vector<std::pair<float, float>> default_anchors(int count);
};

template <class T>
struct ConvLayer {
    TensorT<T> kernel;  // k x k x cin x cout
    TensorT<T> bias;    // cout
    TensorT<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    int64_t k = 3, cin = 0, cout = 0;
    bool has_bn = true;
    bool linear_act = false;
};

struct ShapeAudit {
    std::vector<std::pair<std::string, std::vector<int64_t>>> entries;
};

// Layer stack: trunk convs/pools, a 1x1 skip conv on the pre-pool 2S x 2S
// tap reorganized to S x S, channel concat, one 3x3 conv, then the 1x1 head.
template <class T>
struct DetectorModel {
    DetectorConfig config;
    std::vector<ConvLayer<T>> trunk;   // convs only; pool positions come from the plan
    ConvLayer<T> skip_conv;
    ConvLayer<T> pre_head;
    ConvLayer<T> head;
    bool training = false;

    std::vector<TensorT<T>> parameters();
    int64_t parameter_count();
};

// Trunk plan shared by the builder, forward pass and serializer.
struct PlanEntry {
    enum Kind { conv, pool } kind;
    int64_t filters = 0;  // canonical width before width_mult
    int64_t ksize = 0;
};
const std::vector<PlanEntry>& trunk_plan();
int trunk_skip_tap();  // plan index of the conv whose output feeds the skip

int64_t scaled_width(int64_t canonical, float width_mult);

template <class T>
DetectorModel<T> build_network(const DetectorConfig& config, Rng& rng);

template <class T>
TensorT<T> forward(DetectorModel<T>& model, const TensorT<T>& image, ShapeAudit* audit = nullptr);

// Raw grid -> thresholded detections in network pixel coordinates.
std::vector<Detection> decode(const Tensor& raw, const DetectorConfig& config,
                              double conf_threshold);

void scale_detections(std::vector<Detection>& dets, double sx, double sy);

void save_weights(DetectorModel<float>& model, const std::string& path);
DetectorModel<float> load_weights(const std::string& path);

// Line-oriented detection records: image_id class_name cx cy w h confidence
// (floats at 6 significant digits).
void save_detections(const std::vector<Detection>& dets,
                     const std::vector<std::string>& class_names, const std::string& path);
std::vector<Detection> load_detections(const std::string& path,
                                       const std::vector<std::string>& class_names);

// Expected audit rows for a config (the Output column, through the concat,
// plus skip/head/reshape rows). Used by the shape-conformance checks.
std::vector<std::vector<int64_t>> expected_output_shapes(const DetectorConfig& config);

extern template struct DetectorModel<float>;
extern template struct DetectorModel<double>;
extern template DetectorModel<float> build_network<float>(const DetectorConfig&, Rng&);
extern template DetectorModel<double> build_network<double>(const DetectorConfig&, Rng&);
extern template TensorT<float> forward<float>(DetectorModel<float>&, const TensorT<float>&,
                                              ShapeAudit*);
extern template TensorT<double> forward<double>(DetectorModel<double>&, const TensorT<double>&,
                                                ShapeAudit*);

}  // namespace pollen
