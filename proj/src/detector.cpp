#include "pollen/detector.hpp"

#include <algorithm>
#include <cmath>

#include "pollen/serialize.hpp"

namespace pollen {

void DetectorConfig::validate() const {
    if (num_anchors <= 0 || num_classes <= 0)
        throw ValueError("detector config: anchor and class counts must be positive");
    if (input_extent <= 0 || input_extent % 32 != 0)
        throw ValueError("detector config: input extent must be a positive multiple of 32");
    if (width_mult <= 0.f) throw ValueError("detector config: width_mult must be positive");
    if (!anchors.empty() && static_cast<int>(anchors.size()) != num_anchors)
        throw ValueError("detector config: anchor list length != num_anchors");
    for (const auto& [w, h] : anchors)
        if (w <= 0.f || h <= 0.f) throw ValueError("detector config: anchors must be positive");
}

std::vector<std::pair<float, float>> DetectorConfig::default_anchors(int count) {
    // Log-spaced square-ish priors between a third of a cell and three cells.
    std::vector<std::pair<float, float>> a;
    a.reserve(count);
    for (int i = 0; i < count; ++i) {
        const float t = count == 1 ? 0.5f : static_cast<float>(i) / (count - 1);
        const float s = 0.33f * std::pow(9.0f, t);
        const float stretch = (i % 2 == 0) ? 1.0f : 1.3f;
        a.emplace_back(s * stretch, s / stretch);
    }
    return a;
}

const std::vector<PlanEntry>& trunk_plan() {
    using K = PlanEntry::Kind;
    static const std::vector<PlanEntry> plan = {
        {K::conv, 32, 3},   {K::pool},          {K::conv, 64, 3},   {K::pool},
        {K::conv, 128, 3},  {K::conv, 64, 1},   {K::conv, 128, 3},  {K::pool},
        {K::conv, 256, 3},  {K::conv, 128, 1},  {K::conv, 256, 3},  {K::pool},
        {K::conv, 512, 3},  {K::conv, 256, 1},  {K::conv, 512, 3},  {K::pool},
        {K::conv, 1024, 3}, {K::conv, 512, 1},  {K::conv, 1024, 3}, {K::conv, 512, 1},
        {K::conv, 1024, 3}, {K::conv, 1024, 3}, {K::conv, 1024, 3},
    };
    return plan;
}

int trunk_skip_tap() { return 14; }  // the 512-filter 3x3 conv before the starred pool

int64_t scaled_width(int64_t canonical, float width_mult) {
    if (width_mult == 1.0f) return canonical;
    return std::max<int64_t>(4, std::lround(static_cast<double>(canonical) * width_mult));
}

namespace {

template <class T>
ConvLayer<T> make_conv(Rng& rng, int64_t k, int64_t cin, int64_t cout, bool has_bn,
                       bool linear_act) {
    ConvLayer<T> layer;
    layer.k = k;
    layer.cin = cin;
    layer.cout = cout;
    layer.has_bn = has_bn;
    layer.linear_act = linear_act;
    const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(k * k * cin)));
    layer.kernel = TensorT<T>::randn({k, k, cin, cout}, rng, stddev, true);
    layer.bias = TensorT<T>::zeros({cout}, true);
    if (has_bn) {
        layer.gamma = TensorT<T>::full({cout}, T(1), true);
        layer.beta = TensorT<T>::zeros({cout}, true);
        layer.running_mean.assign(static_cast<size_t>(cout), T(0));
        layer.running_var.assign(static_cast<size_t>(cout), T(1));
    }
    return layer;
}

template <class T>
TensorT<T> apply_conv(const DetectorConfig& cfg, ConvLayer<T>& layer, const TensorT<T>& x,
                      bool training) {
    auto out = ops::conv2d(x, layer.kernel, layer.bias, 1, kern::Pad::same);
    if (layer.has_bn)
        out = ops::batch_norm(out, layer.gamma, layer.beta, layer.running_mean,
                              layer.running_var, training, static_cast<T>(cfg.bn_momentum),
                              static_cast<T>(cfg.bn_eps));
    if (!layer.linear_act) out = ops::leaky_relu(out, static_cast<T>(cfg.leaky_slope));
    return out;
}

void audit_push(ShapeAudit* audit, const char* label, const std::vector<int64_t>& shape) {
    if (audit) audit->entries.emplace_back(label, shape);
}

}  // namespace

template <class T>
std::vector<TensorT<T>> DetectorModel<T>::parameters() {
    std::vector<TensorT<T>> out;
    auto push = [&out](ConvLayer<T>& c) {
        out.push_back(c.kernel);
        out.push_back(c.bias);
        if (c.has_bn) {
            out.push_back(c.gamma);
            out.push_back(c.beta);
        }
    };
    for (auto& c : trunk) push(c);
    push(skip_conv);
    push(pre_head);
    push(head);
    return out;
}

template <class T>
int64_t DetectorModel<T>::parameter_count() {
    int64_t n = 0;
    for (auto& p : parameters()) n += p.numel();
    return n;
}

template <class T>
DetectorModel<T> build_network(const DetectorConfig& config, Rng& rng) {
    config.validate();
    DetectorModel<T> model;
    model.config = config;
    if (model.config.anchors.empty())
        model.config.anchors = DetectorConfig::default_anchors(config.num_anchors);
    model.config.validate();

    int64_t channels = 3;
    for (const auto& entry : trunk_plan()) {
        if (entry.kind == PlanEntry::pool) continue;
        const int64_t cout = scaled_width(entry.filters, config.width_mult);
        model.trunk.push_back(make_conv<T>(rng, entry.ksize, channels, cout, true, false));
        channels = cout;
    }
    const int64_t tap_channels =
        scaled_width(trunk_plan()[trunk_skip_tap()].filters, config.width_mult);
    const int64_t skip_out = scaled_width(64, config.width_mult);
    model.skip_conv = make_conv<T>(rng, 1, tap_channels, skip_out, true, false);
    const int64_t concat_channels = channels + skip_out * 4;
    model.pre_head =
        make_conv<T>(rng, 3, concat_channels, scaled_width(1024, config.width_mult), true, false);
    model.head = make_conv<T>(rng, 1, model.pre_head.cout, config.head_channels(), false, true);
    return model;
}

template <class T>
TensorT<T> forward(DetectorModel<T>& model, const TensorT<T>& image, ShapeAudit* audit) {
    const auto& cfg = model.config;
    if (image.shape() != std::vector<int64_t>{cfg.input_extent, cfg.input_extent, 3})
        throw ShapeError("detector forward: expected " + std::to_string(cfg.input_extent) + "x" +
                         std::to_string(cfg.input_extent) + "x3 input, got " +
                         TensorT<T>::shape_str(image.shape()));

    TensorT<T> x = image;
    TensorT<T> tap;
    size_t conv_idx = 0;
    const auto& plan = trunk_plan();
    for (size_t pi = 0; pi < plan.size(); ++pi) {
        if (plan[pi].kind == PlanEntry::conv) {
            x = apply_conv(cfg, model.trunk[conv_idx++], x, model.training);
            audit_push(audit, "conv", x.shape());
        } else {
            x = ops::maxpool2(x);
            audit_push(audit, "maxpool", x.shape());
        }
        if (static_cast<int>(pi) == trunk_skip_tap()) tap = x;
    }

    auto skip = apply_conv(cfg, model.skip_conv, tap, model.training);
    audit_push(audit, "skip_conv", skip.shape());
    skip = ops::space_to_depth(skip, 2);
    audit_push(audit, "space_to_depth", skip.shape());

    x = ops::concat_channels(x, skip);
    audit_push(audit, "concat", x.shape());

    x = apply_conv(cfg, model.pre_head, x, model.training);
    audit_push(audit, "conv", x.shape());
    x = apply_conv(cfg, model.head, x, model.training);
    audit_push(audit, "head", x.shape());

    const int64_t s = cfg.grid();
    x = ops::reshape(x, {s, s, cfg.num_anchors, 5 + cfg.num_classes});
    audit_push(audit, "reshape", x.shape());
    return x;
}

std::vector<std::vector<int64_t>> expected_output_shapes(const DetectorConfig& cfg) {
    std::vector<std::vector<int64_t>> rows;
    int64_t e = cfg.input_extent;
    int64_t channels = 3;
    for (const auto& entry : trunk_plan()) {
        if (entry.kind == PlanEntry::conv) {
            channels = scaled_width(entry.filters, cfg.width_mult);
        } else {
            e /= 2;
        }
        rows.push_back({e, e, channels});
    }
    const int64_t skip_out = scaled_width(64, cfg.width_mult);
    const int64_t tap_extent = cfg.input_extent / 16;
    rows.push_back({tap_extent, tap_extent, skip_out});               // skip conv
    rows.push_back({tap_extent / 2, tap_extent / 2, skip_out * 4});   // space_to_depth
    rows.push_back({e, e, channels + skip_out * 4});                  // concat
    rows.push_back({e, e, scaled_width(1024, cfg.width_mult)});       // pre-head conv
    rows.push_back({e, e, cfg.head_channels()});                      // head
    rows.push_back({e, e, cfg.num_anchors, 5 + cfg.num_classes});     // reshape
    return rows;
}

std::vector<Detection> decode(const Tensor& raw, const DetectorConfig& cfg,
                              double conf_threshold) {
    const int64_t s = cfg.grid();
    const int64_t b = cfg.num_anchors;
    const int64_t c = cfg.num_classes;
    if (raw.shape() != std::vector<int64_t>{s, s, b, 5 + c})
        throw ShapeError("decode: raw grid shape " + Tensor::shape_str(raw.shape()) +
                         " does not match config");
    const double cell = static_cast<double>(cfg.input_extent) / static_cast<double>(s);
    const float* v = raw.raw();
    std::vector<Detection> dets;
    std::vector<double> probs(static_cast<size_t>(c));
    for (int64_t i = 0; i < s; ++i) {
        for (int64_t j = 0; j < s; ++j) {
            for (int64_t a = 0; a < b; ++a) {
                const float* p = v + ((i * s + j) * b + a) * (5 + c);
                const double so = ops::sigmoid_scalar(static_cast<double>(p[4]));
                // softmax over class logits, max-subtracted
                double mx = p[5];
                for (int64_t k = 1; k < c; ++k) mx = std::max(mx, static_cast<double>(p[5 + k]));
                double denom = 0;
                for (int64_t k = 0; k < c; ++k) {
                    probs[k] = std::exp(static_cast<double>(p[5 + k]) - mx);
                    denom += probs[k];
                }
                int best = 0;
                for (int64_t k = 1; k < c; ++k)
                    if (probs[k] > probs[best]) best = static_cast<int>(k);
                const double conf = so * probs[best] / denom;
                if (conf < conf_threshold) continue;
                Detection d;
                d.class_id = best;
                d.confidence = conf;
                d.box.cx = (ops::sigmoid_scalar(static_cast<double>(p[0])) + j) * cell;
                d.box.cy = (ops::sigmoid_scalar(static_cast<double>(p[1])) + i) * cell;
                d.box.w = cfg.anchors[a].first * std::exp(static_cast<double>(p[2])) * cell;
                d.box.h = cfg.anchors[a].second * std::exp(static_cast<double>(p[3])) * cell;
                dets.push_back(std::move(d));
            }
        }
    }
    return dets;
}

void scale_detections(std::vector<Detection>& dets, double sx, double sy) {
    for (auto& d : dets) {
        d.box.cx *= sx;
        d.box.w *= sx;
        d.box.cy *= sy;
        d.box.h *= sy;
    }
}

// --------------------------------------------------------------------------
// Serialization. Record kinds: 0 config, 1 conv, 2 maxpool, 3 space_to_depth,
// 4 concat, 6 labels. Convs appear in forward order (trunk, skip, pre-head,
// head); pool/s2d/concat records make the stack self-describing.

namespace {

constexpr char kDetectorMagic[4] = {'P', 'L', 'N', 'W'};

enum RecordKind : uint32_t {
    kConfig = 0,
    kConv = 1,
    kMaxPool = 2,
    kSpaceToDepth = 3,
    kConcat = 4,
    kLabels = 6,
};

Record conv_record(const ConvLayer<float>& c) {
    Record r;
    r.kind = kConv;
    r.extents = {static_cast<uint32_t>(c.k), static_cast<uint32_t>(c.cin),
                 static_cast<uint32_t>(c.cout), c.has_bn ? 1u : 0u, c.linear_act ? 1u : 0u};
    r.buffers.push_back(c.kernel.data());
    r.buffers.push_back(c.bias.data());
    if (c.has_bn) {
        r.buffers.push_back(c.gamma.data());
        r.buffers.push_back(c.beta.data());
        r.buffers.push_back(c.running_mean);
        r.buffers.push_back(c.running_var);
    }
    return r;
}

void load_conv(const Record& r, ConvLayer<float>& c, size_t index) {
    const std::string where = "conv record " + std::to_string(index);
    if (r.extents.size() != 5) throw IoError("weights: malformed " + where);
    const auto k = static_cast<int64_t>(r.extents[0]);
    const auto cin = static_cast<int64_t>(r.extents[1]);
    const auto cout = static_cast<int64_t>(r.extents[2]);
    const bool has_bn = r.extents[3] != 0;
    if (k != c.k || cin != c.cin || cout != c.cout || has_bn != c.has_bn)
        throw IoError("weights: " + where + " does not match the architecture (" +
                      std::to_string(k) + "x" + std::to_string(k) + "x" + std::to_string(cin) +
                      "x" + std::to_string(cout) + ")");
    if (r.buffers.size() != (has_bn ? 6u : 2u))
        throw IoError("weights: " + where + " has wrong buffer count");
    auto assign = [&where](Tensor& t, const std::vector<float>& buf, const char* name) {
        if (static_cast<int64_t>(buf.size()) != t.numel())
            throw IoError("weights: " + where + " " + name + " length mismatch");
        t.data() = buf;
    };
    assign(c.kernel, r.buffers[0], "kernel");
    assign(c.bias, r.buffers[1], "bias");
    if (has_bn) {
        assign(c.gamma, r.buffers[2], "gamma");
        assign(c.beta, r.buffers[3], "beta");
        if (r.buffers[4].size() != c.running_mean.size() ||
            r.buffers[5].size() != c.running_var.size())
            throw IoError("weights: " + where + " running-stat length mismatch");
        c.running_mean = r.buffers[4];
        c.running_var = r.buffers[5];
    }
}

}  // namespace

void save_weights(DetectorModel<float>& model, const std::string& path) {
    const auto& cfg = model.config;
    std::vector<Record> records;

    Record conf;
    conf.kind = kConfig;
    conf.extents = {static_cast<uint32_t>(cfg.input_extent), static_cast<uint32_t>(cfg.num_anchors),
                    static_cast<uint32_t>(cfg.num_classes)};
    std::vector<float> aflat;
    for (const auto& [w, h] : cfg.anchors) {
        aflat.push_back(w);
        aflat.push_back(h);
    }
    conf.buffers.push_back(std::move(aflat));
    conf.buffers.push_back({cfg.width_mult, cfg.leaky_slope, cfg.bn_eps, cfg.bn_momentum});
    records.push_back(std::move(conf));

    Record labels;
    labels.kind = kLabels;
    std::vector<float> chars;
    for (const auto& name : cfg.class_names) {
        labels.extents.push_back(static_cast<uint32_t>(name.size()));
        for (char ch : name) chars.push_back(static_cast<float>(static_cast<unsigned char>(ch)));
    }
    labels.buffers.push_back(std::move(chars));
    records.push_back(std::move(labels));

    size_t conv_idx = 0;
    for (const auto& entry : trunk_plan()) {
        if (entry.kind == PlanEntry::conv) {
            records.push_back(conv_record(model.trunk[conv_idx++]));
        } else {
            Record r;
            r.kind = kMaxPool;
            records.push_back(std::move(r));
        }
    }
    records.push_back(conv_record(model.skip_conv));
    Record s2d;
    s2d.kind = kSpaceToDepth;
    s2d.extents = {2};
    records.push_back(std::move(s2d));
    Record cat;
    cat.kind = kConcat;
    cat.extents = {static_cast<uint32_t>(trunk_skip_tap())};
    records.push_back(std::move(cat));
    records.push_back(conv_record(model.pre_head));
    records.push_back(conv_record(model.head));

    write_container(path, kDetectorMagic, records);
}

DetectorModel<float> load_weights(const std::string& path) {
    const auto records = read_container(path, kDetectorMagic);
    if (records.size() < 2 || records[0].kind != kConfig)
        throw IoError("weights: missing config record in '" + path + "'");
    const auto& conf = records[0];
    if (conf.extents.size() != 3 || conf.buffers.size() != 2 || conf.buffers[1].size() != 4)
        throw IoError("weights: malformed config record");

    DetectorConfig cfg;
    cfg.input_extent = conf.extents[0];
    cfg.num_anchors = static_cast<int>(conf.extents[1]);
    cfg.num_classes = static_cast<int>(conf.extents[2]);
    if (conf.buffers[0].size() != static_cast<size_t>(cfg.num_anchors) * 2)
        throw IoError("weights: anchor buffer length mismatch");
    for (int i = 0; i < cfg.num_anchors; ++i)
        cfg.anchors.emplace_back(conf.buffers[0][2 * i], conf.buffers[0][2 * i + 1]);
    cfg.width_mult = conf.buffers[1][0];
    cfg.leaky_slope = conf.buffers[1][1];
    cfg.bn_eps = conf.buffers[1][2];
    cfg.bn_momentum = conf.buffers[1][3];

    if (records[1].kind == kLabels) {
        const auto& lab = records[1];
        if (lab.buffers.size() != 1) throw IoError("weights: malformed labels record");
        cfg.class_names.clear();
        size_t pos = 0;
        for (uint32_t len : lab.extents) {
            if (pos + len > lab.buffers[0].size())
                throw IoError("weights: labels record overruns its buffer");
            std::string name;
            for (uint32_t i = 0; i < len; ++i)
                name.push_back(static_cast<char>(lab.buffers[0][pos + i]));
            cfg.class_names.push_back(std::move(name));
            pos += len;
        }
    }
    if (static_cast<int>(cfg.class_names.size()) != cfg.num_classes)
        throw IoError("weights: class-name count does not match class count");

    Rng rng(0);  // values are overwritten below
    auto model = build_network<float>(cfg, rng);

    size_t rec_idx = 2;
    auto next_record = [&](uint32_t kind, const char* what) -> const Record& {
        if (rec_idx >= records.size())
            throw IoError("weights: missing " + std::string(what) + " record");
        const Record& r = records[rec_idx++];
        if (r.kind != kind)
            throw IoError("weights: expected " + std::string(what) + " record at index " +
                          std::to_string(rec_idx - 1) + ", found kind " + std::to_string(r.kind));
        return r;
    };

    size_t conv_idx = 0;
    for (const auto& entry : trunk_plan()) {
        if (entry.kind == PlanEntry::conv) {
            load_conv(next_record(kConv, "conv"), model.trunk[conv_idx], conv_idx);
            ++conv_idx;
        } else {
            next_record(kMaxPool, "maxpool");
        }
    }
    load_conv(next_record(kConv, "skip conv"), model.skip_conv, conv_idx++);
    next_record(kSpaceToDepth, "space_to_depth");
    next_record(kConcat, "concat");
    load_conv(next_record(kConv, "pre-head conv"), model.pre_head, conv_idx++);
    load_conv(next_record(kConv, "head conv"), model.head, conv_idx++);
    if (rec_idx != records.size())
        throw IoError("weights: " + std::to_string(records.size() - rec_idx) +
                      " unexpected trailing records");
    return model;
}

void save_detections(const std::vector<Detection>& dets,
                     const std::vector<std::string>& class_names, const std::string& path) {
    std::string out;
    char buf[256];
    for (const auto& d : dets) {
        if (d.class_id < 0 || d.class_id >= static_cast<int>(class_names.size()))
            throw ValueError("save_detections: class id " + std::to_string(d.class_id) +
                             " has no name");
        std::snprintf(buf, sizeof(buf), "%s %s %.6g %.6g %.6g %.6g %.6g\n", d.image_id.c_str(),
                      class_names[d.class_id].c_str(), d.box.cx, d.box.cy, d.box.w, d.box.h,
                      d.confidence);
        out += buf;
    }
    write_file_atomic(path, out);
}

std::vector<Detection> load_detections(const std::string& path,
                                       const std::vector<std::string>& class_names) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open detections '" + path + "'");
    std::vector<Detection> out;
    char image[256], cls[128];
    double cx, cy, w, h, conf;
    int line = 0;
    char linebuf[1024];
    while (std::fgets(linebuf, sizeof(linebuf), f)) {
        ++line;
        if (linebuf[0] == '\n' || linebuf[0] == '\0') continue;
        if (std::sscanf(linebuf, "%255s %127s %lf %lf %lf %lf %lf", image, cls, &cx, &cy, &w, &h,
                        &conf) != 7) {
            std::fclose(f);
            throw IoError("detections '" + path + "' line " + std::to_string(line) +
                          ": expected 'image class cx cy w h confidence'");
        }
        Detection d;
        d.image_id = image;
        d.box = {cx, cy, w, h};
        d.confidence = conf;
        d.class_id = -1;
        for (size_t c = 0; c < class_names.size(); ++c)
            if (class_names[c] == cls) d.class_id = static_cast<int>(c);
        if (d.class_id < 0) {
            std::fclose(f);
            throw IoError("detections '" + path + "' line " + std::to_string(line) +
                          ": unknown class '" + std::string(cls) + "'");
        }
        out.push_back(std::move(d));
    }
    std::fclose(f);
    return out;
}

template struct DetectorModel<float>;
template struct DetectorModel<double>;
template DetectorModel<float> build_network<float>(const DetectorConfig&, Rng&);
template DetectorModel<double> build_network<double>(const DetectorConfig&, Rng&);
template TensorT<float> forward<float>(DetectorModel<float>&, const TensorT<float>&, ShapeAudit*);
template TensorT<double> forward<double>(DetectorModel<double>&, const TensorT<double>&,
                                         ShapeAudit*);

}  // namespace pollen
