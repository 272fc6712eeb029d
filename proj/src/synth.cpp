#include "pollen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pollen/crc32.hpp"
#include "pollen/errors.hpp"
#include "pollen/serialize.hpp"

namespace pollen {

namespace fs = std::filesystem;
using nlohmann::json;

void SlideSpec::validate() const {
    if (extent <= 0) throw ValueError("slide spec: extent must be positive");
    for (int c = 0; c < 3; ++c)
        if (count_min[c] < 0 || count_max[c] < count_min[c])
            throw ValueError("slide spec: bad count range for class " + std::to_string(c));
    if (bubble_min < 0 || bubble_max < bubble_min)
        throw ValueError("slide spec: bad bubble count range");
    if (overlap_limit < 0 || overlap_limit >= 1)
        throw ValueError("slide spec: overlap limit must lie in [0, 1)");
    if (round_radius_min <= 0 || tri_radius_min <= 0 || spiky_core_min <= 0)
        throw ValueError("slide spec: radii must be positive");
    if (noise_amplitude < 0 || blur_sigma < 0)
        throw ValueError("slide spec: blur/noise must be non-negative");
}

SlideSpec SlideSpec::scaled_to(int64_t new_extent) const {
    SlideSpec s = *this;
    const double f = static_cast<double>(new_extent) / static_cast<double>(extent);
    s.extent = new_extent;
    s.round_radius_min *= f;
    s.round_radius_max *= f;
    s.tri_radius_min *= f;
    s.tri_radius_max *= f;
    s.spiky_core_min *= f;
    s.spiky_core_max *= f;
    s.spike_len_min *= f;
    s.spike_len_max *= f;
    s.bubble_radius_min *= f;
    s.bubble_radius_max *= f;
    s.blur_sigma *= f;
    return s;
}

namespace {

constexpr double kAaHalf = 0.5;  // anti-alias band; footprints stop here exactly
constexpr double kTwoPi = 6.283185307179586476925286766559;

// Exact support bounds per shape (the rendering coverage is zero outside).
BoundingBox disc_bounds(double cx, double cy, double r) {
    BoundingBox b;
    b.cx = cx;
    b.cy = cy;
    b.w = 2 * (r + kAaHalf);
    b.h = 2 * (r + kAaHalf);
    return b;
}

BoundingBox triangle_bounds(double cx, double cy, double r, double rot) {
    // Rounded triangle = convex hull of three corner discs of radius rho
    // centered at (r - rho) from the middle; bbox follows from those discs.
    const double rho = 0.18 * r;
    double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30;
    for (int k = 0; k < 3; ++k) {
        const double a = rot + k * (kTwoPi / 3);
        const double px = cx + (r - rho) * std::cos(a);
        const double py = cy + (r - rho) * std::sin(a);
        xmin = std::min(xmin, px - rho - kAaHalf);
        xmax = std::max(xmax, px + rho + kAaHalf);
        ymin = std::min(ymin, py - rho - kAaHalf);
        ymax = std::max(ymax, py + rho + kAaHalf);
    }
    BoundingBox b;
    b.cx = (xmin + xmax) / 2;
    b.cy = (ymin + ymax) / 2;
    b.w = xmax - xmin;
    b.h = ymax - ymin;
    return b;
}

BoundingBox spiky_bounds(double cx, double cy, double core, double spike_len, int spikes,
                         double rot) {
    double xmin = cx - core - kAaHalf, xmax = cx + core + kAaHalf;
    double ymin = cy - core - kAaHalf, ymax = cy + core + kAaHalf;
    for (int k = 0; k < spikes; ++k) {
        const double a = rot + k * kTwoPi / spikes;
        const double tx = cx + (core + spike_len) * std::cos(a);
        const double ty = cy + (core + spike_len) * std::sin(a);
        xmin = std::min(xmin, tx - kAaHalf);
        xmax = std::max(xmax, tx + kAaHalf);
        ymin = std::min(ymin, ty - kAaHalf);
        ymax = std::max(ymax, ty + kAaHalf);
    }
    BoundingBox b;
    b.cx = (xmin + xmax) / 2;
    b.cy = (ymin + ymax) / 2;
    b.w = xmax - xmin;
    b.h = ymax - ymin;
    return b;
}

double coverage_from_sd(double sd) {
    // signed distance -> [0,1] coverage over a 1px anti-alias band
    return std::clamp(kAaHalf - sd, 0.0, 1.0);
}

// Exact signed distance to an equilateral triangle (centered, circumradius
// rc, rotated), negative inside. Euclidean beyond the corners, so that
// subtracting a rounding radius is a true Minkowski offset and the rounded
// shape stays inside the corner-disc bounds.
double triangle_sd(double x, double y, double rc, double rot) {
    double px[3], py[3];
    for (int k = 0; k < 3; ++k) {
        const double a = rot + k * (kTwoPi / 3);
        px[k] = rc * std::cos(a);
        py[k] = rc * std::sin(a);
    }
    double best = 1e30;
    double sign_accum = 1.0;
    for (int k = 0; k < 3; ++k) {
        const int j = (k + 1) % 3;
        const double ex = px[j] - px[k], ey = py[j] - py[k];
        const double wx = x - px[k], wy = y - py[k];
        const double t = std::clamp((wx * ex + wy * ey) / (ex * ex + ey * ey), 0.0, 1.0);
        const double dx = wx - t * ex, dy = wy - t * ey;
        best = std::min(best, dx * dx + dy * dy);
        const double cross = ex * wy - ey * wx;
        if (cross < 0) sign_accum = -1.0;  // corners are counter-clockwise
    }
    return (sign_accum < 0 ? 1.0 : -1.0) * std::sqrt(best);
}

struct Canvas {
    int64_t extent;
    std::vector<float> rgb;  // extent^2 * 3
    float* at(int64_t y, int64_t x) { return rgb.data() + (y * extent + x) * 3; }
};

void blend(Canvas& canvas, int64_t y, int64_t x, double alpha, const std::array<float, 3>& color) {
    if (alpha <= 0) return;
    float* p = canvas.at(y, x);
    for (int ch = 0; ch < 3; ++ch)
        p[ch] = static_cast<float>(p[ch] * (1 - alpha) + color[ch] * alpha);
}

struct Speckle {
    double dx, dy, r;
};

void render_object(Canvas& canvas, const SlideLayout::Object& o,
                   const std::vector<Speckle>& speckles) {
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(o.bounds.left())));
    const int64_t x1 =
        std::min<int64_t>(canvas.extent - 1, static_cast<int64_t>(std::ceil(o.bounds.right())));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(o.bounds.top())));
    const int64_t y1 =
        std::min<int64_t>(canvas.extent - 1, static_cast<int64_t>(std::ceil(o.bounds.bottom())));

    for (int64_t y = y0; y <= y1; ++y) {
        for (int64_t x = x0; x <= x1; ++x) {
            const double px = x + 0.5 - o.cx;
            const double py = y + 0.5 - o.cy;
            const double dist = std::sqrt(px * px + py * py);
            switch (o.kind) {
                case 0: {  // round: fill + darker rim + speckle
                    const double alpha = coverage_from_sd(dist - o.radius);
                    if (alpha <= 0) break;
                    std::array<float, 3> col = o.color;
                    if (dist > o.radius - 3.0) {
                        for (auto& v : col) v *= 0.55f;  // rim
                    } else {
                        for (const auto& sp : speckles) {
                            const double sdx = px - sp.dx, sdy = py - sp.dy;
                            if (sdx * sdx + sdy * sdy < sp.r * sp.r) {
                                for (auto& v : col) v *= 0.62f;
                                break;
                            }
                        }
                    }
                    blend(canvas, y, x, alpha, col);
                    break;
                }
                case 1: {  // rounded triangle
                    const double rho = 0.18 * o.radius;
                    const double sd = triangle_sd(px, py, o.radius - rho, o.rotation) - rho;
                    const double alpha = coverage_from_sd(sd);
                    if (alpha <= 0) break;
                    std::array<float, 3> col = o.color;
                    if (sd > -2.5) {
                        for (auto& v : col) v *= 0.6f;
                    }
                    blend(canvas, y, x, alpha, col);
                    break;
                }
                case 2: {  // spiked disc
                    double phi = std::atan2(py, px) - o.rotation;
                    phi -= std::floor(phi / (kTwoPi / o.spikes)) * (kTwoPi / o.spikes);
                    const double off = std::min(phi, kTwoPi / o.spikes - phi);  // to spike axis
                    // triangular spike profile: full length on axis, gone at half-width
                    const double half_width = 0.35 * (kTwoPi / o.spikes);
                    const double boundary =
                        o.radius +
                        (off < half_width ? o.spike_len * (1.0 - off / half_width) : 0.0);
                    const double alpha = coverage_from_sd(dist - boundary);
                    if (alpha <= 0) break;
                    std::array<float, 3> col = o.color;
                    if (dist > boundary - 2.5) {
                        for (auto& v : col) v *= 0.6f;
                    } else if (dist > o.radius - 2.0 && dist < o.radius + 2.0) {
                        for (auto& v : col) v *= 0.82f;  // faint core outline
                    }
                    blend(canvas, y, x, alpha, col);
                    break;
                }
                case 3: {  // bubble: thin bright ring with dark outer edge
                    const double t = o.ring_width;
                    const double sd = std::abs(dist - o.radius) - t;
                    const double alpha = coverage_from_sd(sd);
                    if (alpha <= 0) break;
                    const bool outer = dist > o.radius;
                    std::array<float, 3> col = outer
                                                   ? std::array<float, 3>{70.f, 66.f, 60.f}
                                                   : std::array<float, 3>{250.f, 249.f, 246.f};
                    blend(canvas, y, x, alpha * 0.9, col);
                    break;
                }
            }
        }
    }
}

void gaussian_blur(Canvas& canvas, double sigma) {
    if (sigma <= 0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<float> taps(2 * radius + 1);
    float norm = 0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = static_cast<float>(std::exp(-(i * i) / (2 * sigma * sigma)));
        norm += taps[i + radius];
    }
    for (auto& t : taps) t /= norm;

    const int64_t e = canvas.extent;
    std::vector<float> tmp(canvas.rgb.size());
#pragma omp parallel for schedule(static)
    for (int64_t y = 0; y < e; ++y) {
        for (int64_t x = 0; x < e; ++x) {
            float acc[3] = {0, 0, 0};
            for (int i = -radius; i <= radius; ++i) {
                const int64_t xx = std::clamp<int64_t>(x + i, 0, e - 1);
                const float* p = canvas.at(y, xx);
                const float t = taps[i + radius];
                acc[0] += t * p[0];
                acc[1] += t * p[1];
                acc[2] += t * p[2];
            }
            float* q = tmp.data() + (y * e + x) * 3;
            q[0] = acc[0];
            q[1] = acc[1];
            q[2] = acc[2];
        }
    }
#pragma omp parallel for schedule(static)
    for (int64_t y = 0; y < e; ++y) {
        for (int64_t x = 0; x < e; ++x) {
            float acc[3] = {0, 0, 0};
            for (int i = -radius; i <= radius; ++i) {
                const int64_t yy = std::clamp<int64_t>(y + i, 0, e - 1);
                const float* p = tmp.data() + (yy * e + x) * 3;
                const float t = taps[i + radius];
                acc[0] += t * p[0];
                acc[1] += t * p[1];
                acc[2] += t * p[2];
            }
            float* q = canvas.at(y, x);
            q[0] = acc[0];
            q[1] = acc[1];
            q[2] = acc[2];
        }
    }
}

std::array<float, 3> jitter_color(Rng& rng, float r, float g, float b, float spread) {
    return {r + static_cast<float>(rng.uniform(-spread, spread)),
            g + static_cast<float>(rng.uniform(-spread, spread)),
            b + static_cast<float>(rng.uniform(-spread, spread))};
}

}  // namespace

SlideLayout place_objects(const SlideSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    SlideLayout layout;

    std::array<int, 3> counts;
    for (int c = 0; c < 3; ++c)
        counts[c] = static_cast<int>(rng.uniform_int(spec.count_min[c], spec.count_max[c]));
    const int bubbles = static_cast<int>(rng.uniform_int(spec.bubble_min, spec.bubble_max));

    auto try_place = [&](SlideLayout::Object proto,
                         auto&& bounds_of) -> void {
        const BoundingBox probe = bounds_of(0.0, 0.0, proto);
        // margin keeps the support inside the frame (checked exactly below)
        const double margin =
            std::min(std::max(probe.w, probe.h) / 2 + 1, spec.extent / 2.0 - 1);
        for (int attempt = 0; attempt < 1000; ++attempt) {
            SlideLayout::Object o = proto;
            o.cx = rng.uniform(margin, spec.extent - margin);
            o.cy = rng.uniform(margin, spec.extent - margin);
            o.bounds = bounds_of(o.cx, o.cy, o);
            bool ok = o.bounds.left() >= 0 && o.bounds.top() >= 0 &&
                      o.bounds.right() <= spec.extent && o.bounds.bottom() <= spec.extent;
            for (const auto& placed : layout.objects) {
                if (!ok) break;
                if (iou(o.bounds, placed.bounds) > spec.overlap_limit) ok = false;
            }
            if (ok) {
                layout.objects.push_back(o);
                return;
            }
        }
        throw ValueError(
            "slide generation: could not place an object after 1000 attempts; "
            "lower the counts, sizes or overlap limit");
    };

    for (int i = 0; i < counts[0]; ++i) {
        SlideLayout::Object o;
        o.kind = 0;
        o.radius = rng.uniform(spec.round_radius_min, spec.round_radius_max);
        o.color = jitter_color(rng, 172, 136, 88, 14);
        try_place(o, [](double cx, double cy, const SlideLayout::Object& obj) {
            return disc_bounds(cx, cy, obj.radius);
        });
    }
    for (int i = 0; i < counts[1]; ++i) {
        SlideLayout::Object o;
        o.kind = 1;
        o.radius = rng.uniform(spec.tri_radius_min, spec.tri_radius_max);
        o.rotation = rng.uniform(0, kTwoPi);
        o.color = jitter_color(rng, 152, 122, 106, 12);
        try_place(o, [](double cx, double cy, const SlideLayout::Object& obj) {
            return triangle_bounds(cx, cy, obj.radius, obj.rotation);
        });
    }
    for (int i = 0; i < counts[2]; ++i) {
        SlideLayout::Object o;
        o.kind = 2;
        o.radius = rng.uniform(spec.spiky_core_min, spec.spiky_core_max);
        o.spikes = static_cast<int>(rng.uniform_int(8, 16));
        o.spike_len = rng.uniform(spec.spike_len_min, spec.spike_len_max);
        o.rotation = rng.uniform(0, kTwoPi);
        o.color = jitter_color(rng, 138, 108, 80, 12);
        try_place(o, [](double cx, double cy, const SlideLayout::Object& obj) {
            return spiky_bounds(cx, cy, obj.radius, obj.spike_len, obj.spikes, obj.rotation);
        });
    }
    for (int i = 0; i < bubbles; ++i) {
        SlideLayout::Object o;
        o.kind = 3;
        o.radius = rng.uniform(spec.bubble_radius_min, spec.bubble_radius_max);
        o.ring_width = rng.uniform(1.5, 3.5);
        try_place(o, [](double cx, double cy, const SlideLayout::Object& obj) {
            return disc_bounds(cx, cy, obj.radius + obj.ring_width);
        });
    }
    return layout;
}

Annotation layout_annotation(const SlideLayout& layout, const std::string& image_id) {
    Annotation ann;
    ann.image_id = image_id;
    for (const auto& o : layout.objects) {
        if (o.kind == 3) {
            ann.bubble_boxes.push_back(o.bounds);
        } else {
            ann.boxes.push_back({o.bounds, o.kind});
        }
    }
    return ann;
}

Annotation gen_slide_annotation(const SlideSpec& spec, uint64_t seed,
                                const std::string& image_id) {
    return layout_annotation(place_objects(spec, seed), image_id);
}

std::pair<ImageU8, Annotation> gen_slide(const SlideSpec& spec, uint64_t seed,
                                         const std::string& image_id) {
    const SlideLayout layout = place_objects(spec, seed);
    Rng rng(seed ^ 0x5deece66dull);  // render stream, independent of placement

    Canvas canvas;
    canvas.extent = spec.extent;
    canvas.rgb.resize(static_cast<size_t>(spec.extent * spec.extent * 3));
    for (size_t i = 0; i < canvas.rgb.size(); i += 3) {
        canvas.rgb[i] = spec.background[0];
        canvas.rgb[i + 1] = spec.background[1];
        canvas.rgb[i + 2] = spec.background[2];
    }

    for (const auto& o : layout.objects) {
        std::vector<Speckle> speckles;
        if (o.kind == 0) {
            const int n = static_cast<int>(rng.uniform_int(6, 14));
            for (int i = 0; i < n; ++i) {
                const double a = rng.uniform(0, kTwoPi);
                const double d = rng.uniform(0, std::max(0.0, o.radius - 6.0));
                speckles.push_back({d * std::cos(a), d * std::sin(a), rng.uniform(1.0, 3.0)});
            }
        }
        render_object(canvas, o, speckles);
    }

    gaussian_blur(canvas, spec.blur_sigma);

    ImageU8 img;
    img.width = spec.extent;
    img.height = spec.extent;
    img.pixels.resize(canvas.rgb.size());
    const double amp = spec.noise_amplitude;
    for (size_t i = 0; i < canvas.rgb.size(); ++i) {
        const double noisy =
            canvas.rgb[i] + (amp > 0 ? rng.uniform(-amp, amp) : 0.0);
        img.pixels[i] = static_cast<uint8_t>(std::clamp(std::lround(noisy), 0l, 255l));
    }
    return {std::move(img), layout_annotation(layout, image_id)};
}

// ---------------------------------------------------------------------------
// Dataset + annotation files

namespace {

std::string image_id_for(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "slide_%05d", index);
    return buf;
}

json spec_to_json(const SlideSpec& s) {
    return json{{"extent", s.extent},
                {"count_min", s.count_min},
                {"count_max", s.count_max},
                {"round_radius", {s.round_radius_min, s.round_radius_max}},
                {"tri_radius", {s.tri_radius_min, s.tri_radius_max}},
                {"spiky_core", {s.spiky_core_min, s.spiky_core_max}},
                {"spike_len", {s.spike_len_min, s.spike_len_max}},
                {"bubbles", {s.bubble_min, s.bubble_max}},
                {"bubble_radius", {s.bubble_radius_min, s.bubble_radius_max}},
                {"blur_sigma", s.blur_sigma},
                {"noise_amplitude", s.noise_amplitude},
                {"background", {s.background[0], s.background[1], s.background[2]}},
                {"overlap_limit", s.overlap_limit}};
}

}  // namespace

DatasetManifest gen_dataset(const SlideSpec& spec, int n_images, uint64_t master_seed,
                            const std::string& out_dir, const std::string& format) {
    spec.validate();
    if (n_images < 0) throw ValueError("gen_dataset: negative image count");
    if (format != "png" && format != "ppm")
        throw ValueError("gen_dataset: format must be png or ppm");

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) throw IoError("gen_dataset: cannot create '" + out_dir + "/images': " + ec.message());

    DatasetManifest manifest;
    manifest.out_dir = out_dir;
    manifest.extent = spec.extent;
    manifest.master_seed = master_seed;
    manifest.format = format;

    Rng master(master_seed);
    std::vector<Annotation> annotations;
    for (int i = 0; i < n_images; ++i) {
        const uint64_t seed = master.fork(static_cast<uint64_t>(i)).next_u64();
        const std::string id = image_id_for(i);
        auto [img, ann] = gen_slide(spec, seed, id);
        const std::string file = "images/" + id + "." + format;
        write_image((fs::path(out_dir) / file).string(), img);

        DatasetManifest::ImageEntry entry;
        entry.file = file;
        entry.image_id = id;
        entry.seed = seed;
        entry.bubbles = static_cast<int>(ann.bubble_boxes.size());
        for (const auto& gt : ann.boxes) {
            entry.counts[gt.class_id]++;
            manifest.class_totals[gt.class_id]++;
            manifest.grain_total++;
        }
        manifest.bubble_total += entry.bubbles;
        entry.crc = crc32(img.pixels.data(), img.pixels.size());
        manifest.images.push_back(std::move(entry));
        annotations.push_back(std::move(ann));
    }

    save_annotations(annotations, (fs::path(out_dir) / "annotations.jsonl").string());

    json j;
    j["extent"] = manifest.extent;
    j["n_images"] = n_images;
    j["master_seed"] = manifest.master_seed;
    j["format"] = format;
    j["totals"] = {{"round", manifest.class_totals[0]},
                   {"triangular", manifest.class_totals[1]},
                   {"spiky", manifest.class_totals[2]},
                   {"grains", manifest.grain_total},
                   {"bubbles", manifest.bubble_total}};
    j["spec"] = spec_to_json(spec);
    json imgs = json::array();
    for (const auto& e : manifest.images) {
        imgs.push_back({{"file", e.file},
                        {"image_id", e.image_id},
                        {"seed", e.seed},
                        {"counts", e.counts},
                        {"bubbles", e.bubbles},
                        {"crc32", e.crc}});
    }
    j["images"] = std::move(imgs);
    write_file_atomic((fs::path(out_dir) / "manifest.json").string(), j.dump(2) + "\n");
    return manifest;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("manifest '" + path + "': " + e.what());
    }
    DatasetManifest m;
    m.out_dir = fs::path(path).parent_path().string();
    m.extent = j.at("extent").get<int64_t>();
    m.master_seed = j.at("master_seed").get<uint64_t>();
    m.format = j.at("format").get<std::string>();
    m.class_totals[0] = j.at("totals").at("round").get<int64_t>();
    m.class_totals[1] = j.at("totals").at("triangular").get<int64_t>();
    m.class_totals[2] = j.at("totals").at("spiky").get<int64_t>();
    m.grain_total = j.at("totals").at("grains").get<int64_t>();
    m.bubble_total = j.at("totals").at("bubbles").get<int64_t>();
    for (const auto& e : j.at("images")) {
        DatasetManifest::ImageEntry entry;
        entry.file = e.at("file").get<std::string>();
        entry.image_id = e.at("image_id").get<std::string>();
        entry.seed = e.at("seed").get<uint64_t>();
        entry.counts = e.at("counts").get<std::array<int, 3>>();
        entry.bubbles = e.at("bubbles").get<int>();
        entry.crc = e.at("crc32").get<uint32_t>();
        m.images.push_back(std::move(entry));
    }
    return m;
}

void save_annotations(const std::vector<Annotation>& annotations, const std::string& path) {
    std::string out;
    for (const auto& ann : annotations) {
        for (const auto& gt : ann.boxes) {
            json line = {{"image", ann.image_id}, {"class", gt.class_id}, {"cx", gt.box.cx},
                         {"cy", gt.box.cy},       {"w", gt.box.w},        {"h", gt.box.h}};
            out += line.dump();
            out += '\n';
        }
    }
    write_file_atomic(path, out);
}

std::vector<Annotation> load_annotations(const std::string& path, int64_t extent) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotations '" + path + "'");
    std::vector<Annotation> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("annotations '" + path + "' line " + std::to_string(line_no) + ": " +
                          e.what());
        }
        GroundTruth gt;
        std::string image;
        try {
            image = j.at("image").get<std::string>();
            gt.class_id = j.at("class").get<int>();
            gt.box.cx = j.at("cx").get<double>();
            gt.box.cy = j.at("cy").get<double>();
            gt.box.w = j.at("w").get<double>();
            gt.box.h = j.at("h").get<double>();
        } catch (const json::exception& e) {
            throw IoError("annotations '" + path + "' line " + std::to_string(line_no) + ": " +
                          e.what());
        }
        if (gt.class_id < 0 || gt.class_id > 2)
            throw IoError("annotations '" + path + "' line " + std::to_string(line_no) +
                          ": class out of range for image " + image);
        if (gt.box.w <= 0 || gt.box.h <= 0)
            throw IoError("annotations '" + path + "' line " + std::to_string(line_no) +
                          ": non-positive box for image " + image);
        if (extent > 0) {
            if (gt.box.left() < -0.5 || gt.box.top() < -0.5 || gt.box.right() > extent + 0.5 ||
                gt.box.bottom() > extent + 0.5)
                throw IoError("annotations '" + path + "' line " + std::to_string(line_no) +
                              ": box exceeds the " + std::to_string(extent) +
                              "px frame in image " + image);
        }
        if (out.empty() || out.back().image_id != image) {
            Annotation ann;
            ann.image_id = image;
            out.push_back(std::move(ann));
        }
        out.back().boxes.push_back(gt);
    }
    return out;
}

}  // namespace pollen
