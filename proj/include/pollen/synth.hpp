#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pollen/boxes.hpp"
#include "pollen/image.hpp"
#include "pollen/loss.hpp"
#include "pollen/rng.hpp"

namespace pollen {

// Procedural bright-field slide: warm background, three grain morphologies
// (round discs with rim + speckle, rounded triangles, spiked discs) and
// unlabeled air-bubble rings, then Gaussian blur and sensor noise.
struct SlideSpec {
    uint64_t seed = 42;        // master seed default; per-image seeds are explicit
    int64_t extent = 1080;

    std::array<int, 3> count_min = {2, 2, 2};   // round, triangular, spiky
    std::array<int, 3> count_max = {6, 6, 6};
    double round_radius_min = 20, round_radius_max = 60;
    double tri_radius_min = 25, tri_radius_max = 55;    // corner circumradius
    double spiky_core_min = 20, spiky_core_max = 45;
    double spike_len_min = 10, spike_len_max = 20;

    int bubble_min = 1, bubble_max = 4;
    double bubble_radius_min = 30, bubble_radius_max = 90;

    double blur_sigma = 1.2;
    double noise_amplitude = 4.0;               // per channel, 0..255 units
    std::array<uint8_t, 3> background = {232, 221, 201};
    double overlap_limit = 0.2;                 // max pairwise box IoU

    void validate() const;
    // Same morphology at a different frame size: radii scaled by extent/1080.
    SlideSpec scaled_to(int64_t new_extent) const;
};

struct Annotation {
    std::string image_id;
    std::vector<GroundTruth> boxes;        // labeled grains
    std::vector<BoundingBox> bubble_boxes; // distractors, never serialized as labels
};

struct SlideLayout {
    struct Object {
        int kind = 0;  // 0..2 grain classes, 3 bubble
        double cx = 0, cy = 0;
        double radius = 0;      // disc/core/circumradius per kind
        double rotation = 0;
        int spikes = 0;
        double spike_len = 0;
        double ring_width = 0;  // bubbles
        std::array<float, 3> color = {0, 0, 0};
        BoundingBox bounds;     // exact support of the rendered footprint
    };
    std::vector<Object> objects;
};

// Placement only (shared with the renderer): counts, shapes, rejection
// sampling against the overlap limit. Deterministic in (spec, seed).
SlideLayout place_objects(const SlideSpec& spec, uint64_t seed);

Annotation layout_annotation(const SlideLayout& layout, const std::string& image_id);

std::pair<ImageU8, Annotation> gen_slide(const SlideSpec& spec, uint64_t seed,
                                         const std::string& image_id = "slide");

// Annotations without pixels, same placement stream as gen_slide.
Annotation gen_slide_annotation(const SlideSpec& spec, uint64_t seed,
                                const std::string& image_id = "slide");

struct DatasetManifest {
    std::string out_dir;
    int64_t extent = 0;
    uint64_t master_seed = 0;
    std::string format;  // "png" or "ppm"
    std::array<int64_t, 3> class_totals = {0, 0, 0};
    int64_t grain_total = 0;
    int64_t bubble_total = 0;
    struct ImageEntry {
        std::string file;
        std::string image_id;
        uint64_t seed = 0;
        std::array<int, 3> counts = {0, 0, 0};
        int bubbles = 0;
        uint32_t crc = 0;
    };
    std::vector<ImageEntry> images;
};

// Writes out_dir/images/*.ext, out_dir/annotations.jsonl, out_dir/manifest.json.
DatasetManifest gen_dataset(const SlideSpec& spec, int n_images, uint64_t master_seed,
                            const std::string& out_dir, const std::string& format = "png");

DatasetManifest load_manifest(const std::string& path);

void save_annotations(const std::vector<Annotation>& annotations, const std::string& path);
// extent > 0 enables the in-frame validation.
std::vector<Annotation> load_annotations(const std::string& path, int64_t extent = -1);

}  // namespace pollen
