#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "pollen/detector.hpp"
#include "pollen/loss.hpp"

namespace pollen {

struct TrainConfig {
    std::string data_dir;       // dataset with manifest.json + annotations.jsonl
    std::string out_weights;    // final weights; best epoch goes to out + ".best"
    std::string log_csv;        // optional per-epoch loss log

    int epochs = 30;
    int batch_size = 8;
    float lr = 1e-3f;
    std::string optimizer = "adam";
    float lambda_coord = 5.0f;
    float lambda_noobj = 0.5f;

    int64_t input_extent = 416;
    float width_mult = 1.0f;
    int num_anchors = 10;
    int num_classes = 3;

    uint64_t seed = 42;
    std::string resume;         // continue from these weights (keeps anchors/config)
    int max_images = -1;        // cap the training set, for smoke runs
    bool augment = true;        // random dihedral transforms of each frame
};

struct EpochStats {
    int epoch = 0;
    LossBreakdown mean;
    double seconds = 0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    std::string final_path;
    std::string best_path;
    double best_loss = 0;
    std::vector<std::pair<float, float>> anchors;
};

// Full training drive: loads the dataset, estimates anchors by k-means
// (unless resuming), then runs epochs of loss/optimizer steps. Deterministic
// for a fixed seed in single-threaded mode. progress, when given, receives
// one line per epoch.
TrainResult train_detector(const TrainConfig& config, std::ostream* progress = nullptr);

// Shared by training and the detect command: image file -> network input.
Tensor load_network_input(const std::string& image_path, int64_t extent);

}  // namespace pollen
