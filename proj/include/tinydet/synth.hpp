#pragma once

#include <cstdint>
#include <vector>

#include "tinydet/graph.hpp"
#include "tinydet/metrics.hpp"
#include "tinydet/tensor.hpp"

namespace tinydet::synth {

struct SceneConfig {
    int image_size = 64;
    int objects_min = 2;
    int objects_max = 6;
    int side_min = 3;   // pixels; draws are skewed toward the small end
    int side_max = 12;
    int class_count = 3;
    double noise_std = 0.05;
    std::uint64_t seed = 1;
};

struct Scene {
    Tensor image;  // [1xHxW] in [0,1]
    std::vector<metrics::GtBox> gt;
};

// Deterministic in (cfg.seed, index).
Scene generate_scene(const SceneConfig& cfg, int index);

struct ProposalConfig {
    double jitter_std = 1.5;
    int negatives_per_positive = 3;  // background:foreground ratio
    double positive_iou = 0.5;
    double negative_iou_max = 0.3;
    int max_positives = 8;
};

struct Proposal {
    metrics::Box box;
    int label = 0;  // class index; class_count means background
    Tensor deltas;  // [4] regression target, foreground only
    bool foreground = false;
};

// One jittered positive per ground-truth box (resampled until it clears the
// positive IoU threshold, 20 tries, then the GT box itself) plus uniform
// random negatives below the negative IoU cap against every GT.
std::vector<Proposal> sample_proposals(const Scene& scene, const ProposalConfig& cfg,
                                       int class_count, std::uint64_t seed);

// Standard R-CNN box parameterization.
Tensor box_deltas(const metrics::Box& proposal, const metrics::Box& gt);
metrics::Box apply_deltas(const metrics::Box& proposal, const Tensor& deltas);

// Stride-2 conv tower: level 0 keeps the input resolution, each further level
// halves it. conv_ws[i] is the level-i kernel; GELU after every conv.
std::vector<graph::Var> toy_backbone(graph::Var image, const std::vector<graph::Var>& conv_ws,
                                     const std::vector<graph::Var>& conv_bs);

}  // namespace tinydet::synth
