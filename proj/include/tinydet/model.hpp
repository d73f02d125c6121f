#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinydet/contrastive.hpp"
#include "tinydet/losses.hpp"
#include "tinydet/metrics.hpp"
#include "tinydet/synth.hpp"
#include "tinydet/tensor.hpp"
#include "tinydet/trans_rcnn.hpp"
#include "tinydet/unfold.hpp"

namespace tinydet::model {

// Named parameter tensors in registration order; the order fixes both the
// SGD slot layout and the checkpoint layout.
class ParamStore {
  public:
    Tensor& add(const std::string& name, Tensor init);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    int slot(const std::string& name) const;
    int count() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    Tensor& value(int i) { return values_[static_cast<std::size_t>(i)]; }
    const Tensor& value(int i) const { return values_[static_cast<std::size_t>(i)]; }

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, int> index_;
};

struct EncoderConfig {
    int conv1_out = 4;
    int conv2_out = 8;
    int hidden = 64;
};

struct ModelConfig {
    int levels = 3;  // top pyramid index L; L+1 levels total
    std::vector<int> backbone_channels = {16, 32, 48, 64};
    int fpn_channels = 32;
    EncoderConfig encoder;
    unfold::UnfoldConfig unfold;
    bool shuffle_order = true;
    transrcnn::MteConfig mte;
    int class_count = 3;
    int roi_size = 8;
    bool use_mte = true;
    bool use_tts = true;
};

// Per-forward leaf bindings so every use of a parameter shares one Var and
// gradients accumulate across uses.
class BoundParams {
  public:
    BoundParams(ParamStore& store, bool requires_grad);
    graph::Var operator()(const std::string& name) const;
    Tensor grad_of(int slot) const;

  private:
    std::vector<graph::Var> vars_;
    ParamStore* store_ = nullptr;
};

struct TrainForwardResult {
    graph::Var total;
    double ce = 0, sl1 = 0, geo = 0, sem = 0;
    std::vector<transrcnn::TaskGroups> routing;  // per RoI, batch order
};

struct ForwardOptions {
    std::uint64_t unfold_seed = 0;
    // When set, reuses this routing instead of recomputing it (used by the
    // finite-difference checks, which must hold the discrete routing fixed).
    const std::vector<transrcnn::TaskGroups>* frozen_routing = nullptr;
};

class Model {
  public:
    explicit Model(ModelConfig cfg);

    void init_params(std::uint64_t seed);
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const ModelConfig& config() const { return cfg_; }

    // Full training objective over a minibatch of scenes with proposals.
    TrainForwardResult forward_train(const std::vector<synth::Scene>& scenes,
                                     const std::vector<std::vector<synth::Proposal>>& proposals,
                                     const losses::LossConfig& loss_cfg, BoundParams& bound,
                                     const ForwardOptions& opts = {});

    // Inference-only pyramid (no encoders, no gradients).
    std::vector<Tensor> pyramid_features(const Tensor& image);

    // Scores the given proposals and returns non-background detections with
    // regressed boxes.
    std::vector<metrics::Detection> detect(const Tensor& image,
                                           const std::vector<metrics::Box>& proposal_boxes,
                                           std::uint64_t unfold_seed);

  private:
    struct RoiHeadOutput {
        graph::Var logits;
        graph::Var deltas;
        transrcnn::TaskGroups routing;
    };
    RoiHeadOutput roi_head(graph::Var pyramid_bottom, const metrics::Box& box,
                           const BoundParams& bound, std::uint64_t roi_seed,
                           const transrcnn::TaskGroups* frozen);

    std::vector<graph::Var> backbone_levels(graph::Var image, const BoundParams& bound) const;
    std::vector<graph::Var> pyramid_levels(const std::vector<graph::Var>& backbone,
                                           const BoundParams& bound) const;
    contrastive::ContrastiveVars contrastive_vars(const BoundParams& bound) const;

    ModelConfig cfg_;
    ParamStore store_;
};

}  // namespace tinydet::model
