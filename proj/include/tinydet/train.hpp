#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tinydet/config.hpp"
#include "tinydet/metrics.hpp"
#include "tinydet/model.hpp"
#include "tinydet/optim.hpp"
#include "tinydet/synth.hpp"

namespace tinydet::train {

struct BatchRecord {
    int epoch = 0;
    int batch = 0;
    double ce = 0, sl1 = 0, geo = 0, sem = 0, total = 0;
};

// Per-epoch callback; returning false stops training early.
using EpochCallback = std::function<bool(int epoch, const std::vector<BatchRecord>&)>;

// Deterministic minibatch loop: scene order is reshuffled per epoch from the
// train seed, losses are backpropagated, and SGD steps apply in store order.
// Aborts with NumericError naming the offending loss component on NaN.
std::vector<BatchRecord> train_model(model::Model& m, const std::vector<synth::Scene>& scenes,
                                     const config::RunConfig& cfg, optim::SgdState& state,
                                     const EpochCallback& on_epoch = nullptr);

// Evaluation with the deterministic proposal protocol (jittered positives +
// negatives from the eval seed).
std::vector<metrics::ImageDetections> evaluate_detections(
    model::Model& m, const std::vector<synth::Scene>& scenes,
    const synth::ProposalConfig& proposals, std::uint64_t eval_seed);

// Per-image PSNR of the response feature against the Gaussian-center target.
std::vector<double> psnr_per_image(model::Model& m, const std::vector<synth::Scene>& scenes);

struct EvalSummary {
    double ap50 = 0, ap75 = 0, ap5095 = 0;
    double ap50_vt = 0, ap50_t = 0, ap50_s = 0, ap50_m = 0;
    double psnr_ave = 0;
    std::map<std::string, double> as_map() const;
};

EvalSummary summarize(model::Model& m, const std::vector<synth::Scene>& scenes,
                      const synth::ProposalConfig& proposals, std::uint64_t eval_seed);

}  // namespace tinydet::train
