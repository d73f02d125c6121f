#include "tinydet/losses.hpp"

#include <cmath>

#include "tinydet/errors.hpp"

namespace tinydet::losses {

namespace g = tinydet::graph;

g::Var cross_entropy(g::Var logits, int label) { return g::cross_entropy_logits(logits, label); }

g::Var smooth_l1(g::Var pred, const Tensor& target) { return g::smooth_l1(pred, target); }

g::Var total_loss(g::Var ce, g::Var sl1, g::Var geo, g::Var sem, const LossConfig& cfg) {
    if (cfg.lambda < 0.0) throw ConfigError("total_loss: lambda must be non-negative");
    return g::add(g::add(ce, sl1), g::scale(g::add(geo, sem), cfg.lambda));
}

double total_loss(double ce, double sl1, double geo, double sem, const LossConfig& cfg) {
    if (cfg.lambda < 0.0) throw ConfigError("total_loss: lambda must be non-negative");
    return ce + sl1 + cfg.lambda * (geo + sem);
}

}  // namespace tinydet::losses
