#pragma once

#include "tinydet/graph.hpp"
#include "tinydet/tensor.hpp"

namespace tinydet::losses {

struct LossConfig {
    double lambda = 0.1;  // weight on the contrastive terms
    double tau = 0.07;
    bool normalize = true;
    int class_count = 3;  // real classes; background is class_count
};

// -log softmax(logits)[label], numerically stabilized.
graph::Var cross_entropy(graph::Var logits, int label);

// Per-coordinate 0.5d^2 for |d|<1 else |d|-0.5, summed.
graph::Var smooth_l1(graph::Var pred, const Tensor& target);

// ce + sl1 + lambda*(geo + sem)
graph::Var total_loss(graph::Var ce, graph::Var sl1, graph::Var geo, graph::Var sem,
                      const LossConfig& cfg);
double total_loss(double ce, double sl1, double geo, double sem, const LossConfig& cfg);

}  // namespace tinydet::losses
