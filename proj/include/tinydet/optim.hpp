#pragma once

#include <vector>

#include "tinydet/tensor.hpp"

namespace tinydet::optim {

struct OptimConfig {
    double lr = 0.01;
    double weight_decay = 1e-4;
    double momentum = 0.9;
};

// Momentum SGD; weight decay is folded into the gradient before the momentum
// update: v = mu*v + (g + wd*w); w -= lr*v.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& momentum_buf,
              const OptimConfig& cfg);

class SgdState {
  public:
    explicit SgdState(OptimConfig cfg) : cfg_(cfg) {}

    const OptimConfig& config() const { return cfg_; }

    // Buffers are keyed by slot index and sized lazily.
    void step(int slot, Tensor& param, const Tensor& grad);

  private:
    OptimConfig cfg_;
    std::vector<Tensor> buffers_;
};

}  // namespace tinydet::optim
