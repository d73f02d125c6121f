#include "tinydet/optim.hpp"

#include "tinydet/errors.hpp"

namespace tinydet::optim {

void sgd_step(Tensor& param, const Tensor& grad, Tensor& momentum_buf, const OptimConfig& cfg) {
    require_same_shape(param, grad, "sgd_step");
    if (momentum_buf.empty()) momentum_buf = Tensor(param.shape());
    require_same_shape(param, momentum_buf, "sgd_step momentum buffer");
    for (std::int64_t i = 0; i < param.size(); ++i) {
        const double g = grad[i] + cfg.weight_decay * param[i];
        momentum_buf[i] = cfg.momentum * momentum_buf[i] + g;
        param[i] -= cfg.lr * momentum_buf[i];
    }
}

void SgdState::step(int slot, Tensor& param, const Tensor& grad) {
    if (slot >= static_cast<int>(buffers_.size())) {
        buffers_.resize(static_cast<std::size_t>(slot) + 1);
    }
    sgd_step(param, grad, buffers_[static_cast<std::size_t>(slot)], cfg_);
}

}  // namespace tinydet::optim
