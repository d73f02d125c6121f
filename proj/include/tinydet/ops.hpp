#pragma once

#include <functional>
#include <vector>

#include "tinydet/tensor.hpp"

namespace tinydet::ops {

// Forward value plus a vector-Jacobian product: vjp(cotangent) returns one
// input-cotangent per operand, in operand order.
struct DiffResult {
    Tensor value;
    std::function<std::vector<Tensor>(const Tensor& cotangent)> vjp;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int pad);
Tensor upsample_nearest_2x(const Tensor& x);

DiffResult matmul_diff(const Tensor& a, const Tensor& b);
DiffResult softmax_lastdim_diff(const Tensor& x);
DiffResult conv2d_diff(const Tensor& x, const Tensor& kernel, int stride, int pad);
DiffResult upsample_nearest_2x_diff(const Tensor& x);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per element.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h);

// Guarded relative error between an analytic gradient and a finite-difference
// estimate: max_i |a_i-b_i| / max(|a_i|,|b_i|,floor).
double max_rel_error(const Tensor& analytic, const Tensor& estimate, double floor = 1e-3);

}  // namespace tinydet::ops
