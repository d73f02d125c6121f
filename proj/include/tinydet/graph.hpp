#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "tinydet/tensor.hpp"

namespace tinydet::graph {

// Reverse-mode tape. Vars hold shared nodes; ops record a backward closure
// that accumulates cotangents into parent grads with hand-derived kernels.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad = false);
    static Var constant(Tensor value) { return leaf(std::move(value), false); }
    static Var scalar(double v) { return constant(Tensor::scalar(v)); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    // Zero tensor when the leaf never received a cotangent.
    Tensor grad() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    double scalar_value() const { return node_->value[0]; }

    const std::shared_ptr<Node>& node() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

// Backpropagates from a scalar (size-1) Var, seeding its cotangent with 1.
void backward(const Var& root);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var x, double s);
Var add_row_bias(Var x, Var bias);      // [RxC] + [C]
Var add_channel_bias(Var x, Var bias);  // [CxHxW] + [C]
Var matmul(Var a, Var b);
Var transpose(Var x);
Var gelu(Var x);
Var conv2d(Var x, Var kernel, int stride, int pad);
Var upsample2x(Var x);
Var global_avg_pool(Var x);  // [CxHxW] -> [C]
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
// Additive mask (0 allowed, -inf blocked) applied to logits before the
// row-wise softmax; blocked positions come out exactly 0.
Var softmax_rows_masked(Var logits, const Tensor* additive_mask);
Var l2_normalize_rows(Var x);
Var reshape(Var x, std::vector<int> shape);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, int r0, int r1);
Var select_rows(Var x, std::vector<int> rows);
Var slice_cols(Var x, int c0, int c1);
Var concat_cols(const std::vector<Var>& parts);
Var mean_rows(Var x);  // [RxC] -> [C]
Var dot(Var a, Var b);
Var logsumexp(Var x);  // vector -> scalar
Var concat_scalars(const std::vector<Var>& scalars);
Var sum_scalars(const std::vector<Var>& scalars);
Var cross_entropy_logits(Var logits, int label);
Var smooth_l1(Var pred, const Tensor& target);
// out[i] = index_map[i] < 0 ? 0 : x_flat[index_map[i]]
Var gather_flat(Var x, std::shared_ptr<const std::vector<std::int64_t>> index_map,
                std::vector<int> out_shape);
// Crop-and-resize of a [CxHxW] map to [CxSxS] with bilinear sampling at bin
// centers; box coordinates are continuous pixel positions.
Var bilinear_crop(Var x, double x1, double y1, double x2, double y2, int out_size);

}  // namespace tinydet::graph
