#pragma once

#include <optional>
#include <vector>

#include "tinydet/graph.hpp"
#include "tinydet/tensor.hpp"

namespace tinydet::fpn {

// One 1x1 lateral kernel per level, mapping that level's backbone channels to
// the common pyramid width. Kernels are bias-free so the pyramid is linear in
// its input.
struct FpnParams {
    std::vector<Tensor> lateral_kernels;
};

// Top-down fusion at one level: Conv(c) + Up(upper), or Conv(c) at the top.
Tensor fuse_level(const Tensor& lateral, const Tensor* upper, const Tensor& kernel);
graph::Var fuse_level(graph::Var lateral, std::optional<graph::Var> upper, graph::Var kernel);

// Builds all pyramid levels, highest resolution first (index 0).
std::vector<Tensor> build_pyramid(const std::vector<Tensor>& backbone, const FpnParams& params);
std::vector<graph::Var> build_pyramid(const std::vector<graph::Var>& backbone,
                                      const std::vector<graph::Var>& lateral_kernels);

}  // namespace tinydet::fpn
