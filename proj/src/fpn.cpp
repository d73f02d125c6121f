#include "tinydet/fpn.hpp"

#include <string>

#include "tinydet/errors.hpp"
#include "tinydet/ops.hpp"

namespace tinydet::fpn {

namespace {
void check_fused_shapes(const std::vector<int>& conv_shape, const std::vector<int>& up_shape) {
    if (conv_shape != up_shape) {
        throw ShapeError("fuse_level: upsampled upper level " + Tensor::shape_str(up_shape) +
                         " does not match lateral conv output " +
                         Tensor::shape_str(conv_shape));
    }
}
}  // namespace

Tensor fuse_level(const Tensor& lateral, const Tensor* upper, const Tensor& kernel) {
    Tensor conv = ops::conv2d(lateral, kernel, 1, 0);
    if (!upper) return conv;
    Tensor up = ops::upsample_nearest_2x(*upper);
    check_fused_shapes(conv.shape(), up.shape());
    for (std::int64_t i = 0; i < conv.size(); ++i) conv[i] += up[i];
    return conv;
}

graph::Var fuse_level(graph::Var lateral, std::optional<graph::Var> upper, graph::Var kernel) {
    graph::Var conv = graph::conv2d(lateral, kernel, 1, 0);
    if (!upper) return conv;
    graph::Var up = graph::upsample2x(*upper);
    check_fused_shapes(conv.value().shape(), up.value().shape());
    return graph::add(conv, up);
}

std::vector<Tensor> build_pyramid(const std::vector<Tensor>& backbone, const FpnParams& params) {
    if (backbone.empty()) throw ShapeError("build_pyramid: empty backbone feature list");
    if (params.lateral_kernels.size() != backbone.size()) {
        throw ShapeError("build_pyramid: " + std::to_string(params.lateral_kernels.size()) +
                         " kernels for " + std::to_string(backbone.size()) + " levels");
    }
    const int top = static_cast<int>(backbone.size()) - 1;
    std::vector<Tensor> pyramid(backbone.size());
    pyramid[top] = fuse_level(backbone[top], nullptr, params.lateral_kernels[top]);
    for (int i = top - 1; i >= 0; --i) {
        pyramid[i] = fuse_level(backbone[i], &pyramid[i + 1], params.lateral_kernels[i]);
    }
    return pyramid;
}

std::vector<graph::Var> build_pyramid(const std::vector<graph::Var>& backbone,
                                      const std::vector<graph::Var>& lateral_kernels) {
    if (backbone.empty()) throw ShapeError("build_pyramid: empty backbone feature list");
    if (lateral_kernels.size() != backbone.size()) {
        throw ShapeError("build_pyramid: " + std::to_string(lateral_kernels.size()) +
                         " kernels for " + std::to_string(backbone.size()) + " levels");
    }
    const int top = static_cast<int>(backbone.size()) - 1;
    std::vector<graph::Var> pyramid(backbone.size());
    pyramid[top] = fuse_level(backbone[top], std::nullopt, lateral_kernels[top]);
    for (int i = top - 1; i >= 0; --i) {
        pyramid[i] = fuse_level(backbone[i], pyramid[i + 1], lateral_kernels[i]);
    }
    return pyramid;
}

}  // namespace tinydet::fpn
