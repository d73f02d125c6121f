#pragma once

#include <cstdint>
#include <vector>

#include "tinydet/graph.hpp"
#include "tinydet/tensor.hpp"

namespace tinydet::unfold {

struct UnfoldConfig {
    int patch_size = 2;
    int patch_stride = 2;
    int window = 2;         // K
    int window_stride = 1;
    int oversample = 4;     // r; 1 = raster only
    int model_dim = 64;     // D after the shared projection
    std::uint64_t seed = 0;
    bool pad_windows = true;  // zero-pad bottom/right so window count stays G^2
};

// Side length G of the square patch-token grid; throws ConfigError when the
// RoI geometry does not divide evenly or the window does not fit.
int token_grid_size(int roi_size, const UnfoldConfig& cfg);

// Patch tokens in raster order, each a channel-major flattening of one
// patch: [G^2 x C*p^2].
Tensor tokenize_roi(const Tensor& roi, const UnfoldConfig& cfg);

struct TokenProvenance {
    int window_row = 0;
    int window_col = 0;
    // Order in which the window's cells are concatenated; identity = raster.
    std::vector<int> cell_order;
};

// Which grid rows each unfolded token concatenates, before projection.
// grid_rows is [token_count x K^2]; -1 marks zero padding.
struct UnfoldPlan {
    int grid = 0;
    int window_count = 0;
    int token_count = 0;
    std::vector<std::int64_t> grid_rows;
    std::vector<TokenProvenance> provenance;
};

UnfoldPlan plan_raster(int grid, const UnfoldConfig& cfg);
// Per window position: the raster concatenation first, then r-1 distinct
// non-identity cell orders drawn from the seeded RNG.
UnfoldPlan plan_shuffle(int grid, const UnfoldConfig& cfg);

// Concatenated window contents per token (pre-projection): [N x K^2 * plen].
Tensor concat_windows(const Tensor& grid_tokens, const UnfoldPlan& plan);

struct UnfoldedSequence {
    Tensor tokens;  // [N x D]
    std::vector<TokenProvenance> provenance;
};

UnfoldedSequence unfold_raster(const Tensor& grid_tokens, const UnfoldConfig& cfg,
                               const Tensor& proj_w, const Tensor& proj_b);
UnfoldedSequence unfold_shuffle(const Tensor& grid_tokens, const UnfoldConfig& cfg,
                                const Tensor& proj_w, const Tensor& proj_b);

// Differentiable path: tokenize + unfold as one gather from the RoI feature
// followed by the shared projection. shuffle=false ignores the oversample
// rate, matching the raster order.
graph::Var unfold_tokens(graph::Var roi, const UnfoldConfig& cfg, bool shuffle,
                         graph::Var proj_w, graph::Var proj_b,
                         std::vector<TokenProvenance>* provenance_out = nullptr);

}  // namespace tinydet::unfold
