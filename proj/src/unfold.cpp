#include "tinydet/unfold.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "tinydet/errors.hpp"
#include "tinydet/ops.hpp"
#include "tinydet/rng.hpp"

namespace tinydet::unfold {

namespace {

// Saturating factorial, used for the permutation-budget precondition.
std::int64_t factorial_capped(int n) {
    std::int64_t f = 1;
    for (int i = 2; i <= n; ++i) {
        if (f > (std::int64_t{1} << 60) / i) return std::int64_t{1} << 62;
        f *= i;
    }
    return f;
}

int windows_per_axis(int grid, const UnfoldConfig& cfg) {
    if (cfg.window > grid) {
        throw ConfigError("unfold: window " + std::to_string(cfg.window) +
                          " exceeds token grid " + std::to_string(grid));
    }
    if (cfg.window_stride < 1) throw ConfigError("unfold: window stride must be positive");
    if (cfg.pad_windows) {
        return (grid + cfg.window_stride - 1) / cfg.window_stride;
    }
    return (grid - cfg.window) / cfg.window_stride + 1;
}

void append_token(UnfoldPlan& plan, int grid, const UnfoldConfig& cfg, int wr, int wc,
                  const std::vector<int>& cell_order) {
    const int k = cfg.window;
    for (int q = 0; q < k * k; ++q) {
        const int cell = cell_order[static_cast<std::size_t>(q)];
        const int gy = wr * cfg.window_stride + cell / k;
        const int gx = wc * cfg.window_stride + cell % k;
        plan.grid_rows.push_back(gy < grid && gx < grid
                                     ? static_cast<std::int64_t>(gy) * grid + gx
                                     : -1);
    }
    plan.provenance.push_back({wr, wc, cell_order});
    ++plan.token_count;
}

std::vector<int> identity_order(int k2) {
    std::vector<int> order(static_cast<std::size_t>(k2));
    for (int i = 0; i < k2; ++i) order[static_cast<std::size_t>(i)] = i;
    return order;
}

}  // namespace

int token_grid_size(int roi_size, const UnfoldConfig& cfg) {
    if (cfg.patch_size < 1 || cfg.patch_stride < 1) {
        throw ConfigError("unfold: patch size and stride must be positive");
    }
    if (roi_size < cfg.patch_size || (roi_size - cfg.patch_size) % cfg.patch_stride != 0) {
        throw ConfigError("unfold: RoI size " + std::to_string(roi_size) +
                          " is not divisible into patches of size " +
                          std::to_string(cfg.patch_size) + " with stride " +
                          std::to_string(cfg.patch_stride));
    }
    return (roi_size - cfg.patch_size) / cfg.patch_stride + 1;
}

Tensor tokenize_roi(const Tensor& roi, const UnfoldConfig& cfg) {
    if (roi.ndim() != 3 || roi.dim(1) != roi.dim(2)) {
        throw ShapeError("tokenize_roi: expected square [CxSxS] RoI, got " + roi.shape_str());
    }
    const int c = roi.dim(0), s = roi.dim(1), p = cfg.patch_size;
    const int grid = token_grid_size(s, cfg);
    const int plen = c * p * p;
    Tensor out({grid * grid, plen});
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            double* row = out.data() +
                          static_cast<std::size_t>(gy * grid + gx) * plen;
            int o = 0;
            for (int ch = 0; ch < c; ++ch) {
                for (int dy = 0; dy < p; ++dy) {
                    for (int dx = 0; dx < p; ++dx) {
                        row[o++] = roi.at(ch, gy * cfg.patch_stride + dy,
                                          gx * cfg.patch_stride + dx);
                    }
                }
            }
        }
    }
    return out;
}

UnfoldPlan plan_raster(int grid, const UnfoldConfig& cfg) {
    const int wpa = windows_per_axis(grid, cfg);
    UnfoldPlan plan;
    plan.grid = grid;
    plan.window_count = wpa * wpa;
    const std::vector<int> raster = identity_order(cfg.window * cfg.window);
    for (int wr = 0; wr < wpa; ++wr) {
        for (int wc = 0; wc < wpa; ++wc) {
            append_token(plan, grid, cfg, wr, wc, raster);
        }
    }
    return plan;
}

UnfoldPlan plan_shuffle(int grid, const UnfoldConfig& cfg) {
    if (cfg.oversample < 1) throw ConfigError("unfold: oversample rate must be >= 1");
    const int k2 = cfg.window * cfg.window;
    if (static_cast<std::int64_t>(cfg.oversample) - 1 > factorial_capped(k2) - 1) {
        throw ConfigError("unfold: oversample rate " + std::to_string(cfg.oversample) +
                          " needs more distinct cell orders than the " +
                          std::to_string(cfg.window) + "x" + std::to_string(cfg.window) +
                          " window provides");
    }
    const int wpa = windows_per_axis(grid, cfg);
    UnfoldPlan plan;
    plan.grid = grid;
    plan.window_count = wpa * wpa;
    const std::vector<int> raster = identity_order(k2);
    Rng rng(cfg.seed);
    for (int wr = 0; wr < wpa; ++wr) {
        for (int wc = 0; wc < wpa; ++wc) {
            append_token(plan, grid, cfg, wr, wc, raster);
            std::set<std::vector<int>> drawn;
            while (static_cast<int>(drawn.size()) < cfg.oversample - 1) {
                std::vector<int> order = raster;
                for (int i = k2 - 1; i > 0; --i) {
                    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
                    std::swap(order[static_cast<std::size_t>(i)],
                              order[static_cast<std::size_t>(j)]);
                }
                if (order == raster || drawn.count(order)) continue;
                drawn.insert(order);
                append_token(plan, grid, cfg, wr, wc, order);
            }
        }
    }
    return plan;
}

Tensor concat_windows(const Tensor& grid_tokens, const UnfoldPlan& plan) {
    const int plen = grid_tokens.dim(1);
    const int k2 = static_cast<int>(plan.grid_rows.size()) / std::max(plan.token_count, 1);
    Tensor out({plan.token_count, k2 * plen});
    for (int t = 0; t < plan.token_count; ++t) {
        double* row = out.data() + static_cast<std::size_t>(t) * k2 * plen;
        for (int q = 0; q < k2; ++q) {
            const std::int64_t src = plan.grid_rows[static_cast<std::size_t>(t) * k2 + q];
            if (src >= 0) {
                const double* s = grid_tokens.data() + static_cast<std::size_t>(src) * plen;
                std::copy(s, s + plen, row + static_cast<std::size_t>(q) * plen);
            }
        }
    }
    return out;
}

namespace {

UnfoldedSequence project_plan(const Tensor& grid_tokens, const UnfoldPlan& plan,
                              const Tensor& proj_w, const Tensor& proj_b) {
    Tensor concat = concat_windows(grid_tokens, plan);
    Tensor tokens = ops::matmul(concat, proj_w);
    for (int t = 0; t < tokens.dim(0); ++t) {
        for (int d = 0; d < tokens.dim(1); ++d) tokens.at(t, d) += proj_b[d];
    }
    UnfoldedSequence seq;
    seq.tokens = std::move(tokens);
    seq.provenance = plan.provenance;
    return seq;
}

}  // namespace

UnfoldedSequence unfold_raster(const Tensor& grid_tokens, const UnfoldConfig& cfg,
                               const Tensor& proj_w, const Tensor& proj_b) {
    const int grid = static_cast<int>(std::lround(std::sqrt(grid_tokens.dim(0))));
    return project_plan(grid_tokens, plan_raster(grid, cfg), proj_w, proj_b);
}

UnfoldedSequence unfold_shuffle(const Tensor& grid_tokens, const UnfoldConfig& cfg,
                                const Tensor& proj_w, const Tensor& proj_b) {
    const int grid = static_cast<int>(std::lround(std::sqrt(grid_tokens.dim(0))));
    return project_plan(grid_tokens, plan_shuffle(grid, cfg), proj_w, proj_b);
}

graph::Var unfold_tokens(graph::Var roi, const UnfoldConfig& cfg, bool shuffle,
                         graph::Var proj_w, graph::Var proj_b,
                         std::vector<TokenProvenance>* provenance_out) {
    const Tensor& rv = roi.value();
    if (rv.ndim() != 3 || rv.dim(1) != rv.dim(2)) {
        throw ShapeError("unfold_tokens: expected square [CxSxS] RoI, got " + rv.shape_str());
    }
    const int c = rv.dim(0), s = rv.dim(1), p = cfg.patch_size;
    const int grid = token_grid_size(s, cfg);
    const int plen = c * p * p;
    const UnfoldPlan plan = shuffle ? plan_shuffle(grid, cfg) : plan_raster(grid, cfg);
    const int k2 = cfg.window * cfg.window;

    // Compose patchify and window concatenation into one flat gather.
    auto index_map = std::make_shared<std::vector<std::int64_t>>();
    index_map->reserve(static_cast<std::size_t>(plan.token_count) * k2 * plen);
    for (int t = 0; t < plan.token_count; ++t) {
        for (int q = 0; q < k2; ++q) {
            const std::int64_t row = plan.grid_rows[static_cast<std::size_t>(t) * k2 + q];
            if (row < 0) {
                index_map->insert(index_map->end(), static_cast<std::size_t>(plen), -1);
                continue;
            }
            const int gy = static_cast<int>(row) / grid;
            const int gx = static_cast<int>(row) % grid;
            for (int ch = 0; ch < c; ++ch) {
                for (int dy = 0; dy < p; ++dy) {
                    for (int dx = 0; dx < p; ++dx) {
                        index_map->push_back(
                            (static_cast<std::int64_t>(ch) * s +
                             (gy * cfg.patch_stride + dy)) * s +
                            (gx * cfg.patch_stride + dx));
                    }
                }
            }
        }
    }
    graph::Var concat =
        graph::gather_flat(roi, index_map, {plan.token_count, k2 * plen});
    if (provenance_out) *provenance_out = plan.provenance;
    return graph::add_row_bias(graph::matmul(concat, proj_w), proj_b);
}

}  // namespace tinydet::unfold
