#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "test_util.hpp"
#include "tinydet/errors.hpp"
#include "tinydet/ops.hpp"
#include "tinydet/rng.hpp"
#include "tinydet/unfold.hpp"

using namespace tinydet;
using namespace tinydet::unfold;
namespace g = tinydet::graph;
using testutil::random_tensor;

namespace {

UnfoldConfig default_cfg(std::uint64_t seed = 0) {
    UnfoldConfig cfg;
    cfg.seed = seed;
    return cfg;
}

// Multiset of a token's constituent patch vectors, keyed by content.
std::multiset<std::vector<double>> window_multiset(const Tensor& concat_row, int k2, int plen) {
    std::multiset<std::vector<double>> out;
    for (int q = 0; q < k2; ++q) {
        out.insert(std::vector<double>(concat_row.data() + static_cast<std::size_t>(q) * plen,
                                       concat_row.data() + static_cast<std::size_t>(q + 1) * plen));
    }
    return out;
}

}  // namespace

TEST_CASE("default geometry yields a 4x4 grid of 16 patch tokens") {
    Rng rng(3);
    const Tensor roi = random_tensor({3, 8, 8}, rng);
    const UnfoldConfig cfg = default_cfg();
    CHECK(token_grid_size(8, cfg) == 4);
    const Tensor grid = tokenize_roi(roi, cfg);
    CHECK(grid.shape() == std::vector<int>{16, 12});
}

TEST_CASE("constant RoI gives identical patch vectors") {
    const Tensor roi = Tensor::full({2, 8, 8}, 0.4);
    const Tensor grid = tokenize_roi(roi, default_cfg());
    for (int t = 1; t < grid.dim(0); ++t) {
        for (int c = 0; c < grid.dim(1); ++c) CHECK(grid.at(t, c) == grid.at(0, c));
    }
}

TEST_CASE("patch (0,0) is the channel-major flattened top-left crop") {
    Rng rng(5);
    const Tensor roi = random_tensor({2, 8, 8}, rng);
    const Tensor grid = tokenize_roi(roi, default_cfg());
    std::vector<double> expect;
    for (int c = 0; c < 2; ++c)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) expect.push_back(roi.at(c, dy, dx));
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(grid.at(0, static_cast<int>(i)) == expect[i]);
    }
}

TEST_CASE("tokenize_roi rejects indivisible geometry") {
    Rng rng(7);
    UnfoldConfig cfg = default_cfg();
    cfg.patch_size = 3;
    cfg.patch_stride = 2;
    CHECK_THROWS_AS(tokenize_roi(random_tensor({1, 8, 8}, rng), cfg), ConfigError);
}

TEST_CASE("raster unfolding emits 16 tokens with zero-padded edge windows") {
    Rng rng(9);
    const UnfoldConfig cfg = default_cfg();
    const Tensor roi = random_tensor({3, 8, 8}, rng);
    const Tensor grid = tokenize_roi(roi, cfg);
    const UnfoldPlan plan = plan_raster(4, cfg);
    CHECK(plan.token_count == 16);
    CHECK(plan.window_count == 16);
    const Tensor concat = concat_windows(grid, plan);
    CHECK(concat.shape() == std::vector<int>{16, 4 * 12});

    // Window (0,0) concatenates patches (0,0),(0,1),(1,0),(1,1) in raster order.
    const int plen = grid.dim(1);
    for (int q = 0; q < 4; ++q) {
        const int gy = q / 2, gx = q % 2;
        const int row = gy * 4 + gx;
        for (int c = 0; c < plen; ++c) {
            CHECK(concat.at(0, q * plen + c) == grid.at(row, c));
        }
    }
    // Bottom-right window only has its first cell in range.
    const int last = 15;
    for (int c = 0; c < plen; ++c) {
        CHECK(concat.at(last, c) == grid.at(15, c));
        CHECK(concat.at(last, plen + c) == 0.0);
        CHECK(concat.at(last, 2 * plen + c) == 0.0);
        CHECK(concat.at(last, 3 * plen + c) == 0.0);
    }
}

TEST_CASE("window size one reduces unfolding to projected patch tokens") {
    Rng rng(11);
    UnfoldConfig cfg = default_cfg();
    cfg.window = 1;
    cfg.oversample = 1;
    const Tensor roi = random_tensor({2, 8, 8}, rng);
    const Tensor grid = tokenize_roi(roi, cfg);
    const Tensor proj = random_tensor({8, cfg.model_dim}, rng);
    const Tensor bias = random_tensor({cfg.model_dim}, rng, 0.1);
    const UnfoldedSequence seq = unfold_raster(grid, cfg, proj, bias);
    Tensor expect = ops::matmul(grid, proj);
    for (int t = 0; t < expect.dim(0); ++t)
        for (int d = 0; d < expect.dim(1); ++d) expect.at(t, d) += bias[d];
    CHECK(max_abs_diff(seq.tokens, expect) < 1e-13);
}

TEST_CASE("shuffle with r=1 is bit-identical to raster") {
    Rng rng(13);
    UnfoldConfig cfg = default_cfg(99);
    cfg.oversample = 1;
    const Tensor roi = random_tensor({3, 8, 8}, rng);
    const Tensor grid = tokenize_roi(roi, cfg);
    const Tensor proj = random_tensor({48, cfg.model_dim}, rng);
    const Tensor bias = random_tensor({cfg.model_dim}, rng, 0.1);
    const UnfoldedSequence raster = unfold_raster(grid, cfg, proj, bias);
    const UnfoldedSequence shuffle = unfold_shuffle(grid, cfg, proj, bias);
    CHECK(raster.tokens.vec() == shuffle.tokens.vec());
    REQUIRE(raster.provenance.size() == shuffle.provenance.size());
    for (std::size_t i = 0; i < raster.provenance.size(); ++i) {
        CHECK(raster.provenance[i].cell_order == shuffle.provenance[i].cell_order);
    }
}

TEST_CASE("default shuffle config yields 64 tokens grouped per window") {
    Rng rng(17);
    const UnfoldConfig cfg = default_cfg(7);
    const Tensor roi = random_tensor({3, 8, 8}, rng);
    const Tensor grid = tokenize_roi(roi, cfg);
    const UnfoldPlan plan = plan_shuffle(4, cfg);
    CHECK(plan.token_count == 64);
    // Tokens come in r-sized groups sharing a window, raster variant first.
    for (int w = 0; w < 16; ++w) {
        const auto& first = plan.provenance[static_cast<std::size_t>(w) * 4];
        CHECK(first.cell_order == std::vector<int>{0, 1, 2, 3});
        std::set<std::vector<int>> orders;
        for (int r = 0; r < 4; ++r) {
            const auto& p = plan.provenance[static_cast<std::size_t>(w) * 4 + r];
            CHECK(p.window_row == first.window_row);
            CHECK(p.window_col == first.window_col);
            orders.insert(p.cell_order);
        }
        CHECK(orders.size() == 4);  // distinct, and only one can be raster
    }
}

TEST_CASE("shuffle preserves each window's patch multiset") {
    Rng rng(19);
    const UnfoldConfig cfg = default_cfg(0);
    for (int trial = 0; trial < 1000; ++trial) {
        UnfoldConfig c = cfg;
        c.seed = static_cast<std::uint64_t>(trial);
        const Tensor roi = random_tensor({1, 8, 8}, rng);
        const Tensor grid = tokenize_roi(roi, c);
        const UnfoldPlan shuffle_plan = plan_shuffle(4, c);
        const UnfoldPlan raster_plan = plan_raster(4, c);
        const Tensor shuffled = concat_windows(grid, shuffle_plan);
        const Tensor raster = concat_windows(grid, raster_plan);
        const int plen = grid.dim(1);
        for (int t = 0; t < shuffle_plan.token_count; ++t) {
            const int window = t / c.oversample;
            Tensor srow({1, 4 * plen});
            Tensor rrow({1, 4 * plen});
            std::copy(shuffled.data() + static_cast<std::size_t>(t) * 4 * plen,
                      shuffled.data() + static_cast<std::size_t>(t + 1) * 4 * plen, srow.data());
            std::copy(raster.data() + static_cast<std::size_t>(window) * 4 * plen,
                      raster.data() + static_cast<std::size_t>(window + 1) * 4 * plen,
                      rrow.data());
            CHECK(window_multiset(srow, 4, plen) == window_multiset(rrow, 4, plen));
        }
    }
}

TEST_CASE("unfolding is deterministic in (grid, config, seed)") {
    Rng rng(23);
    const Tensor roi = random_tensor({3, 8, 8}, rng);
    UnfoldConfig cfg = default_cfg(1234);
    const Tensor grid = tokenize_roi(roi, cfg);
    const Tensor proj = random_tensor({48, cfg.model_dim}, rng);
    const Tensor bias = Tensor({cfg.model_dim});
    const UnfoldedSequence a = unfold_shuffle(grid, cfg, proj, bias);
    const UnfoldedSequence b = unfold_shuffle(grid, cfg, proj, bias);
    CHECK(a.tokens.vec() == b.tokens.vec());

    cfg.seed = 1235;
    const UnfoldedSequence c = unfold_shuffle(grid, cfg, proj, bias);
    CHECK(a.tokens.vec() != c.tokens.vec());
}

TEST_CASE("length law: r*G^2 shuffled tokens, G^2 raster tokens") {
    for (int r : {1, 2, 4, 8}) {
        UnfoldConfig cfg = default_cfg(5);
        cfg.oversample = r;
        CHECK(plan_shuffle(4, cfg).token_count == r * 16);
        CHECK(plan_raster(4, cfg).token_count == 16);
    }
}

TEST_CASE("projection is shared across all tokens") {
    Rng rng(29);
    const UnfoldConfig cfg = default_cfg(31);
    const Tensor roi = random_tensor({3, 8, 8}, rng);
    const Tensor grid = tokenize_roi(roi, cfg);
    const Tensor proj = random_tensor({48, cfg.model_dim}, rng);
    const Tensor bias = random_tensor({cfg.model_dim}, rng, 0.1);
    const UnfoldPlan plan = plan_shuffle(4, cfg);
    const Tensor concat = concat_windows(grid, plan);
    const UnfoldedSequence seq = unfold_shuffle(grid, cfg, proj, bias);
    for (int t = 0; t < plan.token_count; ++t) {
        Tensor row({1, concat.dim(1)});
        std::copy(concat.data() + static_cast<std::size_t>(t) * concat.dim(1),
                  concat.data() + static_cast<std::size_t>(t + 1) * concat.dim(1), row.data());
        const Tensor projected = ops::matmul(row, proj);
        for (int d = 0; d < cfg.model_dim; ++d) {
            CHECK(seq.tokens.at(t, d) ==
                  doctest::Approx(projected.at(0, d) + bias[d]).epsilon(1e-13));
        }
    }
}

TEST_CASE("oversampling beyond the permutation budget is rejected") {
    UnfoldConfig cfg = default_cfg();
    cfg.window = 1;
    cfg.oversample = 2;  // only 1 cell order exists for a 1x1 window
    CHECK_THROWS_AS(plan_shuffle(4, cfg), ConfigError);

    UnfoldConfig big = default_cfg();
    big.oversample = 25;  // (2x2)! = 24
    CHECK_THROWS_AS(plan_shuffle(4, big), ConfigError);

    UnfoldConfig ok = default_cfg();
    ok.oversample = 24;
    CHECK(plan_shuffle(4, ok).token_count == 24 * 16);
}

TEST_CASE("window larger than the grid is rejected") {
    UnfoldConfig cfg = default_cfg();
    cfg.window = 5;
    CHECK_THROWS_AS(plan_raster(4, cfg), ConfigError);
}

TEST_CASE("graph unfold path matches the value-level pipeline") {
    Rng rng(31);
    const UnfoldConfig cfg = default_cfg(77);
    const Tensor roi = random_tensor({3, 8, 8}, rng);
    const Tensor proj = random_tensor({48, cfg.model_dim}, rng);
    const Tensor bias = random_tensor({cfg.model_dim}, rng, 0.1);

    std::vector<TokenProvenance> prov;
    g::Var tokens = unfold_tokens(g::Var::constant(roi), cfg, /*shuffle=*/true,
                                  g::Var::constant(proj), g::Var::constant(bias), &prov);
    const UnfoldedSequence expect =
        unfold_shuffle(tokenize_roi(roi, cfg), cfg, proj, bias);
    CHECK(max_abs_diff(tokens.value(), expect.tokens) < 1e-13);
    REQUIRE(prov.size() == expect.provenance.size());
    for (std::size_t i = 0; i < prov.size(); ++i) {
        CHECK(prov[i].cell_order == expect.provenance[i].cell_order);
    }
}

TEST_CASE("valid-only windowing is available without padding") {
    UnfoldConfig cfg = default_cfg();
    cfg.pad_windows = false;
    const UnfoldPlan plan = plan_raster(4, cfg);
    CHECK(plan.window_count == 9);  // (G-K+1)^2 with G=4, K=2
    for (std::int64_t row : plan.grid_rows) CHECK(row >= 0);
}
