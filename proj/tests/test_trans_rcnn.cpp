#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "test_util.hpp"
#include "tinydet/errors.hpp"
#include "tinydet/ops.hpp"
#include "tinydet/rng.hpp"
#include "tinydet/trans_rcnn.hpp"
#include "tts_reference.hpp"

using namespace tinydet;
using namespace tinydet::transrcnn;
namespace g = tinydet::graph;
using testutil::random_tensor;

namespace {

MteVars random_mte(const MteConfig& cfg, Rng& rng) {
    MteVars vars;
    const int d = cfg.model_dim;
    for (int l = 0; l < cfg.layers; ++l) {
        MteLayerVars lv;
        lv.ln1_g = g::Var::constant(Tensor::full({d}, 1.0));
        lv.ln1_b = g::Var::constant(Tensor({d}));
        lv.wq = g::Var::constant(random_tensor({d, d}, rng, 0.4));
        lv.bq = g::Var::constant(random_tensor({d}, rng, 0.05));
        lv.wk = g::Var::constant(random_tensor({d, d}, rng, 0.4));
        lv.bk = g::Var::constant(random_tensor({d}, rng, 0.05));
        lv.wv = g::Var::constant(random_tensor({d, d}, rng, 0.4));
        lv.bv = g::Var::constant(random_tensor({d}, rng, 0.05));
        lv.wo = g::Var::constant(random_tensor({d, d}, rng, 0.4));
        lv.bo = g::Var::constant(random_tensor({d}, rng, 0.05));
        lv.ln2_g = g::Var::constant(Tensor::full({d}, 1.0));
        lv.ln2_b = g::Var::constant(Tensor({d}));
        lv.ff1_w = g::Var::constant(random_tensor({d, cfg.ffn_mult * d}, rng, 0.4));
        lv.ff1_b = g::Var::constant(random_tensor({cfg.ffn_mult * d}, rng, 0.05));
        lv.ff2_w = g::Var::constant(random_tensor({cfg.ffn_mult * d, d}, rng, 0.4));
        lv.ff2_b = g::Var::constant(random_tensor({d}, rng, 0.05));
        vars.layers.push_back(lv);
    }
    return vars;
}

MteVars zero_query_key_mte(const MteConfig& cfg, Rng& rng) {
    MteVars vars = random_mte(cfg, rng);
    for (auto& lv : vars.layers) {
        lv.wq = g::Var::constant(Tensor({cfg.model_dim, cfg.model_dim}));
        lv.bq = g::Var::constant(Tensor({cfg.model_dim}));
        lv.wk = g::Var::constant(Tensor({cfg.model_dim, cfg.model_dim}));
        lv.bk = g::Var::constant(Tensor({cfg.model_dim}));
    }
    return vars;
}

}  // namespace

TEST_CASE("local sequence assembly keeps order and counts") {
    Rng rng(3);
    const int d = 8;
    const Tensor unfolded = random_tensor({16, d}, rng);
    const Tensor cls = random_tensor({d}, rng);
    const Tensor box = random_tensor({d}, rng);
    g::Var seq = assemble_local_sequence(g::Var::constant(unfolded), g::Var::constant(cls),
                                         g::Var::constant(box));
    REQUIRE(seq.value().dim(0) == 18);
    for (int c = 0; c < d; ++c) {
        CHECK(seq.value().at(0, c) == cls[c]);
        CHECK(seq.value().at(17, c) == box[c]);
    }
    for (int t = 0; t < 16; ++t) {
        for (int c = 0; c < d; ++c) CHECK(seq.value().at(t + 1, c) == unfolded.at(t, c));
    }
}

TEST_CASE("empty unfolded sequence is rejected") {
    Rng rng(5);
    const Tensor cls = random_tensor({8}, rng);
    CHECK_THROWS_AS(assemble_local_sequence(g::Var::constant(Tensor({1, 4})),
                                            g::Var::constant(cls), g::Var::constant(cls)),
                    ShapeError);
}

TEST_CASE("mask blocks cls-box attention exactly, any input") {
    Rng rng(7);
    const MteConfig cfg{2, 2, 8, 2};
    for (int trial = 0; trial < 25; ++trial) {
        const int n_unfold = 3 + static_cast<int>(rng.below(6));
        const Tensor seq0 = random_tensor({n_unfold + 2, cfg.model_dim}, rng);
        MteVars vars = random_mte(cfg, rng);
        const Tensor mask = cls_box_mask(n_unfold + 2);
        MteResult res = mte_forward(g::Var::constant(seq0), vars, cfg, mask);
        REQUIRE(static_cast<int>(res.final_attention.size()) == cfg.heads);
        for (const Tensor& attn : res.final_attention) {
            const int n = attn.dim(0);
            CHECK(attn.at(0, n - 1) == 0.0);
            CHECK(attn.at(n - 1, 0) == 0.0);
            for (int r = 0; r < n; ++r) {
                double sum = 0.0;
                for (int c = 0; c < n; ++c) sum += attn.at(r, c);
                CHECK(std::fabs(sum - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("zero query/key projections give uniform attention over allowed keys") {
    Rng rng(9);
    const MteConfig cfg{1, 2, 8, 2};
    const int n_unfold = 4;
    const Tensor seq0 = random_tensor({n_unfold + 2, cfg.model_dim}, rng);
    MteVars vars = zero_query_key_mte(cfg, rng);
    MteResult res = mte_forward(g::Var::constant(seq0), vars, cfg, cls_box_mask(n_unfold + 2));
    for (const Tensor& attn : res.final_attention) {
        const int n = attn.dim(0);
        // cls row: box column blocked, n-1 allowed keys.
        for (int c = 0; c < n - 1; ++c) {
            CHECK(attn.at(0, c) == doctest::Approx(1.0 / (n_unfold + 1)).epsilon(1e-12));
        }
        // interior row: all n keys allowed.
        for (int c = 0; c < n; ++c) {
            CHECK(attn.at(1, c) == doctest::Approx(1.0 / (n_unfold + 2)).epsilon(1e-12));
        }
    }
}

TEST_CASE("single-head attention matches a dense oracle") {
    Rng rng(11);
    const MteConfig cfg{1, 1, 6, 2};
    const int n = 5;
    const Tensor seq0 = random_tensor({n, 6}, rng);
    MteVars vars = random_mte(cfg, rng);
    const Tensor mask = cls_box_mask(n);
    MteResult res = mte_forward(g::Var::constant(seq0), vars, cfg, mask);

    // Recompute the attention from the layer-norm output via plain ops.
    const MteLayerVars& lv = vars.layers[0];
    g::Var h = g::layer_norm_rows(g::Var::constant(seq0), lv.ln1_g, lv.ln1_b);
    Tensor q = ops::matmul(h.value(), lv.wq.value());
    Tensor k = ops::matmul(h.value(), lv.wk.value());
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < 6; ++c) {
            q.at(r, c) += lv.bq.value()[c];
            k.at(r, c) += lv.bk.value()[c];
        }
    }
    Tensor logits({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int c = 0; c < 6; ++c) acc += q.at(i, c) * k.at(j, c);
            logits.at(i, j) = acc / std::sqrt(6.0) + mask.at(i, j);
        }
    const Tensor expect = ops::softmax_lastdim(logits);
    CHECK(ops::max_rel_error(res.final_attention[0], expect, 1e-9) < 1e-9);
}

TEST_CASE("attention scores renormalize over unfolded tokens and sum to one") {
    Rng rng(13);
    const MteConfig cfg{2, 4, 8, 2};
    const int n_unfold = 6;
    const Tensor seq0 = random_tensor({n_unfold + 2, cfg.model_dim}, rng);
    MteVars vars = random_mte(cfg, rng);
    MteResult res = mte_forward(g::Var::constant(seq0), vars, cfg, cls_box_mask(n_unfold + 2));
    auto [a_cls, a_box] = attention_scores(res.final_attention, n_unfold);
    double cls_sum = 0.0, box_sum = 0.0;
    for (int i = 0; i < n_unfold; ++i) {
        cls_sum += a_cls[i];
        box_sum += a_box[i];
    }
    CHECK(std::fabs(cls_sum - 1.0) < 1e-12);
    CHECK(std::fabs(box_sum - 1.0) < 1e-12);

    // Standalone recomputation: per head, restrict and renormalize, average.
    Tensor expect_cls({n_unfold});
    for (const Tensor& attn : res.final_attention) {
        double denom = 0.0;
        for (int i = 0; i < n_unfold; ++i) denom += attn.at(0, 1 + i);
        for (int i = 0; i < n_unfold; ++i) expect_cls[i] += attn.at(0, 1 + i) / denom;
    }
    for (int i = 0; i < n_unfold; ++i) expect_cls[i] /= cfg.heads;
    CHECK(ops::max_rel_error(a_cls, expect_cls, 1e-9) < 1e-12);
}

TEST_CASE("identical keys give uniform attention scores") {
    Rng rng(15);
    const MteConfig cfg{1, 2, 8, 2};
    const int n_unfold = 4;
    // Identical unfolded tokens -> identical keys -> uniform restricted rows.
    Tensor seq0({n_unfold + 2, cfg.model_dim});
    const Tensor row = random_tensor({cfg.model_dim}, rng);
    const Tensor cls = random_tensor({cfg.model_dim}, rng);
    const Tensor box = random_tensor({cfg.model_dim}, rng);
    for (int c = 0; c < cfg.model_dim; ++c) {
        seq0.at(0, c) = cls[c];
        seq0.at(n_unfold + 1, c) = box[c];
        for (int t = 0; t < n_unfold; ++t) seq0.at(1 + t, c) = row[c];
    }
    MteVars vars = random_mte(cfg, rng);
    MteResult res = mte_forward(g::Var::constant(seq0), vars, cfg, cls_box_mask(n_unfold + 2));
    auto [a_cls, a_box] = attention_scores(res.final_attention, n_unfold);
    for (int i = 0; i < n_unfold; ++i) {
        CHECK(a_cls[i] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(a_box[i] == doctest::Approx(0.25).epsilon(1e-12));
    }
}

TEST_CASE("task token selection follows the hand-traced examples") {
    // Example 1: mixed preferences.
    Tensor a_cls({4}, {0.4, 0.3, 0.2, 0.05});
    Tensor a_box({4}, {0.1, 0.35, 0.25, 0.3});
    TaskGroups g1 = task_token_select(a_cls, a_box);
    CHECK(std::set<int>(g1.cls_tokens.begin(), g1.cls_tokens.end()) == std::set<int>{0, 3});
    CHECK(std::set<int>(g1.box_tokens.begin(), g1.box_tokens.end()) == std::set<int>{1, 2});

    // Example 2: all class-preferring; the <= admits three into G_c.
    Tensor c2({4}, {0.4, 0.3, 0.2, 0.1});
    Tensor b2({4}, {0.1, 0.2, 0.1, 0.05});
    TaskGroups g2 = task_token_select(c2, b2);
    CHECK(g2.cls_tokens.size() == 3);
    CHECK(g2.box_tokens.size() == 1);
}

TEST_CASE("every unfolded token lands in exactly one group") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(31));
        Tensor a_cls({n}), a_box({n});
        for (int i = 0; i < n; ++i) {
            a_cls[i] = rng.uniform01();
            a_box[i] = rng.uniform01();
        }
        TaskGroups groups = task_token_select(a_cls, a_box);
        CHECK(static_cast<int>(groups.cls_tokens.size() + groups.box_tokens.size()) == n);
        std::set<int> all;
        for (int i : groups.cls_tokens) all.insert(i);
        for (int i : groups.box_tokens) all.insert(i);
        CHECK(static_cast<int>(all.size()) == n);
        CHECK(static_cast<int>(groups.box_tokens.size()) <= n / 2);
    }
}

TEST_CASE("selection matches the independent reference on 1000 random draws") {
    Rng rng(19);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(31));
        std::vector<double> a_cls(static_cast<std::size_t>(n)), a_box(a_cls.size());
        for (int i = 0; i < n; ++i) {
            a_cls[static_cast<std::size_t>(i)] = rng.uniform01();
            a_box[static_cast<std::size_t>(i)] = rng.uniform01();
        }
        TaskGroups got = task_token_select(Tensor({n}, std::vector<double>(a_cls)),
                                           Tensor({n}, std::vector<double>(a_box)));
        tts_reference::Split expect = tts_reference::select(a_cls, a_box);
        CHECK(got.cls_tokens == expect.cls);
        CHECK(got.box_tokens == expect.box);
    }
}

TEST_CASE("heads with zero weights output only the bias") {
    Rng rng(23);
    const Tensor tokens = random_tensor({6, 8}, rng);
    HeadVars heads;
    heads.cls_w = g::Var::constant(Tensor({8, 4}));
    heads.cls_b = g::Var::constant(Tensor({4}, {1, 2, 3, 4}));
    heads.box_w = g::Var::constant(Tensor({8, 4}));
    heads.box_b = g::Var::constant(Tensor({4}, {5, 6, 7, 8}));
    TaskGroups groups;
    groups.cls_tokens = {0, 1};
    groups.box_tokens = {2, 3};
    auto [logits, deltas] = heads_forward(g::Var::constant(tokens), groups, heads);
    CHECK(logits.value().vec() == std::vector<double>{1, 2, 3, 4});
    CHECK(deltas.value().vec() == std::vector<double>{5, 6, 7, 8});
}

TEST_CASE("head pooling is permutation invariant within a group") {
    Rng rng(29);
    const Tensor tokens = random_tensor({7, 8}, rng);
    HeadVars heads;
    heads.cls_w = g::Var::constant(random_tensor({8, 3}, rng));
    heads.cls_b = g::Var::constant(random_tensor({3}, rng));
    heads.box_w = g::Var::constant(random_tensor({8, 4}, rng));
    heads.box_b = g::Var::constant(random_tensor({4}, rng));
    TaskGroups a;
    a.cls_tokens = {0, 2, 4};
    a.box_tokens = {1, 3};
    TaskGroups b;
    b.cls_tokens = {4, 0, 2};
    b.box_tokens = {3, 1};
    auto [la, da] = heads_forward(g::Var::constant(tokens), a, heads);
    auto [lb, db] = heads_forward(g::Var::constant(tokens), b, heads);
    CHECK(max_abs_diff(la.value(), lb.value()) < 1e-12);
    CHECK(max_abs_diff(da.value(), db.value()) < 1e-12);
}

TEST_CASE("heads match a mean-then-matmul oracle") {
    Rng rng(31);
    const Tensor tokens = random_tensor({6, 8}, rng);
    HeadVars heads;
    heads.cls_w = g::Var::constant(random_tensor({8, 3}, rng));
    heads.cls_b = g::Var::constant(random_tensor({3}, rng));
    heads.box_w = g::Var::constant(random_tensor({8, 4}, rng));
    heads.box_b = g::Var::constant(random_tensor({4}, rng));
    TaskGroups groups;
    groups.cls_tokens = {1, 3};
    groups.box_tokens = {0, 2};
    auto [logits, deltas] = heads_forward(g::Var::constant(tokens), groups, heads);

    // Class pool: rows {0, 2, 4}; box pool: rows {5, 1, 3}.
    Tensor pool({1, 8});
    for (int r : {0, 2, 4})
        for (int c = 0; c < 8; ++c) pool.at(0, c) += tokens.at(r, c) / 3.0;
    Tensor expect = ops::matmul(pool, heads.cls_w.value());
    for (int c = 0; c < 3; ++c) expect.at(0, c) += heads.cls_b.value()[c];
    CHECK(ops::max_rel_error(logits.value(), Tensor({3}, expect.vec()), 1e-9) < 1e-12);
}
