#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tinydet/errors.hpp"
#include "tinydet/losses.hpp"
#include "tinydet/model.hpp"
#include "tinydet/optim.hpp"
#include "tinydet/rng.hpp"
#include "tinydet/train.hpp"

using namespace tinydet;
namespace g = tinydet::graph;
using testutil::random_tensor;

namespace {

// Small end-to-end configuration: 16x16 images, two levels, tiny widths.
config::RunConfig tiny_config() {
    config::RunConfig cfg;
    cfg.scene.image_size = 16;
    cfg.scene.objects_min = 1;
    cfg.scene.objects_max = 2;
    cfg.scene.side_min = 3;
    cfg.scene.side_max = 6;
    cfg.scene.seed = 5;
    cfg.model.levels = 1;
    cfg.model.backbone_channels = {4, 8};
    cfg.model.fpn_channels = 8;
    cfg.model.encoder = {2, 3, 8};
    cfg.model.unfold.model_dim = 16;
    cfg.model.unfold.oversample = 2;
    cfg.model.mte.layers = 1;
    cfg.model.mte.heads = 2;
    cfg.model.mte.model_dim = 16;
    cfg.model.roi_size = 8;
    cfg.model.class_count = cfg.scene.class_count;
    cfg.proposals.max_positives = 2;
    cfg.proposals.negatives_per_positive = 1;
    cfg.train.batch_size = 2;
    cfg.train.epochs = 1;
    cfg.train.seed = 11;
    return cfg;
}

std::vector<synth::Scene> tiny_scenes(const config::RunConfig& cfg, int count) {
    std::vector<synth::Scene> scenes;
    for (int i = 0; i < count; ++i) scenes.push_back(synth::generate_scene(cfg.scene, i));
    return scenes;
}

}  // namespace

TEST_CASE("cross entropy closed forms") {
    g::Var uniform = losses::cross_entropy(g::Var::constant(Tensor({2}, {0.3, 0.3})), 0);
    CHECK(uniform.scalar_value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    g::Var hot = losses::cross_entropy(g::Var::constant(Tensor({3}, {60.0, 0.0, 0.0})), 0);
    CHECK(hot.scalar_value() < 1e-12);

    Rng rng(3);
    const Tensor logits = random_tensor({5}, rng, 2.0);
    g::Var l = losses::cross_entropy(g::Var::constant(logits), 3);
    long double z = 0.0L;
    for (int i = 0; i < 5; ++i) z += std::exp(static_cast<long double>(logits[i]));
    const double expect = static_cast<double>(
        -std::log(std::exp(static_cast<long double>(logits[3])) / z));
    CHECK(l.scalar_value() == doctest::Approx(expect).epsilon(1e-12));

    CHECK_THROWS_AS(losses::cross_entropy(g::Var::constant(logits), 5), ConfigError);
}

TEST_CASE("smooth l1 branches and knee continuity") {
    const Tensor target({4});
    g::Var small = losses::smooth_l1(g::Var::constant(Tensor({4}, {0.5, 0, 0, 0})), target);
    CHECK(small.scalar_value() == doctest::Approx(0.125).epsilon(1e-12));

    g::Var big = losses::smooth_l1(g::Var::constant(Tensor({4}, {2, 0, 0, 0})), target);
    CHECK(big.scalar_value() == doctest::Approx(1.5).epsilon(1e-12));

    // Both branches give slope 1 at the knee; finite differences straddling
    // it stay consistent.
    for (double d0 : {1.0 - 1e-4, 1.0, 1.0 + 1e-4}) {
        g::Var pred = g::Var::leaf(Tensor({4}, {d0, 0, 0, 0}), true);
        g::Var loss = losses::smooth_l1(pred, target);
        g::backward(loss);
        CHECK(pred.grad()[0] == doctest::Approx(d0 < 1.0 ? d0 : 1.0).epsilon(1e-9));
    }
    // Central difference exactly at the knee: quadratic branch below,
    // linear above, so the estimate is 1 - h/4 in closed form.
    const double h = 1e-3;
    const auto eval = [&](double d) {
        return losses::smooth_l1(g::Var::constant(Tensor({4}, {d, 0, 0, 0})), target)
            .scalar_value();
    };
    const double fd = (eval(1.0 + h) - eval(1.0 - h)) / (2 * h);
    CHECK(fd == doctest::Approx(1.0 - h / 4.0).epsilon(1e-9));
}

TEST_CASE("total loss substitutes directly") {
    losses::LossConfig cfg;
    cfg.lambda = 0.1;
    CHECK(losses::total_loss(1.0, 0.5, 2.0, 1.0, cfg) == doctest::Approx(1.8).epsilon(1e-12));
    cfg.lambda = 0.0;
    CHECK(losses::total_loss(1.0, 0.5, 2.0, 1.0, cfg) == doctest::Approx(1.5).epsilon(1e-12));
    cfg.lambda = 1.0;
    CHECK(losses::total_loss(1.0, 0.5, 2.0, 1.0, cfg) == doctest::Approx(4.5).epsilon(1e-12));

    // Linear in lambda with slope geo+sem, exactly.
    const double slope = (losses::total_loss(1.0, 0.5, 2.0, 1.0, {0.7, 0.07, true, 3}) -
                          losses::total_loss(1.0, 0.5, 2.0, 1.0, {0.2, 0.07, true, 3})) /
                         0.5;
    CHECK(slope == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("sgd fixed point and single-step arithmetic") {
    optim::OptimConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.0;
    cfg.momentum = 0.0;
    Tensor w = Tensor::scalar(1.0);
    Tensor buf;
    optim::sgd_step(w, Tensor::scalar(0.0), buf, cfg);
    CHECK(w[0] == 1.0);
    optim::sgd_step(w, Tensor::scalar(1.0), buf, cfg);
    CHECK(w[0] == doctest::Approx(0.99).epsilon(1e-15));
}

TEST_CASE("sgd momentum matches the hand-unrolled recurrence") {
    optim::OptimConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    cfg.momentum = 0.9;
    Tensor w = Tensor::scalar(2.0);
    Tensor buf;
    const double g1 = 0.5, g2 = -0.3;

    double rw = 2.0, rv = 0.0;
    double grad = g1 + cfg.weight_decay * rw;
    rv = cfg.momentum * rv + grad;
    rw -= cfg.lr * rv;
    optim::sgd_step(w, Tensor::scalar(g1), buf, cfg);
    CHECK(w[0] == doctest::Approx(rw).epsilon(1e-15));

    grad = g2 + cfg.weight_decay * rw;
    rv = cfg.momentum * rv + grad;
    rw -= cfg.lr * rv;
    optim::sgd_step(w, Tensor::scalar(g2), buf, cfg);
    CHECK(w[0] == doctest::Approx(rw).epsilon(1e-15));
}

TEST_CASE("sgd rejects shape mismatches") {
    optim::OptimConfig cfg;
    Tensor w({2});
    Tensor buf;
    CHECK_THROWS_AS(optim::sgd_step(w, Tensor({3}), buf, cfg), ShapeError);
}

TEST_CASE("training is deterministic given the seed") {
    config::RunConfig cfg = tiny_config();
    auto scenes = tiny_scenes(cfg, 4);

    auto run = [&]() {
        model::Model m(cfg.model);
        m.init_params(cfg.train.seed);
        optim::SgdState state(cfg.optim);
        return train::train_model(m, scenes, cfg, state);
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].ce == b[i].ce);
        CHECK(a[i].sl1 == b[i].sl1);
        CHECK(a[i].geo == b[i].geo);
        CHECK(a[i].sem == b[i].sem);
        CHECK(a[i].total == b[i].total);
    }
}

TEST_CASE("lambda zero produces zero contrastive components and identical detection path") {
    config::RunConfig cfg = tiny_config();
    auto scenes = tiny_scenes(cfg, 2);
    std::vector<std::vector<synth::Proposal>> proposals;
    for (const auto& s : scenes) {
        proposals.push_back(synth::sample_proposals(s, cfg.proposals, cfg.scene.class_count, 3));
    }
    model::Model m(cfg.model);
    m.init_params(7);

    losses::LossConfig with;
    with.lambda = 0.1;
    with.class_count = cfg.scene.class_count;
    losses::LossConfig without = with;
    without.lambda = 0.0;

    model::BoundParams bound_a(m.params(), false);
    model::ForwardOptions opts;
    opts.unfold_seed = 99;
    const auto ra = m.forward_train(scenes, proposals, with, bound_a, opts);
    model::BoundParams bound_b(m.params(), false);
    const auto rb = m.forward_train(scenes, proposals, without, bound_b, opts);

    CHECK(rb.geo == 0.0);
    CHECK(rb.sem == 0.0);
    CHECK(ra.geo > 0.0);
    CHECK(ra.ce == rb.ce);    // bitwise: contrastive branch is side-effect free
    CHECK(ra.sl1 == rb.sl1);
    CHECK(ra.total.scalar_value() ==
          doctest::Approx(rb.total.scalar_value() + 0.1 * (ra.geo + ra.sem)).epsilon(1e-12));
}

TEST_CASE("training aborts with the offending component on NaN") {
    config::RunConfig cfg = tiny_config();
    auto scenes = tiny_scenes(cfg, 2);
    model::Model m(cfg.model);
    m.init_params(3);
    m.params().get("head.cls.b")[0] = std::numeric_limits<double>::quiet_NaN();
    optim::SgdState state(cfg.optim);
    try {
        train::train_model(m, scenes, cfg, state);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("cross-entropy") != std::string::npos);
    }
}

TEST_CASE("frozen routing reproduces the same losses on a frozen minibatch") {
    config::RunConfig cfg = tiny_config();
    auto scenes = tiny_scenes(cfg, 2);
    std::vector<std::vector<synth::Proposal>> proposals;
    for (const auto& s : scenes) {
        proposals.push_back(synth::sample_proposals(s, cfg.proposals, cfg.scene.class_count, 3));
    }
    model::Model m(cfg.model);
    m.init_params(13);
    losses::LossConfig lc;
    lc.lambda = 0.0;
    lc.class_count = cfg.scene.class_count;

    model::BoundParams bound(m.params(), false);
    model::ForwardOptions opts;
    opts.unfold_seed = 5;
    const auto first = m.forward_train(scenes, proposals, lc, bound, opts);
    model::ForwardOptions frozen = opts;
    frozen.frozen_routing = &first.routing;
    model::BoundParams bound2(m.params(), false);
    const auto second = m.forward_train(scenes, proposals, lc, bound2, frozen);
    CHECK(first.ce == second.ce);
    CHECK(first.sl1 == second.sl1);
}

TEST_CASE("end-to-end total loss gradient matches finite differences on a frozen minibatch") {
    config::RunConfig cfg = tiny_config();
    auto scenes = tiny_scenes(cfg, 2);
    std::vector<std::vector<synth::Proposal>> proposals;
    for (const auto& s : scenes) {
        proposals.push_back(synth::sample_proposals(s, cfg.proposals, cfg.scene.class_count, 3));
    }
    model::Model m(cfg.model);
    m.init_params(21);
    losses::LossConfig lc;
    lc.lambda = 0.1;
    lc.tau = 0.2;
    lc.class_count = cfg.scene.class_count;

    model::BoundParams bound(m.params(), true);
    model::ForwardOptions opts;
    opts.unfold_seed = 55;
    auto fwd = m.forward_train(scenes, proposals, lc, bound, opts);
    g::backward(fwd.total);
    model::ForwardOptions frozen = opts;
    frozen.frozen_routing = &fwd.routing;

    Rng rng(77);
    const double h = 1e-3;
    // Spot-check a handful of coordinates in several parameter tensors.
    for (const std::string name :
         {"backbone.conv0.w", "fpn.lateral0.w", "enc.geo.conv1.w", "unfold.proj.w",
          "mte.l0.wq", "head.cls.w", "tokens.cls"}) {
        const int slot = m.params().slot(name);
        const Tensor analytic = bound.grad_of(slot);
        Tensor& param = m.params().get(name);
        auto loss_at = [&](double value, std::int64_t c) {
            const double orig = param[c];
            param[c] = value;
            model::BoundParams bp(m.params(), false);
            const double f = m.forward_train(scenes, proposals, lc, bp, frozen)
                                 .total.scalar_value();
            param[c] = orig;
            return f;
        };
        for (int probe = 0; probe < 4; ++probe) {
            const std::int64_t c =
                static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(param.size())));
            const double orig = param[c];
            // Richardson-extrapolated central differences cancel the O(h^2)
            // truncation term that two attention layers otherwise leave
            // above the tolerance.
            const double d_h = (loss_at(orig + h, c) - loss_at(orig - h, c)) / (2 * h);
            const double d_h2 =
                (loss_at(orig + h / 2, c) - loss_at(orig - h / 2, c)) / h;
            const double fd = (4.0 * d_h2 - d_h) / 3.0;
            const double denom = std::max({std::fabs(fd), std::fabs(analytic[c]), 1e-3});
            INFO(name, " coord ", c, " analytic ", analytic[c], " fd ", fd);
            CHECK(std::fabs(fd - analytic[c]) / denom < 1e-4);
        }
    }
}
