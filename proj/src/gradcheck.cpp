#include "tinydet/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "tinydet/contrastive.hpp"
#include "tinydet/graph.hpp"
#include "tinydet/losses.hpp"
#include "tinydet/ops.hpp"
#include "tinydet/rng.hpp"
#include "tinydet/tensor.hpp"
#include "tinydet/trans_rcnn.hpp"

namespace tinydet::gradcheck {

namespace g = tinydet::graph;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

// Scalar objective over several tensor inputs, rebuilt per evaluation.
using MultiFn = std::function<g::Var(const std::vector<g::Var>&)>;

double eval_multi(const MultiFn& fn, const std::vector<Tensor>& inputs) {
    std::vector<g::Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(g::Var::constant(t));
    return fn(leaves).scalar_value();
}

// Central differences on a deterministic subset of coordinates of input
// `which`, compared against the analytic gradient.
double subset_rel_err(const MultiFn& fn, std::vector<Tensor> inputs, int which,
                      const Tensor& analytic, int max_coords, Rng& rng) {
    Tensor& target = inputs[static_cast<std::size_t>(which)];
    const std::int64_t n = target.size();
    std::vector<std::int64_t> coords;
    if (n <= max_coords) {
        for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
        for (int i = 0; i < max_coords; ++i) {
            coords.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
        }
    }
    double worst = 0.0;
    auto eval_at = [&](std::int64_t c, double v) {
        const double orig = target[c];
        target[c] = v;
        const double f = eval_multi(fn, inputs);
        target[c] = orig;
        return f;
    };
    for (std::int64_t c : coords) {
        const double orig = target[c];
        // Five-point central stencil at base step h: Richardson-extrapolated
        // central differences, cancelling the O(h^2) truncation term.
        const double d_h =
            (eval_at(c, orig + kStep) - eval_at(c, orig - kStep)) / (2.0 * kStep);
        const double d_h2 =
            (eval_at(c, orig + kStep / 2) - eval_at(c, orig - kStep / 2)) / kStep;
        const double fd = (4.0 * d_h2 - d_h) / 3.0;
        const double an = analytic[c];
        const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-3});
        worst = std::max(worst, std::fabs(an - fd) / denom);
    }
    return worst;
}

// Runs `seeds` draws of a multi-input scalar objective and reports the worst
// relative error over all inputs.
CheckResult check_multi(const std::string& name, int seeds, std::uint64_t base_seed,
                        const std::function<std::vector<Tensor>(Rng&)>& make_inputs,
                        const MultiFn& fn, int max_coords_per_input = 16,
                        int max_inputs_per_seed = 0) {
    CheckResult result{name, 0.0, false};
    for (int s = 0; s < seeds; ++s) {
        Rng rng(derive_seed(base_seed, name) + static_cast<std::uint64_t>(s));
        std::vector<Tensor> inputs = make_inputs(rng);
        std::vector<g::Var> leaves;
        for (const Tensor& t : inputs) leaves.push_back(g::Var::leaf(t, true));
        g::Var loss = fn(leaves);
        g::backward(loss);
        // Expensive fixtures rotate through a subset of inputs per seed;
        // all inputs get visited across the seed sweep.
        std::vector<std::size_t> picks;
        if (max_inputs_per_seed <= 0 ||
            max_inputs_per_seed >= static_cast<int>(inputs.size())) {
            for (std::size_t i = 0; i < inputs.size(); ++i) picks.push_back(i);
        } else {
            for (int k = 0; k < max_inputs_per_seed; ++k) {
                picks.push_back((static_cast<std::size_t>(s) * max_inputs_per_seed + k) %
                                inputs.size());
            }
        }
        for (std::size_t i : picks) {
            const Tensor analytic = leaves[i].grad();
            result.max_rel_err = std::max(
                result.max_rel_err, subset_rel_err(fn, inputs, static_cast<int>(i), analytic,
                                                   max_coords_per_input, rng));
        }
    }
    result.pass = result.max_rel_err < kTolerance;
    return result;
}

g::Var weighted_sum(g::Var x, g::Var w) {
    const int n = static_cast<int>(x.value().size());
    return g::dot(g::reshape(x, {n}), g::reshape(w, {n}));
}

}  // namespace

std::vector<CheckResult> op_suite(int seeds, std::uint64_t base_seed) {
    std::vector<CheckResult> results;

    results.push_back(check_multi(
        "matmul", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng),
                                       random_tensor({3, 2}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::matmul(in[0], in[1]), in[2]);
        }));

    results.push_back(check_multi(
        "softmax", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({2, 5}, rng, 2.0),
                                       random_tensor({2, 5}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::softmax_rows_masked(in[0], nullptr), in[1]);
        }));

    results.push_back(check_multi(
        "conv2d_k3", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({2, 5, 5}, rng),
                                       random_tensor({3, 2, 3, 3}, rng),
                                       random_tensor({3, 5, 5}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::conv2d(in[0], in[1], 1, 1), in[2]);
        }));

    results.push_back(check_multi(
        "conv2d_k1", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({3, 4, 4}, rng),
                                       random_tensor({2, 3, 1, 1}, rng),
                                       random_tensor({2, 4, 4}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::conv2d(in[0], in[1], 1, 0), in[2]);
        }));

    results.push_back(check_multi(
        "conv2d_k3_s2", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({2, 6, 6}, rng),
                                       random_tensor({2, 2, 3, 3}, rng),
                                       random_tensor({2, 3, 3}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::conv2d(in[0], in[1], 2, 1), in[2]);
        }));

    results.push_back(check_multi(
        "upsample_nearest_2x", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({2, 3, 3}, rng),
                                       random_tensor({2, 6, 6}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::upsample2x(in[0]), in[1]);
        }));

    results.push_back(check_multi(
        "gelu", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({3, 4}, rng, 1.5),
                                       random_tensor({3, 4}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::gelu(in[0]), in[1]);
        }));

    results.push_back(check_multi(
        "layer_norm", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({3, 6}, rng), random_tensor({6}, rng),
                                       random_tensor({6}, rng), random_tensor({3, 6}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::layer_norm_rows(in[0], in[1], in[2]), in[3]);
        }));

    results.push_back(check_multi(
        "masked_softmax", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({6, 6}, rng, 2.0),
                                       random_tensor({6, 6}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            static const Tensor mask = transrcnn::cls_box_mask(6);
            return weighted_sum(g::softmax_rows_masked(in[0], &mask), in[1]);
        }));

    results.push_back(check_multi(
        "l2_normalize", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({2, 8}, rng), random_tensor({2, 8}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::l2_normalize_rows(in[0]), in[1]);
        }));

    results.push_back(check_multi(
        "global_avg_pool", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({3, 4, 4}, rng), random_tensor({3}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::global_avg_pool(in[0]), in[1]);
        }));

    results.push_back(check_multi(
        "bilinear_crop", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({2, 6, 6}, rng),
                                       random_tensor({2, 4, 4}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return weighted_sum(g::bilinear_crop(in[0], 0.7, 1.1, 4.3, 5.2, 4), in[1]);
        }));

    results.push_back(check_multi(
        "logsumexp", seeds, base_seed,
        [](Rng& rng) { return std::vector<Tensor>{random_tensor({7}, rng, 2.0)}; },
        [](const std::vector<g::Var>& in) { return g::logsumexp(in[0]); }));

    results.push_back(check_multi(
        "cross_entropy", seeds, base_seed,
        [](Rng& rng) { return std::vector<Tensor>{random_tensor({5}, rng, 2.0)}; },
        [](const std::vector<g::Var>& in) { return g::cross_entropy_logits(in[0], 2); }));

    results.push_back(check_multi(
        "smooth_l1", seeds, base_seed,
        [](Rng& rng) {
            // Keep every |difference| clear of the knee at 1.
            Tensor pred({4});
            for (int i = 0; i < 4; ++i) {
                double d = rng.normal();
                while (std::fabs(std::fabs(d) - 1.0) < 0.05) d = rng.normal();
                pred[i] = d;
            }
            return std::vector<Tensor>{pred};
        },
        [](const std::vector<g::Var>& in) {
            return g::smooth_l1(in[0], Tensor({4}, {0.0, 0.0, 0.0, 0.0}));
        }));

    results.push_back(check_multi(
        "info_nce", seeds, base_seed,
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({8}, rng), random_tensor({8}, rng),
                                       random_tensor({8}, rng), random_tensor({8}, rng),
                                       random_tensor({8}, rng)};
        },
        [](const std::vector<g::Var>& in) {
            return contrastive::info_nce(in[0], in[1], {in[2], in[3], in[4]}, 0.5);
        }));

    return results;
}

namespace {

// Tiny two-level contrastive fixture; input layout:
//   [0..3]  lateral features (2 images x 2 levels), channels 3 then 5
//   [4..5]  fused features   (2 images x 2 levels), channels 4
//   wait: fused is also per (image, level) -> 4 tensors; see indices below.
struct ContrastiveFixtureSpec {
    static constexpr int kImages = 2;
    static constexpr int kLevels = 2;
    static constexpr int kFpn = 4;
};

std::vector<Tensor> make_contrastive_inputs(Rng& rng) {
    std::vector<Tensor> in;
    const int lat_ch[2] = {3, 5};
    for (int img = 0; img < 2; ++img) {
        for (int lvl = 0; lvl < 2; ++lvl) {
            in.push_back(random_tensor({lat_ch[lvl], 4, 4}, rng, 0.5));
        }
    }
    for (int img = 0; img < 2; ++img) {
        for (int lvl = 0; lvl < 2; ++lvl) {
            in.push_back(random_tensor({4, 4, 4}, rng, 0.5));
        }
    }
    in.push_back(random_tensor({4, 3, 1, 1}, rng, 0.6));  // adapter level 0
    in.push_back(random_tensor({4, 5, 1, 1}, rng, 0.6));  // adapter level 1
    for (int e = 0; e < 2; ++e) {  // geo then sem encoders
        in.push_back(random_tensor({2, 4, 3, 3}, rng, 0.4));  // conv1 w
        in.push_back(random_tensor({2}, rng, 0.1));           // conv1 b
        in.push_back(random_tensor({3, 2, 3, 3}, rng, 0.4));  // conv2 w
        in.push_back(random_tensor({3}, rng, 0.1));           // conv2 b
        in.push_back(random_tensor({3, 4}, rng, 0.5));        // lin1 w
        in.push_back(random_tensor({4}, rng, 0.1));           // lin1 b
        in.push_back(random_tensor({4, contrastive::kReprDim}, rng, 0.5));
        in.push_back(random_tensor({contrastive::kReprDim}, rng, 0.1));
    }
    return in;
}

contrastive::ReprBatch fixture_batch(const std::vector<g::Var>& in, bool normalize) {
    std::vector<std::vector<g::Var>> laterals = {{in[0], in[1]}, {in[2], in[3]}};
    std::vector<std::vector<g::Var>> fused = {{in[4], in[5]}, {in[6], in[7]}};
    contrastive::ContrastiveVars vars;
    vars.lateral_adapters = {in[8], in[9]};
    auto enc = [&](int base) {
        contrastive::EncoderVars e;
        e.conv1_w = in[static_cast<std::size_t>(base)];
        e.conv1_b = in[static_cast<std::size_t>(base + 1)];
        e.conv2_w = in[static_cast<std::size_t>(base + 2)];
        e.conv2_b = in[static_cast<std::size_t>(base + 3)];
        e.lin1_w = in[static_cast<std::size_t>(base + 4)];
        e.lin1_b = in[static_cast<std::size_t>(base + 5)];
        e.lin2_w = in[static_cast<std::size_t>(base + 6)];
        e.lin2_b = in[static_cast<std::size_t>(base + 7)];
        return e;
    };
    vars.geometric = enc(10);
    vars.semantic = enc(18);
    contrastive::ContrastiveConfig cfg{0.2, normalize};
    return contrastive::build_repr_batch(laterals, fused, vars, cfg);
}

}  // namespace

std::vector<CheckResult> loss_suite(int seeds, std::uint64_t base_seed) {
    std::vector<CheckResult> results;
    const contrastive::ContrastiveConfig ccfg{0.2, true};

    results.push_back(check_multi(
        "geometric_loss_end_to_end", seeds, base_seed, make_contrastive_inputs,
        [ccfg](const std::vector<g::Var>& in) {
            return contrastive::geometric_loss(fixture_batch(in, ccfg.normalize), ccfg);
        },
        4, 4));

    results.push_back(check_multi(
        "semantic_loss_end_to_end", seeds, base_seed, make_contrastive_inputs,
        [ccfg](const std::vector<g::Var>& in) {
            return contrastive::semantic_loss(fixture_batch(in, ccfg.normalize), ccfg);
        },
        4, 4));

    // CE through the masked transformer with the routing held fixed.
    const transrcnn::MteConfig mcfg{2, 2, 8, 2};
    auto make_mte_inputs = [mcfg](Rng& rng) {
        std::vector<Tensor> in;
        in.push_back(random_tensor({6, 8}, rng, 0.7));  // local sequence, N_u = 4
        for (int l = 0; l < mcfg.layers; ++l) {
            in.push_back(Tensor::full({8}, 1.0));          // ln1 g
            in.push_back(random_tensor({8}, rng, 0.05));   // ln1 b
            in.push_back(random_tensor({8, 8}, rng, 0.4));
            in.push_back(random_tensor({8}, rng, 0.05));
            in.push_back(random_tensor({8, 8}, rng, 0.4));
            in.push_back(random_tensor({8}, rng, 0.05));
            in.push_back(random_tensor({8, 8}, rng, 0.4));
            in.push_back(random_tensor({8}, rng, 0.05));
            in.push_back(random_tensor({8, 8}, rng, 0.4));
            in.push_back(random_tensor({8}, rng, 0.05));
            in.push_back(Tensor::full({8}, 1.0));          // ln2 g
            in.push_back(random_tensor({8}, rng, 0.05));   // ln2 b
            in.push_back(random_tensor({8, 16}, rng, 0.4));
            in.push_back(random_tensor({16}, rng, 0.05));
            in.push_back(random_tensor({16, 8}, rng, 0.4));
            in.push_back(random_tensor({8}, rng, 0.05));
        }
        in.push_back(random_tensor({8, 3}, rng, 0.5));  // cls head w
        in.push_back(random_tensor({3}, rng, 0.05));    // cls head b
        in.push_back(random_tensor({8, 4}, rng, 0.5));  // box head w
        in.push_back(random_tensor({4}, rng, 0.05));    // box head b
        return in;
    };
    auto mte_loss = [mcfg](const std::vector<g::Var>& in,
                           const transrcnn::TaskGroups& groups) {
        transrcnn::MteVars vars;
        std::size_t k = 1;
        for (int l = 0; l < mcfg.layers; ++l) {
            transrcnn::MteLayerVars lv;
            lv.ln1_g = in[k++];
            lv.ln1_b = in[k++];
            lv.wq = in[k++];
            lv.bq = in[k++];
            lv.wk = in[k++];
            lv.bk = in[k++];
            lv.wv = in[k++];
            lv.bv = in[k++];
            lv.wo = in[k++];
            lv.bo = in[k++];
            lv.ln2_g = in[k++];
            lv.ln2_b = in[k++];
            lv.ff1_w = in[k++];
            lv.ff1_b = in[k++];
            lv.ff2_w = in[k++];
            lv.ff2_b = in[k++];
            vars.layers.push_back(lv);
        }
        const Tensor mask = transrcnn::cls_box_mask(6);
        transrcnn::MteResult res = transrcnn::mte_forward(in[0], vars, mcfg, mask);
        transrcnn::HeadVars heads{in[k], in[k + 1], in[k + 2], in[k + 3]};
        auto [logits, deltas] = transrcnn::heads_forward(res.tokens, groups, heads);
        (void)deltas;
        return g::cross_entropy_logits(logits, 1);
    };
    results.push_back(check_multi(
        "mte_cross_entropy_end_to_end", seeds, base_seed,
        [make_mte_inputs](Rng& rng) { return make_mte_inputs(rng); },
        [mte_loss](const std::vector<g::Var>& in) {
            // Fixed routing: alternating assignment keeps the check purely
            // about the differentiable path.
            transrcnn::TaskGroups groups;
            groups.cls_tokens = {0, 2};
            groups.box_tokens = {1, 3};
            return mte_loss(in, groups);
        },
        4, 6));

    return results;
}

std::vector<CheckResult> run_all(int seeds) {
    std::vector<CheckResult> all = op_suite(seeds);
    std::vector<CheckResult> losses = loss_suite(seeds);
    all.insert(all.end(), losses.begin(), losses.end());
    return all;
}

bool all_pass(const std::vector<CheckResult>& results) {
    for (const auto& r : results) {
        if (!r.pass) return false;
    }
    return true;
}

}  // namespace tinydet::gradcheck
