#include "tinydet/model.hpp"

#include <cmath>
#include <string>

#include "tinydet/errors.hpp"
#include "tinydet/fpn.hpp"
#include "tinydet/ops.hpp"
#include "tinydet/rng.hpp"

namespace tinydet::model {

namespace g = tinydet::graph;

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ConfigError("ParamStore: duplicate parameter " + name);
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    values_.push_back(std::move(init));
    return values_.back();
}

Tensor& ParamStore::get(const std::string& name) { return values_[static_cast<std::size_t>(slot(name))]; }

const Tensor& ParamStore::get(const std::string& name) const {
    return values_[static_cast<std::size_t>(slot(name))];
}

int ParamStore::slot(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
    return it->second;
}

BoundParams::BoundParams(ParamStore& store, bool requires_grad) : store_(&store) {
    vars_.reserve(static_cast<std::size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i) {
        vars_.push_back(g::Var::leaf(store.value(i), requires_grad));
    }
}

g::Var BoundParams::operator()(const std::string& name) const {
    return vars_[static_cast<std::size_t>(store_->slot(name))];
}

Tensor BoundParams::grad_of(int slot) const { return vars_[static_cast<std::size_t>(slot)].grad(); }

namespace {

std::string level_name(const std::string& prefix, int i, const std::string& suffix) {
    return prefix + std::to_string(i) + suffix;
}

void init_normal(Tensor& t, double std, Rng& rng) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
}

}  // namespace

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    const int levels = cfg_.levels + 1;
    if (static_cast<int>(cfg_.backbone_channels.size()) != levels) {
        throw ConfigError("Model: backbone_channels must list " + std::to_string(levels) +
                          " entries");
    }
    if (cfg_.use_tts && !cfg_.use_mte) {
        throw ConfigError("Model: task token selection requires the transformer encoder");
    }
    if (cfg_.unfold.model_dim != cfg_.mte.model_dim) {
        throw ConfigError("Model: unfold model_dim and MTE model_dim disagree");
    }
    const int d = cfg_.unfold.model_dim;
    int prev = 1;
    for (int i = 0; i < levels; ++i) {
        const int ch = cfg_.backbone_channels[static_cast<std::size_t>(i)];
        store_.add(level_name("backbone.conv", i, ".w"), Tensor({ch, prev, 3, 3}));
        store_.add(level_name("backbone.conv", i, ".b"), Tensor({ch}));
        prev = ch;
    }
    for (int i = 0; i < levels; ++i) {
        const int ch = cfg_.backbone_channels[static_cast<std::size_t>(i)];
        store_.add(level_name("fpn.lateral", i, ".w"), Tensor({cfg_.fpn_channels, ch, 1, 1}));
    }
    for (int i = 0; i < levels; ++i) {
        const int ch = cfg_.backbone_channels[static_cast<std::size_t>(i)];
        store_.add(level_name("enc.adapter", i, ".w"), Tensor({cfg_.fpn_channels, ch, 1, 1}));
    }
    for (const std::string enc : {"enc.geo", "enc.sem"}) {
        const EncoderConfig& e = cfg_.encoder;
        store_.add(enc + ".conv1.w", Tensor({e.conv1_out, cfg_.fpn_channels, 3, 3}));
        store_.add(enc + ".conv1.b", Tensor({e.conv1_out}));
        store_.add(enc + ".conv2.w", Tensor({e.conv2_out, e.conv1_out, 3, 3}));
        store_.add(enc + ".conv2.b", Tensor({e.conv2_out}));
        store_.add(enc + ".lin1.w", Tensor({e.conv2_out, e.hidden}));
        store_.add(enc + ".lin1.b", Tensor({e.hidden}));
        store_.add(enc + ".lin2.w", Tensor({e.hidden, contrastive::kReprDim}));
        store_.add(enc + ".lin2.b", Tensor({contrastive::kReprDim}));
    }
    const int grid = unfold::token_grid_size(cfg_.roi_size, cfg_.unfold);
    (void)grid;
    const int concat_len = cfg_.unfold.window * cfg_.unfold.window * cfg_.fpn_channels *
                           cfg_.unfold.patch_size * cfg_.unfold.patch_size;
    store_.add("unfold.proj.w", Tensor({concat_len, d}));
    store_.add("unfold.proj.b", Tensor({d}));
    store_.add("tokens.cls", Tensor({d}));
    store_.add("tokens.box", Tensor({d}));
    for (int j = 0; j < cfg_.mte.layers; ++j) {
        const std::string p = "mte.l" + std::to_string(j);
        store_.add(p + ".ln1.g", Tensor::full({d}, 1.0));
        store_.add(p + ".ln1.b", Tensor({d}));
        store_.add(p + ".wq", Tensor({d, d}));
        store_.add(p + ".bq", Tensor({d}));
        store_.add(p + ".wk", Tensor({d, d}));
        store_.add(p + ".bk", Tensor({d}));
        store_.add(p + ".wv", Tensor({d, d}));
        store_.add(p + ".bv", Tensor({d}));
        store_.add(p + ".wo", Tensor({d, d}));
        store_.add(p + ".bo", Tensor({d}));
        store_.add(p + ".ln2.g", Tensor::full({d}, 1.0));
        store_.add(p + ".ln2.b", Tensor({d}));
        store_.add(p + ".ff1.w", Tensor({d, cfg_.mte.ffn_mult * d}));
        store_.add(p + ".ff1.b", Tensor({cfg_.mte.ffn_mult * d}));
        store_.add(p + ".ff2.w", Tensor({cfg_.mte.ffn_mult * d, d}));
        store_.add(p + ".ff2.b", Tensor({d}));
    }
    store_.add("head.cls.w", Tensor({d, cfg_.class_count + 1}));
    store_.add("head.cls.b", Tensor({cfg_.class_count + 1}));
    store_.add("head.box.w", Tensor({d, 4}));
    store_.add("head.box.b", Tensor({4}));
}

void Model::init_params(std::uint64_t seed) {
    for (int i = 0; i < store_.count(); ++i) {
        const std::string& name = store_.names()[static_cast<std::size_t>(i)];
        Tensor& t = store_.value(i);
        Rng rng(derive_seed(seed, name));
        if (name.ends_with(".b") || name.ends_with(".bq") || name.ends_with(".bk") ||
            name.ends_with(".bv") || name.ends_with(".bo")) {
            t.fill(0.0);
        } else if (name.ends_with(".g")) {
            t.fill(1.0);
        } else if (name == "tokens.cls" || name == "tokens.box") {
            init_normal(t, 0.02, rng);
        } else if (t.ndim() == 4) {
            const int fan_in = t.dim(1) * t.dim(2) * t.dim(3);
            init_normal(t, std::sqrt(2.0 / fan_in), rng);
        } else if (t.ndim() == 2) {
            init_normal(t, std::sqrt(1.0 / t.dim(0)), rng);
        } else {
            t.fill(0.0);
        }
    }
}

std::vector<g::Var> Model::backbone_levels(g::Var image, const BoundParams& bound) const {
    std::vector<g::Var> ws, bs;
    for (int i = 0; i <= cfg_.levels; ++i) {
        ws.push_back(bound(level_name("backbone.conv", i, ".w")));
        bs.push_back(bound(level_name("backbone.conv", i, ".b")));
    }
    return synth::toy_backbone(image, ws, bs);
}

std::vector<g::Var> Model::pyramid_levels(const std::vector<g::Var>& backbone,
                                          const BoundParams& bound) const {
    std::vector<g::Var> kernels;
    for (int i = 0; i <= cfg_.levels; ++i) {
        kernels.push_back(bound(level_name("fpn.lateral", i, ".w")));
    }
    return fpn::build_pyramid(backbone, kernels);
}

contrastive::ContrastiveVars Model::contrastive_vars(const BoundParams& bound) const {
    contrastive::ContrastiveVars vars;
    auto fill = [&](const std::string& p) {
        contrastive::EncoderVars e;
        e.conv1_w = bound(p + ".conv1.w");
        e.conv1_b = bound(p + ".conv1.b");
        e.conv2_w = bound(p + ".conv2.w");
        e.conv2_b = bound(p + ".conv2.b");
        e.lin1_w = bound(p + ".lin1.w");
        e.lin1_b = bound(p + ".lin1.b");
        e.lin2_w = bound(p + ".lin2.w");
        e.lin2_b = bound(p + ".lin2.b");
        return e;
    };
    vars.geometric = fill("enc.geo");
    vars.semantic = fill("enc.sem");
    for (int i = 0; i <= cfg_.levels; ++i) {
        vars.lateral_adapters.push_back(bound(level_name("enc.adapter", i, ".w")));
    }
    return vars;
}

Model::RoiHeadOutput Model::roi_head(g::Var pyramid_bottom, const metrics::Box& box,
                                     const BoundParams& bound, std::uint64_t roi_seed,
                                     const transrcnn::TaskGroups* frozen) {
    g::Var roi = g::bilinear_crop(pyramid_bottom, box.x1, box.y1, box.x2, box.y2, cfg_.roi_size);
    unfold::UnfoldConfig ucfg = cfg_.unfold;
    ucfg.seed = roi_seed;
    g::Var tokens = unfold::unfold_tokens(roi, ucfg, cfg_.shuffle_order, bound("unfold.proj.w"),
                                          bound("unfold.proj.b"));
    const int n_unfold = tokens.value().dim(0);
    g::Var seq = transrcnn::assemble_local_sequence(tokens, bound("tokens.cls"),
                                                    bound("tokens.box"));
    RoiHeadOutput out;
    g::Var global = seq;
    if (cfg_.use_mte) {
        transrcnn::MteVars mte;
        for (int j = 0; j < cfg_.mte.layers; ++j) {
            const std::string p = "mte.l" + std::to_string(j);
            transrcnn::MteLayerVars l;
            l.ln1_g = bound(p + ".ln1.g");
            l.ln1_b = bound(p + ".ln1.b");
            l.wq = bound(p + ".wq");
            l.bq = bound(p + ".bq");
            l.wk = bound(p + ".wk");
            l.bk = bound(p + ".bk");
            l.wv = bound(p + ".wv");
            l.bv = bound(p + ".bv");
            l.wo = bound(p + ".wo");
            l.bo = bound(p + ".bo");
            l.ln2_g = bound(p + ".ln2.g");
            l.ln2_b = bound(p + ".ln2.b");
            l.ff1_w = bound(p + ".ff1.w");
            l.ff1_b = bound(p + ".ff1.b");
            l.ff2_w = bound(p + ".ff2.w");
            l.ff2_b = bound(p + ".ff2.b");
            mte.layers.push_back(l);
        }
        const Tensor mask = transrcnn::cls_box_mask(n_unfold + 2);
        transrcnn::MteResult res = transrcnn::mte_forward(seq, mte, cfg_.mte, mask);
        global = res.tokens;
        if (cfg_.use_tts) {
            if (frozen) {
                out.routing = *frozen;
            } else {
                auto [alpha_cls, alpha_box] =
                    transrcnn::attention_scores(res.final_attention, n_unfold);
                out.routing = transrcnn::task_token_select(alpha_cls, alpha_box);
            }
        }
    }
    if (!cfg_.use_tts || !cfg_.use_mte) {
        // Without selection every unfolded token feeds both heads.
        out.routing.cls_tokens.clear();
        out.routing.box_tokens.clear();
        for (int i = 0; i < n_unfold; ++i) {
            out.routing.cls_tokens.push_back(i);
            out.routing.box_tokens.push_back(i);
        }
    }
    transrcnn::HeadVars heads{bound("head.cls.w"), bound("head.cls.b"), bound("head.box.w"),
                              bound("head.box.b")};
    auto [logits, deltas] = transrcnn::heads_forward(global, out.routing, heads);
    out.logits = logits;
    out.deltas = deltas;
    return out;
}

TrainForwardResult Model::forward_train(const std::vector<synth::Scene>& scenes,
                                        const std::vector<std::vector<synth::Proposal>>& proposals,
                                        const losses::LossConfig& loss_cfg, BoundParams& bound,
                                        const ForwardOptions& opts) {
    if (scenes.empty() || scenes.size() != proposals.size()) {
        throw ConfigError("forward_train: scene/proposal batch mismatch");
    }
    std::vector<std::vector<g::Var>> laterals, fused;
    std::vector<g::Var> ce_terms, sl1_terms;
    TrainForwardResult result;
    std::size_t roi_counter = 0;
    for (std::size_t j = 0; j < scenes.size(); ++j) {
        g::Var image = g::Var::constant(scenes[j].image);
        std::vector<g::Var> backbone = backbone_levels(image, bound);
        std::vector<g::Var> pyramid = pyramid_levels(backbone, bound);
        for (const synth::Proposal& prop : proposals[j]) {
            const transrcnn::TaskGroups* frozen =
                opts.frozen_routing ? &(*opts.frozen_routing)[roi_counter] : nullptr;
            RoiHeadOutput head =
                roi_head(pyramid[0], prop.box, bound,
                         derive_seed(opts.unfold_seed, roi_counter), frozen);
            ++roi_counter;
            result.routing.push_back(head.routing);
            ce_terms.push_back(losses::cross_entropy(head.logits, prop.label));
            if (prop.foreground) {
                sl1_terms.push_back(losses::smooth_l1(head.deltas, prop.deltas));
            }
        }
        laterals.push_back(std::move(backbone));
        fused.push_back(std::move(pyramid));
    }
    if (ce_terms.empty()) throw ConfigError("forward_train: batch has no proposals");
    g::Var ce = g::scale(g::sum_scalars(ce_terms), 1.0 / static_cast<double>(ce_terms.size()));
    g::Var sl1 = sl1_terms.empty()
                     ? g::Var::scalar(0.0)
                     : g::scale(g::sum_scalars(sl1_terms),
                                1.0 / static_cast<double>(sl1_terms.size()));
    g::Var geo = g::Var::scalar(0.0);
    g::Var sem = g::Var::scalar(0.0);
    if (loss_cfg.lambda > 0.0) {
        contrastive::ContrastiveConfig ccfg{loss_cfg.tau, loss_cfg.normalize};
        contrastive::ReprBatch batch =
            contrastive::build_repr_batch(laterals, fused, contrastive_vars(bound), ccfg);
        geo = contrastive::geometric_loss(batch, ccfg);
        sem = contrastive::semantic_loss(batch, ccfg);
    }
    result.ce = ce.scalar_value();
    result.sl1 = sl1.scalar_value();
    result.geo = geo.scalar_value();
    result.sem = sem.scalar_value();
    result.total = losses::total_loss(ce, sl1, geo, sem, loss_cfg);
    return result;
}

std::vector<Tensor> Model::pyramid_features(const Tensor& image) {
    BoundParams bound(store_, false);
    g::Var img = g::Var::constant(image);
    std::vector<g::Var> pyramid = pyramid_levels(backbone_levels(img, bound), bound);
    std::vector<Tensor> out;
    for (const auto& p : pyramid) out.push_back(p.value());
    return out;
}

std::vector<metrics::Detection> Model::detect(const Tensor& image,
                                              const std::vector<metrics::Box>& proposal_boxes,
                                              std::uint64_t unfold_seed) {
    BoundParams bound(store_, false);
    g::Var img = g::Var::constant(image);
    std::vector<g::Var> pyramid = pyramid_levels(backbone_levels(img, bound), bound);
    const double image_w = image.dim(2);
    const double image_h = image.dim(1);
    std::vector<metrics::Detection> dets;
    for (std::size_t i = 0; i < proposal_boxes.size(); ++i) {
        RoiHeadOutput head = roi_head(pyramid[0], proposal_boxes[i], bound,
                                      derive_seed(unfold_seed, i), nullptr);
        const Tensor probs = ops::softmax_lastdim(head.logits.value());
        int best = 0;
        for (int c = 1; c < static_cast<int>(probs.size()); ++c) {
            if (probs[c] > probs[best]) best = c;
        }
        if (best == cfg_.class_count) continue;  // background
        metrics::Box refined = synth::apply_deltas(proposal_boxes[i], head.deltas.value());
        refined.x1 = std::clamp(refined.x1, 0.0, image_w - 1.0);
        refined.y1 = std::clamp(refined.y1, 0.0, image_h - 1.0);
        refined.x2 = std::clamp(refined.x2, refined.x1 + 1e-3, image_w);
        refined.y2 = std::clamp(refined.y2, refined.y1 + 1e-3, image_h);
        dets.push_back({refined, best, probs[best]});
    }
    return dets;
}

}  // namespace tinydet::model
