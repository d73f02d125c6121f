#include "tinydet/contrastive.hpp"

#include <string>

#include "tinydet/errors.hpp"

namespace tinydet::contrastive {

namespace g = tinydet::graph;

g::Var encode(g::Var feature, const EncoderVars& enc, bool normalize) {
    g::Var h = g::gelu(g::add_channel_bias(g::conv2d(feature, enc.conv1_w, 1, 1), enc.conv1_b));
    h = g::gelu(g::add_channel_bias(g::conv2d(h, enc.conv2_w, 1, 1), enc.conv2_b));
    g::Var v = g::global_avg_pool(h);
    v = g::reshape(v, {1, static_cast<int>(v.value().size())});
    v = g::gelu(g::add_row_bias(g::matmul(v, enc.lin1_w), enc.lin1_b));
    v = g::add_row_bias(g::matmul(v, enc.lin2_w), enc.lin2_b);
    if (normalize) v = g::l2_normalize_rows(v);
    return g::reshape(v, {kReprDim});
}

int ReprBatch::index(int level, Source source, int image) const {
    if (level < 0 || level > top_level || image < 0 || image >= batch) {
        throw ConfigError("representation index out of range: level " + std::to_string(level) +
                          ", image " + std::to_string(image));
    }
    const int src = source == Source::lateral ? 0 : 1;
    return (level * 2 + src) * batch + image;
}

g::Var ReprBatch::geo(int level, Source source, int image) const {
    return geometric[static_cast<std::size_t>(index(level, source, image))];
}

g::Var ReprBatch::sem(int level, Source source, int image) const {
    return semantic[static_cast<std::size_t>(index(level, source, image))];
}

std::vector<ReprRef> negative_refs(int top_level, int batch, int b) {
    if (b < 0 || b >= batch) {
        throw ConfigError("negative_refs: image index " + std::to_string(b) +
                          " out of range for batch " + std::to_string(batch));
    }
    std::vector<ReprRef> out;
    out.reserve(static_cast<std::size_t>(2 * (top_level + 1) * (batch - 1)));
    for (int i = 0; i <= top_level; ++i) {
        for (Source s : {Source::lateral, Source::fused}) {
            for (int j = 0; j < batch; ++j) {
                if (j == b) continue;
                out.push_back({i, s, j});
            }
        }
    }
    return out;
}

std::vector<g::Var> geometric_negatives(const ReprBatch& batch, int b) {
    std::vector<g::Var> out;
    for (const ReprRef& r : negative_refs(batch.top_level, batch.batch, b)) {
        out.push_back(batch.geo(r.level, r.source, r.image));
    }
    return out;
}

std::vector<g::Var> semantic_negatives(const ReprBatch& batch, int b) {
    std::vector<g::Var> out;
    for (const ReprRef& r : negative_refs(batch.top_level, batch.batch, b)) {
        out.push_back(batch.sem(r.level, r.source, r.image));
    }
    return out;
}

g::Var info_nce(g::Var query, g::Var positive, const std::vector<g::Var>& negatives,
                double tau) {
    if (tau <= 0.0) throw ConfigError("info_nce: temperature must be positive");
    const double inv_tau = 1.0 / tau;
    std::vector<g::Var> sims;
    sims.reserve(negatives.size() + 1);
    sims.push_back(g::scale(g::dot(query, positive), inv_tau));
    for (const auto& n : negatives) {
        sims.push_back(g::scale(g::dot(query, n), inv_tau));
    }
    return g::sub(g::logsumexp(g::concat_scalars(sims)), sims[0]);
}

ReprBatch build_repr_batch(const std::vector<std::vector<g::Var>>& laterals,
                           const std::vector<std::vector<g::Var>>& fused,
                           const ContrastiveVars& vars, const ContrastiveConfig& cfg) {
    const int batch = static_cast<int>(laterals.size());
    if (batch == 0 || fused.size() != laterals.size()) {
        throw ConfigError("build_repr_batch: lateral/fused image counts disagree");
    }
    const int levels = static_cast<int>(laterals[0].size());
    if (levels == 0 || static_cast<int>(vars.lateral_adapters.size()) != levels) {
        throw ConfigError("build_repr_batch: adapter count does not match level count");
    }
    ReprBatch rb;
    rb.top_level = levels - 1;
    rb.batch = batch;
    rb.geometric.resize(static_cast<std::size_t>(2 * levels * batch));
    rb.semantic.resize(static_cast<std::size_t>(2 * levels * batch));
    for (int i = 0; i < levels; ++i) {
        for (int j = 0; j < batch; ++j) {
            g::Var c_in = g::conv2d(laterals[j][i], vars.lateral_adapters[i], 1, 0);
            g::Var p_in = fused[j][i];
            rb.geometric[rb.index(i, Source::lateral, j)] =
                encode(c_in, vars.geometric, cfg.normalize);
            rb.geometric[rb.index(i, Source::fused, j)] =
                encode(p_in, vars.geometric, cfg.normalize);
            rb.semantic[rb.index(i, Source::lateral, j)] =
                encode(c_in, vars.semantic, cfg.normalize);
            rb.semantic[rb.index(i, Source::fused, j)] =
                encode(p_in, vars.semantic, cfg.normalize);
        }
    }
    return rb;
}

g::Var geometric_loss(const ReprBatch& batch, const ContrastiveConfig& cfg) {
    if (batch.batch < 1) throw ConfigError("geometric_loss: empty batch");
    std::vector<g::Var> terms;
    for (int k = 0; k <= batch.top_level; ++k) {
        for (int b = 0; b < batch.batch; ++b) {
            terms.push_back(info_nce(batch.geo(k, Source::fused, b),
                                     batch.geo(k, Source::lateral, b),
                                     geometric_negatives(batch, b), cfg.tau));
        }
    }
    return g::scale(g::sum_scalars(terms), 1.0 / static_cast<double>(terms.size()));
}

g::Var semantic_loss(const ReprBatch& batch, const ContrastiveConfig& cfg) {
    if (batch.top_level < 1) {
        throw ConfigError("semantic_loss: needs at least two pyramid levels, got " +
                          std::to_string(batch.top_level + 1));
    }
    std::vector<g::Var> terms;
    for (int k = 0; k < batch.top_level; ++k) {
        for (int b = 0; b < batch.batch; ++b) {
            terms.push_back(info_nce(batch.sem(k, Source::fused, b),
                                     batch.sem(k + 1, Source::fused, b),
                                     semantic_negatives(batch, b), cfg.tau));
        }
    }
    return g::scale(g::sum_scalars(terms), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace tinydet::contrastive
