#pragma once

#include <vector>

#include "tinydet/graph.hpp"
#include "tinydet/tensor.hpp"

namespace tinydet::contrastive {

struct ContrastiveConfig {
    double tau = 0.07;      // temperature for all similarity logits
    bool normalize = true;  // L2-normalize representations before dot products
};

// Weights of one projection encoder: 3x3/s1 conv, 3x3/s1 conv, global average
// pool, then two linear layers ending in the 256-d representation.
struct EncoderVars {
    graph::Var conv1_w, conv1_b;
    graph::Var conv2_w, conv2_b;
    graph::Var lin1_w, lin1_b;
    graph::Var lin2_w, lin2_b;
};

// Geometric and semantic encoders have independent weights; the per-level 1x1
// adapters that map lateral channel counts to the pyramid width are shared by
// both encoders.
struct ContrastiveVars {
    EncoderVars geometric;
    EncoderVars semantic;
    std::vector<graph::Var> lateral_adapters;
};

constexpr int kReprDim = 256;

graph::Var encode(graph::Var feature, const EncoderVars& enc, bool normalize);

enum class Source { lateral, fused };

struct ReprRef {
    int level;
    Source source;
    int image;
    bool operator==(const ReprRef&) const = default;
};

// All representations of one minibatch; top_level is the highest pyramid
// index L, so there are 2*(L+1)*batch entries per kind.
struct ReprBatch {
    int top_level = 0;
    int batch = 0;
    std::vector<graph::Var> geometric;  // indexed by (level, source, image)
    std::vector<graph::Var> semantic;

    int index(int level, Source source, int image) const;
    graph::Var geo(int level, Source source, int image) const;
    graph::Var sem(int level, Source source, int image) const;
};

// Shared index enumeration behind the geometric and semantic negative sets:
// both kinds draw every level and both sources of every other image.
std::vector<ReprRef> negative_refs(int top_level, int batch, int b);

std::vector<graph::Var> geometric_negatives(const ReprBatch& batch, int b);
std::vector<graph::Var> semantic_negatives(const ReprBatch& batch, int b);

// -log( e^{q.p/tau} / (e^{q.p/tau} + sum_n e^{q.n/tau}) ); exactly 0 when the
// negative set is empty.
graph::Var info_nce(graph::Var query, graph::Var positive,
                    const std::vector<graph::Var>& negatives, double tau);

// laterals/fused are encoder-ready feature maps indexed [image][level]; the
// lateral ones are passed through the per-level adapters here.
ReprBatch build_repr_batch(const std::vector<std::vector<graph::Var>>& laterals,
                           const std::vector<std::vector<graph::Var>>& fused,
                           const ContrastiveVars& vars, const ContrastiveConfig& cfg);

graph::Var geometric_loss(const ReprBatch& batch, const ContrastiveConfig& cfg);
graph::Var semantic_loss(const ReprBatch& batch, const ContrastiveConfig& cfg);

}  // namespace tinydet::contrastive
