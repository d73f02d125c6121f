#pragma once

#include <utility>
#include <vector>

#include "tinydet/graph.hpp"
#include "tinydet/tensor.hpp"

namespace tinydet::transrcnn {

struct MteConfig {
    int layers = 2;
    int heads = 4;
    int model_dim = 64;
    int ffn_mult = 2;
    int head_dim() const { return model_dim / heads; }
};

struct MteLayerVars {
    graph::Var ln1_g, ln1_b;
    graph::Var wq, bq, wk, bk, wv, bv, wo, bo;
    graph::Var ln2_g, ln2_b;
    graph::Var ff1_w, ff1_b, ff2_w, ff2_b;
};

struct MteVars {
    std::vector<MteLayerVars> layers;
};

// Additive attention mask for a sequence [t_cls, unfolded..., t_box]: the
// class and box task tokens cannot attend to each other; everything else,
// including the diagonal, is allowed.
Tensor cls_box_mask(int seq_len);

// Sequence {t_cls, T_unfold, t_box}; requires at least one unfolded token.
graph::Var assemble_local_sequence(graph::Var unfolded, graph::Var t_cls, graph::Var t_box);

struct MteResult {
    graph::Var tokens;                    // transformed sequence, order unchanged
    std::vector<Tensor> final_attention;  // last layer, one [NxN] map per head
};

// Pre-norm residual blocks of masked multi-head self-attention + feed-forward.
MteResult mte_forward(graph::Var seq, const MteVars& vars, const MteConfig& cfg,
                      const Tensor& mask);

// Attention of the class/box queries over the unfolded tokens only: each
// head's row is restricted to the unfolded keys and renormalized (equal to a
// softmax over the restricted logits), then heads are averaged.
std::pair<Tensor, Tensor> attention_scores(const std::vector<Tensor>& final_attention,
                                           int n_unfold);

// Partition of the unfolded tokens by index; the class/box task tokens are
// implicit members of their groups and are prepended by heads_forward.
struct TaskGroups {
    std::vector<int> cls_tokens;
    std::vector<int> box_tokens;
};

TaskGroups task_token_select(const Tensor& alpha_cls, const Tensor& alpha_box);

struct HeadVars {
    graph::Var cls_w, cls_b;
    graph::Var box_w, box_b;
};

// Mean-pools each group (task token included) and applies one linear layer
// per task: returns {class logits, box deltas}.
std::pair<graph::Var, graph::Var> heads_forward(graph::Var global_tokens,
                                                const TaskGroups& groups,
                                                const HeadVars& vars);

}  // namespace tinydet::transrcnn
