#include "tinydet/trans_rcnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "tinydet/errors.hpp"

namespace tinydet::transrcnn {

namespace g = tinydet::graph;

Tensor cls_box_mask(int seq_len) {
    if (seq_len < 3) {
        throw ConfigError("cls_box_mask: sequence needs cls, box and at least one token");
    }
    Tensor mask({seq_len, seq_len});
    const double blocked = -std::numeric_limits<double>::infinity();
    mask.at(0, seq_len - 1) = blocked;
    mask.at(seq_len - 1, 0) = blocked;
    return mask;
}

g::Var assemble_local_sequence(g::Var unfolded, g::Var t_cls, g::Var t_box) {
    const Tensor& uv = unfolded.value();
    if (uv.ndim() != 2 || uv.dim(0) < 1) {
        throw ShapeError("assemble_local_sequence: need at least one unfolded token");
    }
    const int d = uv.dim(1);
    if (t_cls.value().size() != d || t_box.value().size() != d) {
        throw ShapeError("assemble_local_sequence: task token dimension mismatch, tokens are " +
                         uv.shape_str());
    }
    return g::concat_rows({g::reshape(t_cls, {1, d}), unfolded, g::reshape(t_box, {1, d})});
}

MteResult mte_forward(g::Var seq, const MteVars& vars, const MteConfig& cfg,
                      const Tensor& mask) {
    const Tensor& sv = seq.value();
    if (sv.ndim() != 2 || sv.dim(1) != cfg.model_dim) {
        throw ShapeError("mte_forward: expected [Nx" + std::to_string(cfg.model_dim) +
                         "] sequence, got " + sv.shape_str());
    }
    const int n = sv.dim(0);
    if (mask.ndim() != 2 || mask.dim(0) != n || mask.dim(1) != n) {
        throw ShapeError("mte_forward: mask " + mask.shape_str() + " does not match sequence " +
                         sv.shape_str());
    }
    if (cfg.model_dim % cfg.heads != 0) {
        throw ConfigError("mte_forward: model dim " + std::to_string(cfg.model_dim) +
                          " not divisible by " + std::to_string(cfg.heads) + " heads");
    }
    if (static_cast<int>(vars.layers.size()) != cfg.layers) {
        throw ConfigError("mte_forward: expected weights for " + std::to_string(cfg.layers) +
                          " layers");
    }
    const int dk = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    MteResult result;
    g::Var x = seq;
    for (int layer = 0; layer < cfg.layers; ++layer) {
        const MteLayerVars& w = vars.layers[static_cast<std::size_t>(layer)];
        g::Var h = g::layer_norm_rows(x, w.ln1_g, w.ln1_b);
        g::Var q = g::add_row_bias(g::matmul(h, w.wq), w.bq);
        g::Var k = g::add_row_bias(g::matmul(h, w.wk), w.bk);
        g::Var v = g::add_row_bias(g::matmul(h, w.wv), w.bv);
        std::vector<g::Var> head_outs;
        std::vector<Tensor> head_attn;
        for (int hd = 0; hd < cfg.heads; ++hd) {
            g::Var qh = g::slice_cols(q, hd * dk, (hd + 1) * dk);
            g::Var kh = g::slice_cols(k, hd * dk, (hd + 1) * dk);
            g::Var vh = g::slice_cols(v, hd * dk, (hd + 1) * dk);
            g::Var logits = g::scale(g::matmul(qh, g::transpose(kh)), scale);
            g::Var attn = g::softmax_rows_masked(logits, &mask);
            head_attn.push_back(attn.value());
            head_outs.push_back(g::matmul(attn, vh));
        }
        g::Var attended = g::add_row_bias(g::matmul(g::concat_cols(head_outs), w.wo), w.bo);
        x = g::add(x, attended);
        g::Var h2 = g::layer_norm_rows(x, w.ln2_g, w.ln2_b);
        g::Var ff = g::add_row_bias(g::matmul(g::gelu(g::add_row_bias(g::matmul(h2, w.ff1_w),
                                                                      w.ff1_b)),
                                              w.ff2_w),
                                    w.ff2_b);
        x = g::add(x, ff);
        if (layer == cfg.layers - 1) result.final_attention = std::move(head_attn);
    }
    result.tokens = x;
    if (!result.tokens.value().all_finite()) {
        throw NumericError("mte_forward: non-finite token values");
    }
    return result;
}

std::pair<Tensor, Tensor> attention_scores(const std::vector<Tensor>& final_attention,
                                           int n_unfold) {
    if (final_attention.empty()) throw ShapeError("attention_scores: no attention maps");
    const int n = final_attention[0].dim(0);
    if (n != n_unfold + 2) {
        throw ShapeError("attention_scores: attention is " + final_attention[0].shape_str() +
                         " but expected " + std::to_string(n_unfold + 2) + " tokens");
    }
    Tensor alpha_cls({n_unfold});
    Tensor alpha_box({n_unfold});
    for (const Tensor& attn : final_attention) {
        double cls_sum = 0.0, box_sum = 0.0;
        for (int i = 0; i < n_unfold; ++i) {
            cls_sum += attn.at(0, 1 + i);
            box_sum += attn.at(n - 1, 1 + i);
        }
        for (int i = 0; i < n_unfold; ++i) {
            alpha_cls[i] += attn.at(0, 1 + i) / cls_sum;
            alpha_box[i] += attn.at(n - 1, 1 + i) / box_sum;
        }
    }
    const double inv = 1.0 / static_cast<double>(final_attention.size());
    for (int i = 0; i < n_unfold; ++i) {
        alpha_cls[i] *= inv;
        alpha_box[i] *= inv;
    }
    return {alpha_cls, alpha_box};
}

TaskGroups task_token_select(const Tensor& alpha_cls, const Tensor& alpha_box) {
    require_same_shape(alpha_cls, alpha_box, "task_token_select");
    const int n = static_cast<int>(alpha_cls.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return alpha_cls[a] + alpha_box[a] > alpha_cls[b] + alpha_box[b];
    });
    // Integer-floor halves keep N_box capped at floor(N_u/2) for odd N_u too.
    const int half = n / 2;
    TaskGroups groups;
    int n_cls = 0, n_box = 0;
    for (int idx : order) {
        if ((alpha_cls[idx] >= alpha_box[idx] && n_cls <= half) || n_box >= half) {
            groups.cls_tokens.push_back(idx);
            ++n_cls;
        } else {
            groups.box_tokens.push_back(idx);
            ++n_box;
        }
    }
    return groups;
}

std::pair<g::Var, g::Var> heads_forward(g::Var global_tokens, const TaskGroups& groups,
                                        const HeadVars& vars) {
    const Tensor& gv = global_tokens.value();
    const int n = gv.dim(0);
    const int d = gv.dim(1);
    std::vector<int> cls_rows{0};
    for (int i : groups.cls_tokens) cls_rows.push_back(1 + i);
    std::vector<int> box_rows{n - 1};
    for (int i : groups.box_tokens) box_rows.push_back(1 + i);
    g::Var cls_pool = g::reshape(g::mean_rows(g::select_rows(global_tokens, cls_rows)), {1, d});
    g::Var box_pool = g::reshape(g::mean_rows(g::select_rows(global_tokens, box_rows)), {1, d});
    g::Var logits = g::add_row_bias(g::matmul(cls_pool, vars.cls_w), vars.cls_b);
    g::Var deltas = g::add_row_bias(g::matmul(box_pool, vars.box_w), vars.box_b);
    const int classes = logits.value().dim(1);
    return {g::reshape(logits, {classes}), g::reshape(deltas, {4})};
}

}  // namespace tinydet::transrcnn
