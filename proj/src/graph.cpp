#include "tinydet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "tinydet/errors.hpp"
#include "tinydet/kernels.hpp"
#include "tinydet/ops.hpp"

namespace tinydet::graph {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Tensor& ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void accum(const std::shared_ptr<Node>& p, const Tensor& g) {
    if (!p->requires_grad) return;
    Tensor& dst = ensure_grad(*p);
    double* d = dst.data();
    const double* s = g.data();
    for (std::int64_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents) {
        if (p.defined()) {
            n->requires_grad = n->requires_grad || p.node()->requires_grad;
            n->parents.push_back(p.node());
        }
    }
    if (n->requires_grad) n->backward = std::move(backward);
    return Var(n);
}

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(n);
}

Tensor Var::grad() const {
    if (node_->grad.empty()) return Tensor(node_->value.shape());
    return node_->grad;
}

void backward(const Var& root) {
    if (!root.defined() || root.value().size() != 1) {
        throw ShapeError("backward: root must be a scalar");
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    ensure_grad(*root.node())[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    const double* bd = b.value().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return make(std::move(out), {a, b}, [a, b](Node& n) {
        accum(a.node(), n.grad);
        accum(b.node(), n.grad);
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const double* bd = b.value().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    return make(std::move(out), {a, b}, [a, b](Node& n) {
        accum(a.node(), n.grad);
        if (b.requires_grad()) {
            Tensor neg = n.grad;
            for (std::int64_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
            accum(b.node(), neg);
        }
    });
}

Var scale(Var x, double s) {
    Tensor out = x.value();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= s;
    return make(std::move(out), {x}, [x, s](Node& n) {
        if (!x.requires_grad()) return;
        Tensor g = n.grad;
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= s;
        accum(x.node(), g);
    });
}

Var add_row_bias(Var x, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.ndim() != 2 || bv.ndim() != 1 || bv.dim(0) != xv.dim(1)) {
        throw ShapeError("add_row_bias: " + xv.shape_str() + " + " + bv.shape_str());
    }
    Tensor out = xv;
    const int rows = xv.dim(0), cols = xv.dim(1);
    for (int r = 0; r < rows; ++r) {
        double* o = out.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) o[c] += bv[c];
    }
    return make(std::move(out), {x, bias}, [x, bias, rows, cols](Node& n) {
        accum(x.node(), n.grad);
        if (bias.requires_grad()) {
            Tensor gb({cols});
            for (int r = 0; r < rows; ++r) {
                const double* g = n.grad.data() + static_cast<std::size_t>(r) * cols;
                for (int c = 0; c < cols; ++c) gb[c] += g[c];
            }
            accum(bias.node(), gb);
        }
    });
}

Var add_channel_bias(Var x, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.ndim() != 3 || bv.ndim() != 1 || bv.dim(0) != xv.dim(0)) {
        throw ShapeError("add_channel_bias: " + xv.shape_str() + " + " + bv.shape_str());
    }
    Tensor out = xv;
    const int c = xv.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
    for (int ch = 0; ch < c; ++ch) {
        double* o = out.data() + ch * hw;
        for (std::int64_t i = 0; i < hw; ++i) o[i] += bv[ch];
    }
    return make(std::move(out), {x, bias}, [x, bias, c, hw](Node& n) {
        accum(x.node(), n.grad);
        if (bias.requires_grad()) {
            Tensor gb({c});
            for (int ch = 0; ch < c; ++ch) {
                const double* g = n.grad.data() + ch * hw;
                double acc = 0.0;
                for (std::int64_t i = 0; i < hw; ++i) acc += g[i];
                gb[ch] = acc;
            }
            accum(bias.node(), gb);
        }
    });
}

Var matmul(Var a, Var b) {
    Tensor out = ops::matmul(a.value(), b.value());
    const int m = a.value().dim(0), k = a.value().dim(1), n2 = b.value().dim(1);
    return make(std::move(out), {a, b}, [a, b, m, k, n2](Node& n) {
        if (a.requires_grad()) {
            kernels::matmul_grad_a(n.grad.data(), b.value().data(),
                                   ensure_grad(*a.node()).data(), m, k, n2);
        }
        if (b.requires_grad()) {
            kernels::matmul_grad_b(a.value().data(), n.grad.data(),
                                   ensure_grad(*b.node()).data(), m, k, n2);
        }
    });
}

Var transpose(Var x) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) throw ShapeError("transpose: expected 2-d, got " + xv.shape_str());
    const int r = xv.dim(0), c = xv.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = xv.at(i, j);
    return make(std::move(out), {x}, [x, r, c](Node& n) {
        if (!x.requires_grad()) return;
        Tensor& gx = ensure_grad(*x.node());
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gx.at(i, j) += n.grad.at(j, i);
    });
}

Var gelu(Var x) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i) {
        out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
    }
    return make(std::move(out), {x}, [x](Node& n) {
        if (!x.requires_grad()) return;
        const Tensor& xv = x.value();
        Tensor g(xv.shape());
        for (std::int64_t i = 0; i < xv.size(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            g[i] = n.grad[i] * (cdf + v * pdf);
        }
        accum(x.node(), g);
    });
}

Var conv2d(Var x, Var kernel, int stride, int pad) {
    ops::DiffResult d = ops::conv2d_diff(x.value(), kernel.value(), stride, pad);
    auto vjp = std::move(d.vjp);
    return make(std::move(d.value), {x, kernel}, [x, kernel, vjp](Node& n) {
        auto grads = vjp(n.grad);
        accum(x.node(), grads[0]);
        accum(kernel.node(), grads[1]);
    });
}

Var upsample2x(Var x) {
    Tensor out = ops::upsample_nearest_2x(x.value());
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    return make(std::move(out), {x}, [x, c, h, w](Node& n) {
        if (!x.requires_grad()) return;
        kernels::upsample2x_grad(n.grad.data(), ensure_grad(*x.node()).data(), c, h, w);
    });
}

Var global_avg_pool(Var x) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 3) throw ShapeError("global_avg_pool: expected [CxHxW]");
    const int c = xv.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* p = xv.data() + ch * hw;
        double acc = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
        out[ch] = acc / static_cast<double>(hw);
    }
    return make(std::move(out), {x}, [x, c, hw](Node& n) {
        if (!x.requires_grad()) return;
        Tensor& gx = ensure_grad(*x.node());
        const double inv = 1.0 / static_cast<double>(hw);
        for (int ch = 0; ch < c; ++ch) {
            double* g = gx.data() + ch * hw;
            const double gv = n.grad[ch] * inv;
            for (std::int64_t i = 0; i < hw; ++i) g[i] += gv;
        }
    });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) throw ShapeError("layer_norm_rows: expected 2-d");
    const int rows = xv.dim(0), cols = xv.dim(1);
    if (gamma.value().size() != cols || beta.value().size() != cols) {
        throw ShapeError("layer_norm_rows: gamma/beta must have length " + std::to_string(cols));
    }
    Tensor xhat({rows, cols});
    Tensor inv_sigma({rows});
    Tensor out({rows, cols});
    for (int r = 0; r < rows; ++r) {
        const double* xr = xv.data() + static_cast<std::size_t>(r) * cols;
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) mu += xr[c];
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = inv;
        for (int c = 0; c < cols; ++c) {
            const double xh = (xr[c] - mu) * inv;
            xhat.at(r, c) = xh;
            out.at(r, c) = xh * gamma.value()[c] + beta.value()[c];
        }
    }
    return make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_sigma, rows, cols](Node& n) {
                    if (gamma.requires_grad()) {
                        Tensor gg({cols});
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < cols; ++c)
                                gg[c] += n.grad.at(r, c) * xhat.at(r, c);
                        accum(gamma.node(), gg);
                    }
                    if (beta.requires_grad()) {
                        Tensor gb({cols});
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < cols; ++c) gb[c] += n.grad.at(r, c);
                        accum(beta.node(), gb);
                    }
                    if (x.requires_grad()) {
                        Tensor gx({rows, cols});
                        for (int r = 0; r < rows; ++r) {
                            double mean_g = 0.0, mean_gx = 0.0;
                            for (int c = 0; c < cols; ++c) {
                                const double g = n.grad.at(r, c) * gamma.value()[c];
                                mean_g += g;
                                mean_gx += g * xhat.at(r, c);
                            }
                            mean_g /= cols;
                            mean_gx /= cols;
                            for (int c = 0; c < cols; ++c) {
                                const double g = n.grad.at(r, c) * gamma.value()[c];
                                gx.at(r, c) =
                                    inv_sigma[r] * (g - mean_g - xhat.at(r, c) * mean_gx);
                            }
                        }
                        accum(x.node(), gx);
                    }
                });
}

Var softmax_rows_masked(Var logits, const Tensor* additive_mask) {
    const Tensor& xv = logits.value();
    const int cols = xv.dim(xv.ndim() - 1);
    const int rows = static_cast<int>(xv.size() / cols);
    Tensor masked = xv;
    if (additive_mask) {
        require_same_shape(xv, *additive_mask, "softmax_rows_masked");
        for (std::int64_t i = 0; i < masked.size(); ++i) masked[i] += (*additive_mask)[i];
    }
    Tensor y(xv.shape());
    for (int r = 0; r < rows; ++r) {
        const double* xr = masked.data() + static_cast<std::size_t>(r) * cols;
        double* yr = y.data() + static_cast<std::size_t>(r) * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < cols; ++c) mx = std::max(mx, xr[c]);
        if (!std::isfinite(mx)) {
            throw NumericError("softmax_rows_masked: fully masked or non-finite row");
        }
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            yr[c] = xr[c] == -std::numeric_limits<double>::infinity()
                        ? 0.0
                        : std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < cols; ++c) yr[c] *= inv;
    }
    Tensor yv = y;
    return make(std::move(y), {logits}, [logits, yv, rows, cols](Node& n) {
        if (!logits.requires_grad()) return;
        kernels::softmax_rows_grad(yv.data(), n.grad.data(),
                                   ensure_grad(*logits.node()).data(), rows, cols);
    });
}

Var l2_normalize_rows(Var x) {
    const Tensor& xv = x.value();
    const int cols = xv.dim(xv.ndim() - 1);
    const int rows = static_cast<int>(xv.size() / cols);
    constexpr double eps = 1e-12;
    Tensor inv_norm({rows});
    Tensor out(xv.shape());
    for (int r = 0; r < rows; ++r) {
        const double* xr = xv.data() + static_cast<std::size_t>(r) * cols;
        double sq = 0.0;
        for (int c = 0; c < cols; ++c) sq += xr[c] * xr[c];
        const double inv = 1.0 / std::sqrt(sq + eps * eps);
        inv_norm[r] = inv;
        double* yr = out.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] * inv;
    }
    return make(std::move(out), {x}, [x, inv_norm, rows, cols](Node& n) {
        if (!x.requires_grad()) return;
        const Tensor& xv = x.value();
        Tensor gx(xv.shape());
        for (int r = 0; r < rows; ++r) {
            const double* xr = xv.data() + static_cast<std::size_t>(r) * cols;
            const double* gr = n.grad.data() + static_cast<std::size_t>(r) * cols;
            double* o = gx.data() + static_cast<std::size_t>(r) * cols;
            const double inv = inv_norm[r];
            double dotgx = 0.0;
            for (int c = 0; c < cols; ++c) dotgx += gr[c] * xr[c];
            const double k = dotgx * inv * inv * inv;
            for (int c = 0; c < cols; ++c) o[c] = gr[c] * inv - xr[c] * k;
        }
        accum(x.node(), gx);
    });
}

Var reshape(Var x, std::vector<int> shape) {
    Tensor out(std::move(shape), x.value().vec());
    std::vector<int> in_shape = x.value().shape();
    return make(std::move(out), {x}, [x, in_shape](Node& n) {
        if (!x.requires_grad()) return;
        accum(x.node(), Tensor(in_shape, n.grad.vec()));
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const int cols = parts[0].value().dim(parts[0].value().ndim() - 1);
    int rows = 0;
    for (const auto& p : parts) {
        if (p.value().ndim() > 2 || p.value().dim(p.value().ndim() - 1) != cols) {
            throw ShapeError("concat_rows: incompatible part " + p.value().shape_str());
        }
        rows += p.value().ndim() == 2 ? p.value().dim(0) : 1;
    }
    Tensor out({rows, cols});
    int r = 0;
    std::vector<std::pair<int, int>> spans;
    for (const auto& p : parts) {
        const int pr = p.value().ndim() == 2 ? p.value().dim(0) : 1;
        std::copy(p.value().data(), p.value().data() + p.value().size(),
                  out.data() + static_cast<std::size_t>(r) * cols);
        spans.emplace_back(r, pr);
        r += pr;
    }
    std::vector<Var> deps = parts;
    return make(std::move(out), deps, [deps, spans, cols](Node& n) {
        for (std::size_t i = 0; i < deps.size(); ++i) {
            if (!deps[i].requires_grad()) continue;
            Tensor& gp = ensure_grad(*deps[i].node());
            const double* src = n.grad.data() + static_cast<std::size_t>(spans[i].first) * cols;
            for (std::int64_t j = 0; j < gp.size(); ++j) gp[j] += src[j];
        }
    });
}

Var slice_rows(Var x, int r0, int r1) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2 || r0 < 0 || r1 > xv.dim(0) || r0 >= r1) {
        throw ShapeError("slice_rows: bad range");
    }
    const int cols = xv.dim(1);
    Tensor out({r1 - r0, cols});
    std::copy(xv.data() + static_cast<std::size_t>(r0) * cols,
              xv.data() + static_cast<std::size_t>(r1) * cols, out.data());
    return make(std::move(out), {x}, [x, r0, cols](Node& n) {
        if (!x.requires_grad()) return;
        Tensor& gx = ensure_grad(*x.node());
        double* dst = gx.data() + static_cast<std::size_t>(r0) * cols;
        for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
    });
}

Var select_rows(Var x, std::vector<int> rows) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) throw ShapeError("select_rows: expected 2-d");
    const int cols = xv.dim(1);
    Tensor out({static_cast<int>(rows.size()), cols});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = xv.data() + static_cast<std::size_t>(rows[i]) * cols;
        std::copy(src, src + cols, out.data() + i * cols);
    }
    return make(std::move(out), {x}, [x, rows, cols](Node& n) {
        if (!x.requires_grad()) return;
        Tensor& gx = ensure_grad(*x.node());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double* dst = gx.data() + static_cast<std::size_t>(rows[i]) * cols;
            const double* src = n.grad.data() + i * cols;
            for (int c = 0; c < cols; ++c) dst[c] += src[c];
        }
    });
}

Var slice_cols(Var x, int c0, int c1) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2 || c0 < 0 || c1 > xv.dim(1) || c0 >= c1) {
        throw ShapeError("slice_cols: bad range");
    }
    const int rows = xv.dim(0), cols = xv.dim(1), w = c1 - c0;
    Tensor out({rows, w});
    for (int r = 0; r < rows; ++r) {
        const double* src = xv.data() + static_cast<std::size_t>(r) * cols + c0;
        std::copy(src, src + w, out.data() + static_cast<std::size_t>(r) * w);
    }
    return make(std::move(out), {x}, [x, c0, rows, cols, w](Node& n) {
        if (!x.requires_grad()) return;
        Tensor& gx = ensure_grad(*x.node());
        for (int r = 0; r < rows; ++r) {
            double* dst = gx.data() + static_cast<std::size_t>(r) * cols + c0;
            const double* src = n.grad.data() + static_cast<std::size_t>(r) * w;
            for (int c = 0; c < w; ++c) dst[c] += src[c];
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const int rows = parts[0].value().dim(0);
    int cols = 0;
    for (const auto& p : parts) {
        if (p.value().ndim() != 2 || p.value().dim(0) != rows) {
            throw ShapeError("concat_cols: incompatible part " + p.value().shape_str());
        }
        cols += p.value().dim(1);
    }
    Tensor out({rows, cols});
    std::vector<std::pair<int, int>> spans;
    int c = 0;
    for (const auto& p : parts) {
        const int pc = p.value().dim(1);
        for (int r = 0; r < rows; ++r) {
            std::copy(p.value().data() + static_cast<std::size_t>(r) * pc,
                      p.value().data() + static_cast<std::size_t>(r + 1) * pc,
                      out.data() + static_cast<std::size_t>(r) * cols + c);
        }
        spans.emplace_back(c, pc);
        c += pc;
    }
    std::vector<Var> deps = parts;
    return make(std::move(out), deps, [deps, spans, rows, cols](Node& n) {
        for (std::size_t i = 0; i < deps.size(); ++i) {
            if (!deps[i].requires_grad()) continue;
            Tensor& gp = ensure_grad(*deps[i].node());
            const int pc = spans[i].second;
            for (int r = 0; r < rows; ++r) {
                const double* src = n.grad.data() + static_cast<std::size_t>(r) * cols +
                                    spans[i].first;
                double* dst = gp.data() + static_cast<std::size_t>(r) * pc;
                for (int c2 = 0; c2 < pc; ++c2) dst[c2] += src[c2];
            }
        }
    });
}

Var mean_rows(Var x) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) throw ShapeError("mean_rows: expected 2-d");
    const int rows = xv.dim(0), cols = xv.dim(1);
    Tensor out({cols});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out[c] += xv.at(r, c);
    for (int c = 0; c < cols; ++c) out[c] /= rows;
    return make(std::move(out), {x}, [x, rows, cols](Node& n) {
        if (!x.requires_grad()) return;
        Tensor& gx = ensure_grad(*x.node());
        const double inv = 1.0 / rows;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) gx.at(r, c) += n.grad[c] * inv;
    });
}

Var dot(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "dot");
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.value().size(); ++i) acc += a.value()[i] * b.value()[i];
    return make(Tensor::scalar(acc), {a, b}, [a, b](Node& n) {
        const double g = n.grad[0];
        if (a.requires_grad()) {
            Tensor ga(a.value().shape());
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] = g * b.value()[i];
            accum(a.node(), ga);
        }
        if (b.requires_grad()) {
            Tensor gb(b.value().shape());
            for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] = g * a.value()[i];
            accum(b.node(), gb);
        }
    });
}

Var logsumexp(Var x) {
    const Tensor& xv = x.value();
    double mx = xv[0];
    for (std::int64_t i = 1; i < xv.size(); ++i) mx = std::max(mx, xv[i]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < xv.size(); ++i) sum += std::exp(xv[i] - mx);
    const double lse = mx + std::log(sum);
    Tensor soft(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i) soft[i] = std::exp(xv[i] - lse);
    return make(Tensor::scalar(lse), {x}, [x, soft](Node& n) {
        if (!x.requires_grad()) return;
        Tensor g(soft.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[0] * soft[i];
        accum(x.node(), g);
    });
}

Var concat_scalars(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw ShapeError("concat_scalars: empty");
    Tensor out({static_cast<int>(scalars.size())});
    for (std::size_t i = 0; i < scalars.size(); ++i) out[static_cast<std::int64_t>(i)] =
        scalars[i].value()[0];
    std::vector<Var> deps = scalars;
    return make(std::move(out), deps, [deps](Node& n) {
        for (std::size_t i = 0; i < deps.size(); ++i) {
            if (!deps[i].requires_grad()) continue;
            Tensor g = Tensor::scalar(n.grad[static_cast<std::int64_t>(i)]);
            accum(deps[i].node(), g);
        }
    });
}

Var sum_scalars(const std::vector<Var>& scalars) {
    if (scalars.empty()) return Var::scalar(0.0);
    double acc = 0.0;
    for (const auto& s : scalars) acc += s.value()[0];
    std::vector<Var> deps = scalars;
    return make(Tensor::scalar(acc), deps, [deps](Node& n) {
        for (const auto& d : deps) {
            if (d.requires_grad()) accum(d.node(), n.grad);
        }
    });
}

Var cross_entropy_logits(Var logits, int label) {
    const Tensor& xv = logits.value();
    const int c = static_cast<int>(xv.size());
    if (label < 0 || label >= c) {
        throw ConfigError("cross_entropy: label " + std::to_string(label) +
                          " out of range for " + std::to_string(c) + " classes");
    }
    double mx = xv[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, xv[i]);
    double sum = 0.0;
    for (int i = 0; i < c; ++i) sum += std::exp(xv[i] - mx);
    const double lse = mx + std::log(sum);
    Tensor soft({c});
    for (int i = 0; i < c; ++i) soft[i] = std::exp(xv[i] - lse);
    return make(Tensor::scalar(lse - xv[label]), {logits}, [logits, soft, label](Node& n) {
        if (!logits.requires_grad()) return;
        Tensor g(soft.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[0] * soft[i];
        g[label] -= n.grad[0];
        accum(logits.node(), g);
    });
}

Var smooth_l1(Var pred, const Tensor& target) {
    require_same_shape(pred.value(), target, "smooth_l1");
    const Tensor& pv = pred.value();
    double loss = 0.0;
    for (std::int64_t i = 0; i < pv.size(); ++i) {
        const double d = pv[i] - target[i];
        loss += std::fabs(d) < 1.0 ? 0.5 * d * d : std::fabs(d) - 0.5;
    }
    return make(Tensor::scalar(loss), {pred}, [pred, target](Node& n) {
        if (!pred.requires_grad()) return;
        const Tensor& pv = pred.value();
        Tensor g(pv.shape());
        for (std::int64_t i = 0; i < pv.size(); ++i) {
            const double d = pv[i] - target[i];
            g[i] = n.grad[0] * (std::fabs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0));
        }
        accum(pred.node(), g);
    });
}

Var gather_flat(Var x, std::shared_ptr<const std::vector<std::int64_t>> index_map,
                std::vector<int> out_shape) {
    Tensor out(std::move(out_shape));
    if (out.size() != static_cast<std::int64_t>(index_map->size())) {
        throw ShapeError("gather_flat: index map size does not match output shape");
    }
    const Tensor& xv = x.value();
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const std::int64_t src = (*index_map)[static_cast<std::size_t>(i)];
        out[i] = src < 0 ? 0.0 : xv[src];
    }
    return make(std::move(out), {x}, [x, index_map](Node& n) {
        if (!x.requires_grad()) return;
        Tensor& gx = ensure_grad(*x.node());
        for (std::int64_t i = 0; i < n.grad.size(); ++i) {
            const std::int64_t src = (*index_map)[static_cast<std::size_t>(i)];
            if (src >= 0) gx[src] += n.grad[i];
        }
    });
}

Var bilinear_crop(Var x, double x1, double y1, double x2, double y2, int out_size) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 3) throw ShapeError("bilinear_crop: expected [CxHxW]");
    if (!(x2 > x1) || !(y2 > y1)) throw ConfigError("bilinear_crop: degenerate box");
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2), s = out_size;
    const double bw = (x2 - x1) / s, bh = (y2 - y1) / s;
    // One bilinear sample per bin center; pixel (r,col) has center (col+0.5, r+0.5).
    struct Sample {
        int i00, i01, i10, i11;
        double w00, w01, w10, w11;
    };
    std::vector<Sample> plan(static_cast<std::size_t>(s) * s);
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
            const double px = x1 + (j + 0.5) * bw - 0.5;
            const double py = y1 + (i + 0.5) * bh - 0.5;
            const double cx = std::clamp(px, 0.0, static_cast<double>(w - 1));
            const double cy = std::clamp(py, 0.0, static_cast<double>(h - 1));
            const int c0 = std::min(static_cast<int>(cx), w - 1);
            const int r0 = std::min(static_cast<int>(cy), h - 1);
            const int c1 = std::min(c0 + 1, w - 1);
            const int r1 = std::min(r0 + 1, h - 1);
            const double fx = cx - c0, fy = cy - r0;
            Sample& sm = plan[static_cast<std::size_t>(i) * s + j];
            sm.i00 = r0 * w + c0;
            sm.i01 = r0 * w + c1;
            sm.i10 = r1 * w + c0;
            sm.i11 = r1 * w + c1;
            sm.w00 = (1 - fy) * (1 - fx);
            sm.w01 = (1 - fy) * fx;
            sm.w10 = fy * (1 - fx);
            sm.w11 = fy * fx;
        }
    }
    Tensor out({c, s, s});
    for (int ch = 0; ch < c; ++ch) {
        const double* src = xv.data() + static_cast<std::size_t>(ch) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(ch) * s * s;
        for (std::size_t k = 0; k < plan.size(); ++k) {
            const Sample& sm = plan[k];
            dst[k] = sm.w00 * src[sm.i00] + sm.w01 * src[sm.i01] + sm.w10 * src[sm.i10] +
                     sm.w11 * src[sm.i11];
        }
    }
    auto plan_ptr = std::make_shared<std::vector<Sample>>(std::move(plan));
    return make(std::move(out), {x}, [x, plan_ptr, c, h, w, s](Node& n) {
        if (!x.requires_grad()) return;
        Tensor& gx = ensure_grad(*x.node());
        for (int ch = 0; ch < c; ++ch) {
            double* dst = gx.data() + static_cast<std::size_t>(ch) * h * w;
            const double* g = n.grad.data() + static_cast<std::size_t>(ch) * s * s;
            for (std::size_t k = 0; k < plan_ptr->size(); ++k) {
                const Sample& sm = (*plan_ptr)[k];
                dst[sm.i00] += sm.w00 * g[k];
                dst[sm.i01] += sm.w01 * g[k];
                dst[sm.i10] += sm.w10 * g[k];
                dst[sm.i11] += sm.w11 * g[k];
            }
        }
    });
}

}  // namespace tinydet::graph
