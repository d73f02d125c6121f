#include "tinydet/ops.hpp"

#include <cmath>
#include <string>

#include "tinydet/errors.hpp"
#include "tinydet/kernels.hpp"

namespace tinydet::ops {

namespace {

void require_2d(const Tensor& t, const char* what) {
    if (t.ndim() != 2) {
        throw ShapeError(std::string(what) + ": expected 2-d tensor, got " + t.shape_str());
    }
}

struct ConvDims {
    int cin, h, w, cout, ks, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernel, int stride, int pad) {
    if (x.ndim() != 3 || kernel.ndim() != 4) {
        throw ShapeError("conv2d: expected input [CxHxW] and kernel [C'xCxkxk], got " +
                         x.shape_str() + " and " + kernel.shape_str());
    }
    ConvDims d{};
    d.cin = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.cout = kernel.dim(0);
    d.ks = kernel.dim(2);
    if (kernel.dim(1) != d.cin) {
        throw ShapeError("conv2d: kernel input channels " + std::to_string(kernel.dim(1)) +
                         " do not match input channels " + std::to_string(d.cin));
    }
    if (kernel.dim(3) != d.ks) {
        throw ShapeError("conv2d: non-square kernel " + kernel.shape_str());
    }
    if (d.ks != 1 && d.ks != 3) {
        throw ConfigError("conv2d: kernel size must be 1 or 3, got " + std::to_string(d.ks));
    }
    if (stride < 1) {
        throw ConfigError("conv2d: stride must be positive, got " + std::to_string(stride));
    }
    if (pad < 0) {
        throw ConfigError("conv2d: padding must be non-negative, got " + std::to_string(pad));
    }
    d.oh = (d.h + 2 * pad - d.ks) / stride + 1;
    d.ow = (d.w + 2 * pad - d.ks) / stride + 1;
    if (d.h + 2 * pad - d.ks < 0 || d.w + 2 * pad - d.ks < 0 || d.oh < 1 || d.ow < 1) {
        throw ConfigError("conv2d: output would be empty for input " + x.shape_str() +
                          ", kernel " + kernel.shape_str() + ", stride " +
                          std::to_string(stride) + ", pad " + std::to_string(pad));
    }
    return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    Tensor out({a.dim(0), b.dim(1)});
    kernels::matmul(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
    return out;
}

DiffResult matmul_diff(const Tensor& a, const Tensor& b) {
    DiffResult r;
    r.value = matmul(a, b);
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    r.vjp = [a, b, m, k, n](const Tensor& ct) {
        Tensor ga({m, k});
        Tensor gb({k, n});
        kernels::matmul_grad_a(ct.data(), b.data(), ga.data(), m, k, n);
        kernels::matmul_grad_b(a.data(), ct.data(), gb.data(), m, k, n);
        return std::vector<Tensor>{std::move(ga), std::move(gb)};
    };
    return r;
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.ndim() < 1) {
        throw ShapeError("softmax: scalar input");
    }
    const int cols = x.dim(x.ndim() - 1);
    const int rows = static_cast<int>(x.size() / cols);
    Tensor out(x.shape());
    kernels::softmax_rows(x.data(), out.data(), rows, cols);
    return out;
}

DiffResult softmax_lastdim_diff(const Tensor& x) {
    DiffResult r;
    r.value = softmax_lastdim(x);
    const int cols = x.dim(x.ndim() - 1);
    const int rows = static_cast<int>(x.size() / cols);
    Tensor y = r.value;
    r.vjp = [y, rows, cols](const Tensor& ct) {
        Tensor gx(y.shape());
        kernels::softmax_rows_grad(y.data(), ct.data(), gx.data(), rows, cols);
        return std::vector<Tensor>{std::move(gx)};
    };
    return r;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int pad) {
    const ConvDims d = conv_dims(x, kernel, stride, pad);
    Tensor out({d.cout, d.oh, d.ow});
    kernels::conv2d(x.data(), kernel.data(), out.data(), d.cin, d.h, d.w, d.cout, d.ks, stride,
                    pad, d.oh, d.ow);
    return out;
}

DiffResult conv2d_diff(const Tensor& x, const Tensor& kernel, int stride, int pad) {
    const ConvDims d = conv_dims(x, kernel, stride, pad);
    DiffResult r;
    r.value = conv2d(x, kernel, stride, pad);
    r.vjp = [x, kernel, d, stride, pad](const Tensor& ct) {
        Tensor gx(x.shape());
        Tensor gw(kernel.shape());
        kernels::conv2d_grad_input(ct.data(), kernel.data(), gx.data(), d.cin, d.h, d.w, d.cout,
                                   d.ks, stride, pad, d.oh, d.ow);
        kernels::conv2d_grad_kernel(ct.data(), x.data(), gw.data(), d.cin, d.h, d.w, d.cout,
                                    d.ks, stride, pad, d.oh, d.ow);
        return std::vector<Tensor>{std::move(gx), std::move(gw)};
    };
    return r;
}

Tensor upsample_nearest_2x(const Tensor& x) {
    if (x.ndim() != 3) {
        throw ShapeError("upsample_nearest_2x: expected [CxHxW], got " + x.shape_str());
    }
    Tensor out({x.dim(0), 2 * x.dim(1), 2 * x.dim(2)});
    kernels::upsample2x(x.data(), out.data(), x.dim(0), x.dim(1), x.dim(2));
    return out;
}

DiffResult upsample_nearest_2x_diff(const Tensor& x) {
    DiffResult r;
    r.value = upsample_nearest_2x(x);
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    r.vjp = [c, h, w](const Tensor& ct) {
        Tensor gx({c, h, w});
        kernels::upsample2x_grad(ct.data(), gx.data(), c, h, w);
        return std::vector<Tensor>{std::move(gx)};
    };
    return r;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                               std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double max_rel_error(const Tensor& analytic, const Tensor& estimate, double floor) {
    require_same_shape(analytic, estimate, "max_rel_error");
    double worst = 0.0;
    for (std::int64_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i];
        const double b = estimate[i];
        const double denom = std::max({std::fabs(a), std::fabs(b), floor});
        worst = std::max(worst, std::fabs(a - b) / denom);
    }
    return worst;
}

}  // namespace tinydet::ops
