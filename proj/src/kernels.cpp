#include "tinydet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tinydet::kernels {

namespace serial {

void matmul(const double* a, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* oi = out + static_cast<std::size_t>(i) * n;
        std::fill(oi, oi + n, 0.0);
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                oi[j] += aip * bp[j];
            }
        }
    }
}

void conv2d(const double* x, const double* w, double* out, int cin, int h, int wd, int cout,
            int ks, int stride, int pad, int oh, int ow) {
    for (int co = 0; co < cout; ++co) {
        double* oc = out + static_cast<std::size_t>(co) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xc = x + static_cast<std::size_t>(ci) * h * wd;
                    const double* wc =
                        w + ((static_cast<std::size_t>(co) * cin + ci) * ks) * ks;
                    for (int ky = 0; ky < ks; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < ks; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= wd) continue;
                            acc += xc[static_cast<std::size_t>(iy) * wd + ix] * wc[ky * ks + kx];
                        }
                    }
                }
                oc[static_cast<std::size_t>(oy) * ow + ox] = acc;
            }
        }
    }
}

void softmax_rows(const double* x, double* out, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<std::size_t>(r) * cols;
        double* yr = out + static_cast<std::size_t>(r) * cols;
        double mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < cols; ++c) yr[c] *= inv;
    }
}

}  // namespace serial

void matmul(const double* a, const double* b, double* out, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* oi = out + static_cast<std::size_t>(i) * n;
        std::fill(oi, oi + n, 0.0);
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + static_cast<std::size_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) {
                oi[j] += aip * bp[j];
            }
        }
    }
}

void matmul_grad_a(const double* gout, const double* b, double* ga, int m, int k, int n) {
// ga[i,p] += sum_j gout[i,j] * b[p,j]
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const double* gi = gout + static_cast<std::size_t>(i) * n;
        double* gai = ga + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double* bp = b + static_cast<std::size_t>(p) * n;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int j = 0; j < n; ++j) {
                acc += gi[j] * bp[j];
            }
            gai[p] += acc;
        }
    }
}

void matmul_grad_b(const double* a, const double* gout, double* gb, int m, int k, int n) {
// gb[p,j] += sum_i a[i,p] * gout[i,j]
#pragma omp parallel for schedule(static)
    for (int p = 0; p < k; ++p) {
        double* gbp = gb + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double aip = a[static_cast<std::size_t>(i) * k + p];
            const double* gi = gout + static_cast<std::size_t>(i) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) {
                gbp[j] += aip * gi[j];
            }
        }
    }
}

void conv2d(const double* x, const double* w, double* out, int cin, int h, int wd, int cout,
            int ks, int stride, int pad, int oh, int ow) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        double* oc = out + static_cast<std::size_t>(co) * oh * ow;
        std::fill(oc, oc + static_cast<std::size_t>(oh) * ow, 0.0);
        for (int ci = 0; ci < cin; ++ci) {
            const double* xc = x + static_cast<std::size_t>(ci) * h * wd;
            const double* wc = w + ((static_cast<std::size_t>(co) * cin + ci) * ks) * ks;
            for (int ky = 0; ky < ks; ++ky) {
                for (int kx = 0; kx < ks; ++kx) {
                    const double wv = wc[ky * ks + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        double* orow = oc + static_cast<std::size_t>(oy) * ow;
                        const double* xrow = xc + static_cast<std::size_t>(iy) * wd;
                        // ix = ox*stride - pad + kx must land in [0, wd)
                        int ox0 = 0;
                        while (ox0 * stride - pad + kx < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= wd) --ox1;
                        const int base = -pad + kx;
#pragma omp simd
                        for (int ox = ox0; ox < ox1; ++ox) {
                            orow[ox] += wv * xrow[ox * stride + base];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_grad_input(const double* gout, const double* w, double* gx, int cin, int h, int wd,
                       int cout, int ks, int stride, int pad, int oh, int ow) {
// Gather form so each input channel slice is owned by one thread.
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < cin; ++ci) {
        double* gc = gx + static_cast<std::size_t>(ci) * h * wd;
        for (int co = 0; co < cout; ++co) {
            const double* go = gout + static_cast<std::size_t>(co) * oh * ow;
            const double* wc = w + ((static_cast<std::size_t>(co) * cin + ci) * ks) * ks;
            for (int ky = 0; ky < ks; ++ky) {
                for (int kx = 0; kx < ks; ++kx) {
                    const double wv = wc[ky * ks + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* grow = go + static_cast<std::size_t>(oy) * ow;
                        double* gxrow = gc + static_cast<std::size_t>(iy) * wd;
                        int ox0 = 0;
                        while (ox0 * stride - pad + kx < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= wd) --ox1;
                        const int base = -pad + kx;
                        for (int ox = ox0; ox < ox1; ++ox) {
                            gxrow[ox * stride + base] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_grad_kernel(const double* gout, const double* x, double* gw, int cin, int h, int wd,
                        int cout, int ks, int stride, int pad, int oh, int ow) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        const double* go = gout + static_cast<std::size_t>(co) * oh * ow;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xc = x + static_cast<std::size_t>(ci) * h * wd;
            double* gwc = gw + ((static_cast<std::size_t>(co) * cin + ci) * ks) * ks;
            for (int ky = 0; ky < ks; ++ky) {
                for (int kx = 0; kx < ks; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* grow = go + static_cast<std::size_t>(oy) * ow;
                        const double* xrow = xc + static_cast<std::size_t>(iy) * wd;
                        int ox0 = 0;
                        while (ox0 * stride - pad + kx < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= wd) --ox1;
                        const int base = -pad + kx;
#pragma omp simd reduction(+ : acc)
                        for (int ox = ox0; ox < ox1; ++ox) {
                            acc += grow[ox] * xrow[ox * stride + base];
                        }
                    }
                    gwc[ky * ks + kx] += acc;
                }
            }
        }
    }
}

void softmax_rows(const double* x, double* out, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        serial::softmax_rows(x + static_cast<std::size_t>(r) * cols,
                             out + static_cast<std::size_t>(r) * cols, 1, cols);
    }
}

void softmax_rows_grad(const double* y, const double* gy, double* gx, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const double* yr = y + static_cast<std::size_t>(r) * cols;
        const double* gr = gy + static_cast<std::size_t>(r) * cols;
        double* xr = gx + static_cast<std::size_t>(r) * cols;
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += yr[c] * gr[c];
        for (int c = 0; c < cols; ++c) xr[c] += yr[c] * (gr[c] - dot);
    }
}

void upsample2x(const double* x, double* out, int c, int h, int w) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* xc = x + static_cast<std::size_t>(ch) * h * w;
        double* oc = out + static_cast<std::size_t>(ch) * (2 * h) * (2 * w);
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const double v = xc[static_cast<std::size_t>(y) * w + xx];
                double* o0 = oc + static_cast<std::size_t>(2 * y) * (2 * w) + 2 * xx;
                double* o1 = o0 + static_cast<std::size_t>(2 * w);
                o0[0] = v;
                o0[1] = v;
                o1[0] = v;
                o1[1] = v;
            }
        }
    }
}

void upsample2x_grad(const double* gout, double* gx, int c, int h, int w) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* gc = gout + static_cast<std::size_t>(ch) * (2 * h) * (2 * w);
        double* xc = gx + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const double* g0 = gc + static_cast<std::size_t>(2 * y) * (2 * w) + 2 * xx;
                const double* g1 = g0 + static_cast<std::size_t>(2 * w);
                xc[static_cast<std::size_t>(y) * w + xx] += g0[0] + g0[1] + g1[0] + g1[1];
            }
        }
    }
}

}  // namespace tinydet::kernels
