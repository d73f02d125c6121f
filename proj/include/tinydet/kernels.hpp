#pragma once

// Dense compute kernels. Every kernel in tinydet::kernels is OpenMP-parallel
// over disjoint output slices: each output element is produced by exactly one
// thread with a fixed inner summation order, so results are bit-identical
// across thread counts. The serial references in tinydet::kernels::serial are
// kept for testing (agreement to floating-point roundoff) and for the kernel
// benchmark.

#include <cstdint>

namespace tinydet::kernels {

namespace serial {

// out[m x n] = a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* out, int m, int k, int n);

// Cross-correlation, kernel w[cout x cin x ks x ks], x[cin x h x w].
void conv2d(const double* x, const double* w, double* out, int cin, int h, int wd, int cout,
            int ks, int stride, int pad, int oh, int ow);

// Row-wise softmax with max subtraction.
void softmax_rows(const double* x, double* out, int rows, int cols);

}  // namespace serial

void matmul(const double* a, const double* b, double* out, int m, int k, int n);
// ga[m x k] += gout[m x n] * b^T; gb[k x n] += a^T * gout
void matmul_grad_a(const double* gout, const double* b, double* ga, int m, int k, int n);
void matmul_grad_b(const double* a, const double* gout, double* gb, int m, int k, int n);

void conv2d(const double* x, const double* w, double* out, int cin, int h, int wd, int cout,
            int ks, int stride, int pad, int oh, int ow);
void conv2d_grad_input(const double* gout, const double* w, double* gx, int cin, int h, int wd,
                       int cout, int ks, int stride, int pad, int oh, int ow);
void conv2d_grad_kernel(const double* gout, const double* x, double* gw, int cin, int h, int wd,
                        int cout, int ks, int stride, int pad, int oh, int ow);

void softmax_rows(const double* x, double* out, int rows, int cols);
// gx = y .* (gy - rowdot(y, gy)); y is the softmax output.
void softmax_rows_grad(const double* y, const double* gy, double* gx, int rows, int cols);

// Nearest-neighbor 2x upsample of a [c x h x w] map and its adjoint.
void upsample2x(const double* x, double* out, int c, int h, int w);
void upsample2x_grad(const double* gout, double* gx, int c, int h, int w);

}  // namespace tinydet::kernels
