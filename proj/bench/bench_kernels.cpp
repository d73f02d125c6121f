// Compares the serial reference kernels against the OpenMP variants.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tinydet/kernels.hpp"
#include "tinydet/rng.hpp"

namespace {

using tinydet::Rng;

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

void report(const char* name, double serial_ms, double omp_ms, double diff) {
    std::printf("%-24s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   max|diff| %.2e\n",
                name, serial_ms, omp_ms, serial_ms / omp_ms, diff);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n\n", omp_get_max_threads());
#else
    std::printf("built without OpenMP; both columns run serial code\n\n");
#endif
    Rng rng(7);
    const int reps = 5;

    {
        const int m = 256, k = 256, n = 256;
        const auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        const auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
        std::vector<double> out_s(static_cast<std::size_t>(m) * n);
        std::vector<double> out_p(out_s.size());
        const double ts = time_ms(
            [&] { tinydet::kernels::serial::matmul(a.data(), b.data(), out_s.data(), m, k, n); },
            reps);
        const double tp = time_ms(
            [&] { tinydet::kernels::matmul(a.data(), b.data(), out_p.data(), m, k, n); }, reps);
        report("matmul 256x256x256", ts, tp, max_diff(out_s, out_p));
    }
    {
        const int cin = 32, h = 64, w = 64, cout = 32, ks = 3;
        const auto x = random_vec(static_cast<std::size_t>(cin) * h * w, rng);
        const auto kern = random_vec(static_cast<std::size_t>(cout) * cin * ks * ks, rng);
        std::vector<double> out_s(static_cast<std::size_t>(cout) * h * w);
        std::vector<double> out_p(out_s.size());
        const double ts = time_ms(
            [&] {
                tinydet::kernels::serial::conv2d(x.data(), kern.data(), out_s.data(), cin, h, w,
                                                 cout, ks, 1, 1, h, w);
            },
            reps);
        const double tp = time_ms(
            [&] {
                tinydet::kernels::conv2d(x.data(), kern.data(), out_p.data(), cin, h, w, cout,
                                         ks, 1, 1, h, w);
            },
            reps);
        report("conv2d 32x64x64 k3", ts, tp, max_diff(out_s, out_p));
    }
    {
        const int rows = 4096, cols = 66;
        const auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
        std::vector<double> out_s(x.size());
        std::vector<double> out_p(x.size());
        const double ts = time_ms(
            [&] { tinydet::kernels::serial::softmax_rows(x.data(), out_s.data(), rows, cols); },
            reps);
        const double tp = time_ms(
            [&] { tinydet::kernels::softmax_rows(x.data(), out_p.data(), rows, cols); }, reps);
        report("softmax 4096x66", ts, tp, max_diff(out_s, out_p));
    }
    return 0;
}
