#include "kernels_detail.hpp"

#include <cmath>

// Reference backend. The summation order in dot() is the contract every
// other backend has to reproduce exactly: four independent accumulators
// striding by four, combined as (s0+s2)+(s1+s3), then a sequential tail.
// That is precisely what a 256-bit lane-wise reduction computes.

namespace fedmix::kernels::detail {
namespace {

double dot_(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double s = (s0 + s2) + (s1 + s3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void matvec_(const double* w, const double* x, double* out,
             std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) out[r] = dot_(w + r * cols, x, cols);
}

void matvec_t_accum_(const double* w, const double* v, double* out,
                     std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double a = v[r];
        const double* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) out[c] += a * row[c];
    }
}

void outer_accum_(double* out, const double* u, const double* v,
                  std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double a = u[i];
        double* row = out + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += a * v[j];
    }
}

void axpy_(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_(std::size_t n, double a, double* x) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void relu_(std::size_t n, const double* z, double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = z[i] > 0.0 ? z[i] : 0.0;
}

void relu_backward_(std::size_t n, const double* z, const double* g, double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = z[i] > 0.0 ? g[i] : 0.0;
}

void adam_update_(std::size_t n, double* p, const double* g, double* m, double* v,
                  double beta1, double beta2, double eps, double lr,
                  double c1, double c2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
}

} // namespace

const KernelTable& scalar_table() {
    static const KernelTable t = {
        dot_, matvec_, matvec_t_accum_, outer_accum_,
        axpy_, scale_, relu_, relu_backward_, adam_update_,
    };
    return t;
}

} // namespace fedmix::kernels::detail
