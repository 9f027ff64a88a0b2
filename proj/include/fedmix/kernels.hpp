#pragma once

#include <cstddef>

namespace fedmix::kernels {

enum class Backend { scalar, avx2 };

bool avx2_supported();
void set_backend(Backend b);
Backend active_backend();

// Dense f64 primitives behind the MLP, optimizer and aggregation paths.
// Every backend must produce bit-identical results: reductions fix a
// four-accumulator summation order and nothing may fuse multiply-add.

// sum_i a[i]*b[i]
double dot(const double* a, const double* b, std::size_t n);

// out[r] = dot(wextract row r, x); w is row-major rows x cols
void matvec(const double* w, const double* x, double* out,
            std::size_t rows, std::size_t cols);

// out[c] += sum_r w[r][c] * v[r], accumulated row by row
void matvec_t_accum(const double* w, const double* v, double* out,
                    std::size_t rows, std::size_t cols);

// out[i][j] += u[i] * v[j]
void outer_accum(double* out, const double* u, const double* v,
                 std::size_t m, std::size_t n);

// y[i] += a * x[i]
void axpy(std::size_t n, double a, const double* x, double* y);

// x[i] *= a
void scale(std::size_t n, double a, double* x);

void relu(std::size_t n, const double* z, double* out);

// out[i] = z[i] > 0 ? g[i] : 0
void relu_backward(std::size_t n, const double* z, const double* g, double* out);

// One bias-corrected Adam step. c1 = 1/(1-beta1^t), c2 = 1/(1-beta2^t);
// p[i] -= lr * (m[i]*c1) / (sqrt(v[i]*c2) + eps) after the moment updates.
void adam_update(std::size_t n, double* p, const double* g, double* m, double* v,
                 double beta1, double beta2, double eps, double lr,
                 double c1, double c2);

} // namespace fedmix::kernels
