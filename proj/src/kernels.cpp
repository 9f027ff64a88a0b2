#include "fedmix/kernels.hpp"

#include "fedmix/errors.hpp"
#include "kernels_detail.hpp"

namespace fedmix::kernels {
namespace {

const detail::KernelTable* g_active = nullptr;
Backend g_backend = Backend::scalar;

const detail::KernelTable& table() {
    if (!g_active) {
        if (const detail::KernelTable* t = detail::avx2_table()) {
            g_active = t;
            g_backend = Backend::avx2;
        } else {
            g_active = &detail::scalar_table();
            g_backend = Backend::scalar;
        }
    }
    return *g_active;
}

} // namespace

bool avx2_supported() { return detail::avx2_table() != nullptr; }

void set_backend(Backend b) {
    switch (b) {
    case Backend::scalar:
        g_active = &detail::scalar_table();
        break;
    case Backend::avx2: {
        const detail::KernelTable* t = detail::avx2_table();
        if (!t) throw ConfigError("kernel backend avx2 not available on this machine");
        g_active = t;
        break;
    }
    }
    g_backend = b;
}

Backend active_backend() {
    table();
    return g_backend;
}

double dot(const double* a, const double* b, std::size_t n) {
    return table().dot(a, b, n);
}

void matvec(const double* w, const double* x, double* out,
            std::size_t rows, std::size_t cols) {
    table().matvec(w, x, out, rows, cols);
}

void matvec_t_accum(const double* w, const double* v, double* out,
                    std::size_t rows, std::size_t cols) {
    table().matvec_t_accum(w, v, out, rows, cols);
}

void outer_accum(double* out, const double* u, const double* v,
                 std::size_t m, std::size_t n) {
    table().outer_accum(out, u, v, m, n);
}

void axpy(std::size_t n, double a, const double* x, double* y) {
    table().axpy(n, a, x, y);
}

void scale(std::size_t n, double a, double* x) {
    table().scale(n, a, x);
}

void relu(std::size_t n, const double* z, double* out) {
    table().relu(n, z, out);
}

void relu_backward(std::size_t n, const double* z, const double* g, double* out) {
    table().relu_backward(n, z, g, out);
}

void adam_update(std::size_t n, double* p, const double* g, double* m, double* v,
                 double beta1, double beta2, double eps, double lr,
                 double c1, double c2) {
    table().adam_update(n, p, g, m, v, beta1, beta2, eps, lr, c1, c2);
}

} // namespace fedmix::kernels
