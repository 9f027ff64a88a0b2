#include "kernels_detail.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

// AVX2 variants. No FMA: multiply and add round separately, matching the
// scalar reference. dot() reduces the 256-bit accumulator as
// (lane0+lane2)+(lane1+lane3), the layout the scalar backend mirrors.

namespace fedmix::kernels::detail {
namespace {

double dot_(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d va = _mm256_loadu_pd(a + i);
        const __m256d vb = _mm256_loadu_pd(b + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
    }
    const __m128d lo = _mm256_castpd256_pd128(acc);
    const __m128d hi = _mm256_extractf128_pd(acc, 1);
    const __m128d pair = _mm_add_pd(lo, hi);
    double s = _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
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
        const __m256d va = _mm256_set1_pd(a);
        std::size_t c = 0;
        for (; c + 4 <= cols; c += 4) {
            const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(row + c));
            _mm256_storeu_pd(out + c, _mm256_add_pd(_mm256_loadu_pd(out + c), prod));
        }
        for (; c < cols; ++c) out[c] += a * row[c];
    }
}

void outer_accum_(double* out, const double* u, const double* v,
                  std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double a = u[i];
        double* row = out + i * n;
        const __m256d va = _mm256_set1_pd(a);
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(v + j));
            _mm256_storeu_pd(row + j, _mm256_add_pd(_mm256_loadu_pd(row + j), prod));
        }
        for (; j < n; ++j) row[j] += a * v[j];
    }
}

void axpy_(std::size_t n, double a, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_(std::size_t n, double a, double* x) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) x[i] *= a;
}

void relu_(std::size_t n, const double* z, double* out) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vz = _mm256_loadu_pd(z + i);
        const __m256d mask = _mm256_cmp_pd(vz, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(mask, vz));
    }
    for (; i < n; ++i) out[i] = z[i] > 0.0 ? z[i] : 0.0;
}

void relu_backward_(std::size_t n, const double* z, const double* g, double* out) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(z + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(mask, _mm256_loadu_pd(g + i)));
    }
    for (; i < n; ++i) out[i] = z[i] > 0.0 ? g[i] : 0.0;
}

void adam_update_(std::size_t n, double* p, const double* g, double* m, double* v,
                  double beta1, double beta2, double eps, double lr,
                  double c1, double c2) {
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d vr1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d vr2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d vc1 = _mm256_set1_pd(c1);
    const __m256d vc2 = _mm256_set1_pd(c2);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vg = _mm256_loadu_pd(g + i);
        __m256d vm = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        vm = _mm256_add_pd(_mm256_mul_pd(vb1, vm), _mm256_mul_pd(vr1, vg));
        vv = _mm256_add_pd(_mm256_mul_pd(vb2, vv),
                           _mm256_mul_pd(vr2, _mm256_mul_pd(vg, vg)));
        _mm256_storeu_pd(m + i, vm);
        _mm256_storeu_pd(v + i, vv);
        const __m256d num = _mm256_mul_pd(vlr, _mm256_mul_pd(vm, vc1));
        const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vv, vc2)), veps);
        const __m256d vp = _mm256_loadu_pd(p + i);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(vp, _mm256_div_pd(num, den)));
    }
    if (i < n) {
        scalar_table().adam_update(n - i, p + i, g + i, m + i, v + i,
                                   beta1, beta2, eps, lr, c1, c2);
    }
}

} // namespace

const KernelTable* avx2_table() {
    if (!__builtin_cpu_supports("avx2")) return nullptr;
    static const KernelTable t = {
        dot_, matvec_, matvec_t_accum_, outer_accum_,
        axpy_, scale_, relu_, relu_backward_, adam_update_,
    };
    return &t;
}

} // namespace fedmix::kernels::detail

#else

namespace fedmix::kernels::detail {

const KernelTable* avx2_table() { return nullptr; }

} // namespace fedmix::kernels::detail

#endif
