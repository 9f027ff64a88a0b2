#pragma once

#include <cstddef>

namespace fedmix::kernels::detail {

struct KernelTable {
    double (*dot)(const double*, const double*, std::size_t);
    void (*matvec)(const double*, const double*, double*, std::size_t, std::size_t);
    void (*matvec_t_accum)(const double*, const double*, double*, std::size_t, std::size_t);
    void (*outer_accum)(double*, const double*, const double*, std::size_t, std::size_t);
    void (*axpy)(std::size_t, double, const double*, double*);
    void (*scale)(std::size_t, double, double*);
    void (*relu)(std::size_t, const double*, double*);
    void (*relu_backward)(std::size_t, const double*, const double*, double*);
    void (*adam_update)(std::size_t, double*, const double*, double*, double*,
                        double, double, double, double, double, double);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without AVX2 support or the CPU lacks it
const KernelTable* avx2_table();

} // namespace fedmix::kernels::detail
