#pragma once

#include "fedmix/param_vector.hpp"

#include <cstdint>

namespace fedmix {

// params -= lr * grad. Callers that maximize an objective pass the ascent
// direction negated at the call site.
void sgd_step(ParamVector& params, const ParamVector& grad, double lr);

struct AdamState {
    ParamVector m;
    ParamVector v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(const ParamVector& like,
                          double beta1 = 0.9, double beta2 = 0.999,
                          double eps = 1e-8);
};

// Standard bias-corrected Adam; increments state.t.
void adam_step(AdamState& state, ParamVector& params, const ParamVector& grad,
               double lr);

} // namespace fedmix
