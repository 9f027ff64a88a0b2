#include "fedmix/optim.hpp"

#include "fedmix/kernels.hpp"

#include <cmath>

namespace fedmix {

void sgd_step(ParamVector& params, const ParamVector& grad, double lr) {
    params.require_aligned(grad, "sgd_step");
    params.axpy(-lr, grad);
}

AdamState AdamState::init(const ParamVector& like, double beta1, double beta2,
                          double eps) {
    AdamState st;
    st.m = ParamVector::zeros_like(like);
    st.v = ParamVector::zeros_like(like);
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.eps = eps;
    return st;
}

void adam_step(AdamState& state, ParamVector& params, const ParamVector& grad,
               double lr) {
    params.require_aligned(grad, "adam_step");
    params.require_aligned(state.m, "adam_step moments");
    state.t += 1;
    const double c1 = 1.0 / (1.0 - std::pow(state.beta1, static_cast<double>(state.t)));
    const double c2 = 1.0 / (1.0 - std::pow(state.beta2, static_cast<double>(state.t)));
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        kernels::adam_update(params.blocks[i].values.size(),
                             params.blocks[i].values.data(),
                             grad.blocks[i].values.data(),
                             state.m.blocks[i].values.data(),
                             state.v.blocks[i].values.data(),
                             state.beta1, state.beta2, state.eps, lr, c1, c2);
    }
}

} // namespace fedmix
