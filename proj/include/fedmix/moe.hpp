#pragma once

#include "fedmix/mlp.hpp"
#include "fedmix/param_vector.hpp"

#include <cstddef>
#include <vector>

namespace fedmix::moe {

struct ExpertBank {
    MlpSpec spec;
    std::vector<ParamVector> experts;

    std::size_t K() const { return experts.size(); }
    void validate() const;
};

// theta_s = (pi, A, b). The gate mixes expert features h_k with
// softmax(pi_logits), maps through A (penultimate-dim x K, row-major) plus b,
// and reads expert responsibilities off a softmax.
struct LocalGate {
    std::vector<double> pi_logits;
    std::vector<double> A;
    std::vector<double> b;

    static LocalGate zeros(std::size_t penultimate_dim, std::size_t K);
    std::size_t K() const { return b.size(); }
};

struct Example {
    const std::vector<double>* x;
    int y;
};
using Batch = std::vector<Example>;

struct GateGrad {
    std::vector<double> pi_logits;
    std::vector<double> A;
    std::vector<double> b;

    static GateGrad zeros(std::size_t penultimate_dim, std::size_t K);
    void axpy_into(LocalGate& gate, double a) const;
};

// One example evaluated under the active experts: forwards, mixed feature
// h_s, and gate responsibilities. `active` indexes into the bank; restricting
// to a subset is exactly the renormalized problem over that subset because
// softmax restricted to a support renormalizes itself.
struct GateEval {
    std::vector<ForwardResult> fwd; // parallel to active
    std::vector<double> pi;         // softmax over active pi_logits
    std::vector<double> h_s;
    std::vector<double> u;          // gate logits over active experts
    std::vector<double> p_z;        // softmax(u)
};

std::vector<std::size_t> all_experts(std::size_t K);

GateEval gate_eval(const ExpertBank& bank, const LocalGate& gate,
                   const std::vector<double>& x,
                   const std::vector<std::size_t>& active);

// p(z|x,s) over the full bank (Eq. 10 path)
std::vector<double> gate_probs(const ExpertBank& bank, const LocalGate& gate,
                               const std::vector<double>& x);

// p(y|x,s) = sum_z softmax(expert z logits) * p(z|x,s)
std::vector<double> mixture_predict(const ExpertBank& bank, const LocalGate& gate,
                                    const std::vector<double>& x);

// Everything a client batch step needs from one pass over the data:
// per-example log p(y|x,z), floored log p(z|x,s), and their sum (the
// log-joint rows the closed-form posterior update consumes).
struct BatchEval {
    std::vector<GateEval> per_example;
    std::vector<std::vector<double>> log_like;
    std::vector<std::vector<double>> log_gate;
    std::vector<std::vector<double>> log_joint;
};

BatchEval eval_batch(const ExpertBank& bank, const LocalGate& gate, const Batch& batch,
                     const std::vector<std::size_t>& active);

struct LowerBoundResult {
    double loss = 0.0;
    std::vector<ParamVector> grads_bank; // parallel to active, ascent direction
    GateGrad grad_gate;                  // full-size, zero at inactive entries
};

// Gradients of (1/B) sum_i sum_z [ q_like[i][z] log p(y_i|x_i,z)
//                                 + q_gate[i][z] log p(z|x_i,s) ]
// with respect to the active experts and the gate. q rows are indexed over
// `active`. grad_to_features controls whether the gate term backpropagates
// into expert hidden layers; off, the experts see only their likelihood term.
LowerBoundResult lower_bound_grads(const ExpertBank& bank, const LocalGate& gate,
                                   const BatchEval& eval, const Batch& batch,
                                   const std::vector<std::vector<double>>& q_like,
                                   const std::vector<std::vector<double>>& q_gate,
                                   const std::vector<std::size_t>& active,
                                   bool grad_to_features);

// The plain (unpruned) client objective: one q weighting both terms.
LowerBoundResult lower_bound_batch(const ExpertBank& bank, const LocalGate& gate,
                                   const std::vector<std::vector<double>>& phi_rows,
                                   const Batch& batch,
                                   bool grad_to_features = false);

} // namespace fedmix::moe
