#include "fedmix/moe.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/kernels.hpp"

#include <cmath>

namespace fedmix::moe {

namespace {
// gate log-probabilities are floored here so pruned-away responsibilities
// cannot turn into -inf terms or NaN gradients
const double kLogFloor = std::log(1e-12);
} // namespace

void ExpertBank::validate() const {
    if (experts.empty()) throw StructuralError("expert bank is empty");
    spec.validate();
    for (const ParamVector& e : experts) {
        experts.front().require_aligned(e, "expert bank");
    }
}

LocalGate LocalGate::zeros(std::size_t penultimate_dim, std::size_t K) {
    LocalGate g;
    g.pi_logits.assign(K, 0.0);
    g.A.assign(penultimate_dim * K, 0.0);
    g.b.assign(K, 0.0);
    return g;
}

GateGrad GateGrad::zeros(std::size_t penultimate_dim, std::size_t K) {
    GateGrad g;
    g.pi_logits.assign(K, 0.0);
    g.A.assign(penultimate_dim * K, 0.0);
    g.b.assign(K, 0.0);
    return g;
}

void GateGrad::axpy_into(LocalGate& gate, double a) const {
    if (gate.pi_logits.size() != pi_logits.size() || gate.A.size() != A.size() ||
        gate.b.size() != b.size()) {
        throw StructuralError("gate gradient layout mismatch");
    }
    kernels::axpy(pi_logits.size(), a, pi_logits.data(), gate.pi_logits.data());
    kernels::axpy(A.size(), a, A.data(), gate.A.data());
    kernels::axpy(b.size(), a, b.data(), gate.b.data());
}

std::vector<std::size_t> all_experts(std::size_t K) {
    std::vector<std::size_t> idx(K);
    for (std::size_t k = 0; k < K; ++k) idx[k] = k;
    return idx;
}

GateEval gate_eval(const ExpertBank& bank, const LocalGate& gate,
                   const std::vector<double>& x,
                   const std::vector<std::size_t>& active) {
    const std::size_t K = bank.K();
    if (gate.K() != K || gate.pi_logits.size() != K ||
        gate.A.size() != bank.spec.penultimate_dim() * K) {
        throw StructuralError("gate layout does not match expert bank");
    }
    if (active.empty()) throw StructuralError("active expert set is empty");

    GateEval ev;
    ev.fwd.reserve(active.size());
    for (std::size_t k : active) {
        if (k >= K) throw StructuralError("active expert index out of range");
        ev.fwd.push_back(forward(bank.spec, bank.experts[k], x));
    }

    std::vector<double> logits(active.size());
    for (std::size_t m = 0; m < active.size(); ++m) logits[m] = gate.pi_logits[active[m]];
    ev.pi = softmax(logits);

    const std::size_t P = bank.spec.penultimate_dim();
    ev.h_s.assign(P, 0.0);
    for (std::size_t m = 0; m < active.size(); ++m) {
        kernels::axpy(P, ev.pi[m], ev.fwd[m].penultimate().data(), ev.h_s.data());
    }

    ev.u.resize(active.size());
    for (std::size_t m = 0; m < active.size(); ++m) {
        const std::size_t k = active[m];
        double acc = 0.0;
        for (std::size_t p = 0; p < P; ++p) acc += gate.A[p * K + k] * ev.h_s[p];
        ev.u[m] = acc + gate.b[k];
    }
    ev.p_z = softmax(ev.u);
    return ev;
}

std::vector<double> gate_probs(const ExpertBank& bank, const LocalGate& gate,
                               const std::vector<double>& x) {
    return gate_eval(bank, gate, x, all_experts(bank.K())).p_z;
}

std::vector<double> mixture_predict(const ExpertBank& bank, const LocalGate& gate,
                                    const std::vector<double>& x) {
    const GateEval ev = gate_eval(bank, gate, x, all_experts(bank.K()));
    std::vector<double> p_y(bank.spec.output_dim(), 0.0);
    for (std::size_t m = 0; m < ev.fwd.size(); ++m) {
        const std::vector<double> p = softmax(ev.fwd[m].logits);
        kernels::axpy(p_y.size(), ev.p_z[m], p.data(), p_y.data());
    }
    return p_y;
}

BatchEval eval_batch(const ExpertBank& bank, const LocalGate& gate, const Batch& batch,
                     const std::vector<std::size_t>& active) {
    if (batch.empty()) throw ContractViolation("empty batch");
    BatchEval ev;
    ev.per_example.reserve(batch.size());
    ev.log_like.resize(batch.size());
    ev.log_gate.resize(batch.size());
    ev.log_joint.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Example& ex = batch[i];
        if (ex.y < 0 || static_cast<std::size_t>(ex.y) >= bank.spec.output_dim()) {
            throw StructuralError("label out of range");
        }
        GateEval ge = gate_eval(bank, gate, *ex.x, active);
        const std::vector<double> lg = log_softmax(ge.u);
        ev.log_like[i].resize(active.size());
        ev.log_gate[i].resize(active.size());
        ev.log_joint[i].resize(active.size());
        for (std::size_t m = 0; m < active.size(); ++m) {
            const std::vector<double> ll = log_softmax(ge.fwd[m].logits);
            ev.log_like[i][m] = ll[static_cast<std::size_t>(ex.y)];
            ev.log_gate[i][m] = std::max(lg[m], kLogFloor);
            ev.log_joint[i][m] = ev.log_like[i][m] + ev.log_gate[i][m];
        }
        ev.per_example.push_back(std::move(ge));
    }
    return ev;
}

LowerBoundResult lower_bound_grads(const ExpertBank& bank, const LocalGate& gate,
                                   const BatchEval& eval, const Batch& batch,
                                   const std::vector<std::vector<double>>& q_like,
                                   const std::vector<std::vector<double>>& q_gate,
                                   const std::vector<std::size_t>& active,
                                   bool grad_to_features) {
    const std::size_t B = batch.size();
    if (eval.per_example.size() != B || q_like.size() != B || q_gate.size() != B) {
        throw StructuralError("batch evaluation size mismatch");
    }
    const std::size_t K = bank.K();
    const std::size_t P = bank.spec.penultimate_dim();
    const std::size_t C = bank.spec.output_dim();
    const double inv_b = 1.0 / static_cast<double>(B);

    LowerBoundResult res;
    res.grads_bank.reserve(active.size());
    for (std::size_t k : active) {
        res.grads_bank.push_back(ParamVector::zeros_like(bank.experts[k]));
    }
    res.grad_gate = GateGrad::zeros(P, K);

    for (std::size_t i = 0; i < B; ++i) {
        const GateEval& ge = eval.per_example[i];
        if (q_like[i].size() != active.size() || q_gate[i].size() != active.size()) {
            throw StructuralError("posterior row width mismatch");
        }
        for (std::size_t m = 0; m < active.size(); ++m) {
            res.loss += inv_b * (q_like[i][m] * eval.log_like[i][m] +
                                 q_gate[i][m] * eval.log_gate[i][m]);
        }

        // gate logits: clamped entries carry no gradient
        std::vector<double> g_u(active.size());
        double mass = 0.0;
        for (std::size_t m = 0; m < active.size(); ++m) {
            if (eval.log_gate[i][m] > kLogFloor) mass += q_gate[i][m];
        }
        for (std::size_t m = 0; m < active.size(); ++m) {
            const double direct = eval.log_gate[i][m] > kLogFloor ? q_gate[i][m] : 0.0;
            g_u[m] = (direct - mass * ge.p_z[m]) * inv_b;
        }

        std::vector<double> dh_s(P, 0.0);
        for (std::size_t m = 0; m < active.size(); ++m) {
            const std::size_t k = active[m];
            res.grad_gate.b[k] += g_u[m];
            for (std::size_t p = 0; p < P; ++p) {
                res.grad_gate.A[p * K + k] += ge.h_s[p] * g_u[m];
                dh_s[p] += gate.A[p * K + k] * g_u[m];
            }
        }

        // pi enters through h_s = sum_m pi_m h_m; softmax Jacobian over the
        // active logits, scattered back to full size
        std::vector<double> dpi(active.size());
        double pi_dot = 0.0;
        for (std::size_t m = 0; m < active.size(); ++m) {
            dpi[m] = kernels::dot(dh_s.data(), ge.fwd[m].penultimate().data(), P);
            pi_dot += ge.pi[m] * dpi[m];
        }
        for (std::size_t m = 0; m < active.size(); ++m) {
            res.grad_gate.pi_logits[active[m]] += ge.pi[m] * (dpi[m] - pi_dot);
        }

        // expert parameters: likelihood term, plus the gate's feature path
        // when grad_to_features is on
        const std::size_t y = static_cast<std::size_t>(batch[i].y);
        for (std::size_t m = 0; m < active.size(); ++m) {
            const double scale = q_like[i][m] * inv_b;
            const std::vector<double> p = softmax(ge.fwd[m].logits);
            std::vector<double> dlogits(C);
            for (std::size_t c = 0; c < C; ++c) {
                dlogits[c] = ((c == y ? 1.0 : 0.0) - p[c]) * scale;
            }
            std::vector<double> dpen;
            const std::vector<double>* dpen_ptr = nullptr;
            if (grad_to_features) {
                dpen.resize(P);
                for (std::size_t p2 = 0; p2 < P; ++p2) dpen[p2] = ge.pi[m] * dh_s[p2];
                dpen_ptr = &dpen;
            }
            const ParamVector g = backward(bank.spec, bank.experts[active[m]],
                                           ge.fwd[m].cache, dlogits, dpen_ptr);
            res.grads_bank[m].add(g);
        }
    }
    return res;
}

LowerBoundResult lower_bound_batch(const ExpertBank& bank, const LocalGate& gate,
                                   const std::vector<std::vector<double>>& phi_rows,
                                   const Batch& batch, bool grad_to_features) {
    bank.validate();
    if (phi_rows.size() != batch.size()) {
        throw StructuralError("one posterior row per example required");
    }
    for (const auto& row : phi_rows) {
        if (row.size() != bank.K()) throw StructuralError("posterior row width mismatch");
        double s = 0.0;
        for (double v : row) {
            if (v < -1e-9) throw ContractViolation("posterior row has negative mass");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-9) {
            throw ContractViolation("posterior row off the simplex");
        }
    }
    const std::vector<std::size_t> active = all_experts(bank.K());
    const BatchEval ev = eval_batch(bank, gate, batch, active);
    return lower_bound_grads(bank, gate, ev, batch, phi_rows, phi_rows, active,
                             grad_to_features);
}

} // namespace fedmix::moe
