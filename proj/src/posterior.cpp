#include "fedmix/posterior.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/mlp.hpp"

#include <cmath>

namespace fedmix::posterior {

PosteriorTable PosteriorTable::uniform(std::size_t C_side, std::size_t K) {
    if (C_side == 0 || K == 0) throw ConfigError("posterior table needs C_side, K >= 1");
    PosteriorTable t;
    t.C_side = C_side;
    t.K = K;
    t.phi.assign(C_side, std::vector<double>(K, 1.0 / static_cast<double>(K)));
    return t;
}

void PosteriorTable::validate() const {
    if (phi.size() != C_side) throw StructuralError("posterior row count mismatch");
    for (const auto& row : phi) {
        if (row.size() != K) throw StructuralError("posterior row width mismatch");
        double s = 0.0;
        for (double v : row) {
            if (v < -1e-9) throw ContractViolation("posterior entry negative");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-9) throw ContractViolation("posterior row off simplex");
    }
}

double PosteriorTable::mean_row_entropy() const {
    double total = 0.0;
    for (const auto& row : phi) {
        double h = 0.0;
        for (double v : row) {
            if (v > 0.0) h -= v * std::log(v);
        }
        total += h;
    }
    return total / static_cast<double>(C_side);
}

std::map<int, std::vector<double>> closed_form_phi(
    const std::vector<std::vector<double>>& log_joints,
    const std::vector<int>& side_cats, double beta) {
    if (beta <= 0.0) throw ConfigError("beta must be positive");
    if (log_joints.size() != side_cats.size()) {
        throw StructuralError("one side category per log-joint row required");
    }

    std::map<int, std::vector<double>> sums;
    std::map<int, std::size_t> counts;
    for (std::size_t i = 0; i < log_joints.size(); ++i) {
        const int c = side_cats[i];
        auto [it, fresh] = sums.try_emplace(c, log_joints[i].size(), 0.0);
        if (it->second.size() != log_joints[i].size()) {
            throw StructuralError("log-joint row width varies within a batch");
        }
        for (std::size_t k = 0; k < log_joints[i].size(); ++k) {
            it->second[k] += log_joints[i][k];
        }
        counts[c] += 1;
    }

    std::map<int, std::vector<double>> rows;
    for (auto& [c, sum] : sums) {
        const double scale = 1.0 / (beta * static_cast<double>(counts[c]));
        for (double& v : sum) v *= scale;
        rows[c] = softmax(sum);
    }
    return rows;
}

void dampen(PosteriorTable& table, const std::map<int, std::vector<double>>& rows,
            double gamma) {
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
    for (const auto& [c, row] : rows) {
        if (c < 0 || static_cast<std::size_t>(c) >= table.C_side) {
            throw StructuralError("side category out of range");
        }
        if (row.size() != table.K) throw StructuralError("posterior row width mismatch");
        std::vector<double>& old = table.phi[static_cast<std::size_t>(c)];
        for (std::size_t k = 0; k < table.K; ++k) {
            old[k] = gamma * old[k] + (1.0 - gamma) * row[k];
        }
    }
}

std::vector<double> marginal_q_z_given_s(const PosteriorTable& table,
                                         const std::vector<double>& side_counts) {
    if (side_counts.size() != table.C_side) {
        throw StructuralError("one count per side category required");
    }
    double total = 0.0;
    for (double c : side_counts) {
        if (c < 0.0) throw ContractViolation("negative side count");
        total += c;
    }
    if (total <= 0.0) throw ContractViolation("side counts are all zero");

    // accumulate raw counts and divide once, so one-hot tables stay exact
    std::vector<double> q(table.K, 0.0);
    for (std::size_t c = 0; c < table.C_side; ++c) {
        for (std::size_t k = 0; k < table.K; ++k) {
            q[k] += side_counts[c] * table.phi[c][k];
        }
    }
    for (double& v : q) v /= total;
    return q;
}

std::vector<std::vector<double>> marginal_entropy_grad(const PosteriorTable& table,
                                                       const std::vector<double>& p_y) {
    if (p_y.size() != table.C_side) {
        throw StructuralError("one weight per side category required");
    }
    std::vector<double> m(table.K, 0.0);
    for (std::size_t c = 0; c < table.C_side; ++c) {
        for (std::size_t k = 0; k < table.K; ++k) m[k] += p_y[c] * table.phi[c][k];
    }
    std::vector<std::vector<double>> grad(table.C_side, std::vector<double>(table.K));
    for (std::size_t c = 0; c < table.C_side; ++c) {
        for (std::size_t k = 0; k < table.K; ++k) {
            grad[c][k] = -p_y[c] * (std::log(std::max(m[k], 1e-12)) + 1.0);
        }
    }
    return grad;
}

void project_rows(PosteriorTable& table) {
    // Entries at the floor stay exactly there and only the free mass is
    // rescaled; dividing the whole row would push floored entries back
    // below the floor and break idempotence.
    const double floor = 1e-6;
    for (auto& row : table.phi) {
        double above = 0.0;
        std::size_t clamped = 0;
        for (double& v : row) {
            if (v <= floor) {
                v = floor;
                ++clamped;
            } else {
                above += v;
            }
        }
        const double target = 1.0 - static_cast<double>(clamped) * floor;
        if (clamped == row.size() || target <= 0.0) {
            for (double& v : row) v = 1.0 / static_cast<double>(row.size());
            continue;
        }
        const double scale = target / above;
        for (double& v : row) {
            if (v > floor) v *= scale;
        }
    }
}

} // namespace fedmix::posterior
