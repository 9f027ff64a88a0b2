#pragma once

#include <cstddef>
#include <map>
#include <vector>

namespace fedmix::posterior {

// q(z=k | side=c) as a C_side x K table of simplex rows. The side category
// is the class label or the transform index depending on the run.
struct PosteriorTable {
    std::size_t C_side = 0;
    std::size_t K = 0;
    std::vector<std::vector<double>> phi;

    static PosteriorTable uniform(std::size_t C_side, std::size_t K);
    // rows must be on the simplex within 1e-9
    void validate() const;
    double mean_row_entropy() const;
};

// Per-category optimum of the batch objective sum_k phi_k logit_k
// - beta sum_k phi_k log phi_k: a softmax of the per-category mean log-joint
// at temperature beta. Categories absent from the batch are absent from the
// result.
std::map<int, std::vector<double>> closed_form_phi(
    const std::vector<std::vector<double>>& log_joints,
    const std::vector<int>& side_cats, double beta);

// phi_row <- gamma * phi_row + (1 - gamma) * new_row, only for rows present
void dampen(PosteriorTable& table, const std::map<int, std::vector<double>>& rows,
            double gamma);

// q(z|s) = sum_c count_c phi_c / sum_c count_c
std::vector<double> marginal_q_z_given_s(const PosteriorTable& table,
                                         const std::vector<double>& side_counts);

// gradient of H(m), m_k = sum_c p_y[c] phi[c][k]; entry (c,k) is
// -p_y[c] (log m_k + 1), with m floored at 1e-12 before the log
std::vector<std::vector<double>> marginal_entropy_grad(const PosteriorTable& table,
                                                       const std::vector<double>& p_y);

// clamp entries to >= 1e-6 and renormalize each row; repairs rows the server
// optimizer pushed off the simplex
void project_rows(PosteriorTable& table);

} // namespace fedmix::posterior
