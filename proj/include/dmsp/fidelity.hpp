#pragma once

#include <span>
#include <vector>

namespace dmsp {

// Unconstrained per-source parameters; softmax maps them onto the simplex.
struct FidelityLogits {
    std::vector<double> values;
};

// Simplex weights: positive, summing to 1.
struct FidelityScores {
    std::vector<double> values;
};

// Max-stabilized softmax. Any finite logits give finite scores.
FidelityScores scores_from_logits(const FidelityLogits& logits);
std::vector<double> softmax(std::span<const double> logits);

// Canonical preimage log(s); scores_from_logits round-trips within 1e-12.
FidelityLogits logits_from_scores(const FidelityScores& scores);

// d/d logit_j of sum_i C_i * L_i with L treated as constant:
//   C_j * (L_j - sum_i C_i L_i)
std::vector<double> fidelity_gradient(const FidelityLogits& logits,
                                      std::span<const double> per_source_losses);

}  // namespace dmsp
