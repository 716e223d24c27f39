#include "dmsp/fidelity.hpp"

#include <algorithm>
#include <cmath>

#include "dmsp/error.hpp"

namespace dmsp {

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw usage_error("invalid logits", "empty vector");
    double mx = logits[0];
    for (double v : logits) {
        if (!std::isfinite(v)) throw numeric_error("invalid logits", "non-finite entry");
        mx = std::max(mx, v);
    }
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

FidelityScores scores_from_logits(const FidelityLogits& logits) {
    return {softmax(logits.values)};
}

FidelityLogits logits_from_scores(const FidelityScores& scores) {
    if (scores.values.empty()) throw usage_error("not in simplex interior", "empty vector");
    double sum = 0.0;
    for (double s : scores.values) {
        if (!(s > 0.0)) throw numeric_error("not in simplex interior", "nonpositive score");
        sum += s;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw numeric_error("not in simplex interior", "scores sum to " + std::to_string(sum));
    FidelityLogits out;
    out.values.reserve(scores.values.size());
    for (double s : scores.values) out.values.push_back(std::log(s));
    return out;
}

std::vector<double> fidelity_gradient(const FidelityLogits& logits,
                                      std::span<const double> per_source_losses) {
    if (logits.values.size() != per_source_losses.size())
        throw usage_error("dimension error", "logits/losses length mismatch");
    for (double l : per_source_losses)
        if (!std::isfinite(l)) throw numeric_error("invalid logits", "non-finite loss");

    const std::vector<double> c = softmax(logits.values);
    double weighted = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) weighted += c[i] * per_source_losses[i];
    std::vector<double> grad(c.size());
    for (std::size_t j = 0; j < c.size(); ++j)
        grad[j] = c[j] * (per_source_losses[j] - weighted);
    return grad;
}

}  // namespace dmsp
