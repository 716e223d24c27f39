#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "dmsp/dataset.hpp"
#include "dmsp/model.hpp"

namespace dmsp {

// Degenerate inputs (zero-variance targets or predictions) leave the affected
// metric unset instead of propagating NaN.
struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> evs;
    std::optional<double> cod;
    std::optional<double> pearson;
    std::size_t n = 0;
};

// MAE, RMSE, EVS, CoD, Pearson with population (1/n) variances throughout.
MetricsReport evaluate(std::span<const double> predictions, std::span<const double> targets);

struct EvalReference {
    enum class Kind { source, truth_grid };
    Kind kind = Kind::source;
    int source_id = 0;
    const TruthGrid* grid = nullptr;

    static EvalReference source(int id) { return {Kind::source, id, nullptr}; }
    static EvalReference truth(const TruthGrid& g) { return {Kind::truth_grid, 0, &g}; }
};

struct EvalRow {
    GeoPoint location;
    double prediction = 0.0;
    double reference = 0.0;
};

// Masked leave-one-out predictions over the test split, scored against a
// designated source's observations or the synthetic truth grid. The predictor
// callable allows harness self-checks with a synthetic oracle.
using PredictFn = std::function<std::optional<double>(int source, std::size_t index)>;

std::vector<EvalRow> collect_eval_rows(const MultiSourceDataset& dataset,
                                       const std::vector<SplitIndices>& splits,
                                       const EvalReference& reference, const PredictFn& predict);

MetricsReport evaluate_model(const Predictor& predictor, const std::vector<SplitIndices>& splits,
                             const EvalReference& reference,
                             std::vector<EvalRow>* rows_out = nullptr);

nlohmann::json report_to_json(const MetricsReport& report);

}  // namespace dmsp
