#include "dmsp/metrics.hpp"

#include <cmath>

#include "dmsp/error.hpp"

namespace dmsp {

MetricsReport evaluate(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size() || predictions.empty())
        throw usage_error("invalid evaluation set", "need equal nonzero lengths");
    const auto n = predictions.size();
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(predictions[i]) || !std::isfinite(targets[i]))
            throw numeric_error("invalid evaluation set", "non-finite value");

    double abs_sum = 0.0, sq_sum = 0.0, pred_mean = 0.0, targ_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = predictions[i] - targets[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        pred_mean += predictions[i];
        targ_mean += targets[i];
    }
    pred_mean /= dn;
    targ_mean /= dn;

    double targ_var = 0.0, pred_var = 0.0, err_var = 0.0, cov = 0.0;
    const double err_mean = (pred_mean - targ_mean);
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = targets[i] - targ_mean;
        const double dp = predictions[i] - pred_mean;
        const double de = (predictions[i] - targets[i]) - err_mean;
        targ_var += dt * dt;
        pred_var += dp * dp;
        err_var += de * de;
        cov += dp * dt;
    }
    targ_var /= dn;
    pred_var /= dn;
    err_var /= dn;
    cov /= dn;

    MetricsReport r;
    r.n = n;
    r.mae = abs_sum / dn;
    r.rmse = std::sqrt(sq_sum / dn);
    if (targ_var > 0.0) {
        r.cod = 1.0 - (sq_sum / dn) / targ_var;
        r.evs = 1.0 - err_var / targ_var;
        if (pred_var > 0.0) r.pearson = cov / std::sqrt(pred_var * targ_var);
    }
    // power-mean inequality; violation would mean a broken accumulator
    if (r.rmse + 1e-12 < r.mae) throw numeric_error("numeric failure", "RMSE < MAE");
    return r;
}

std::vector<EvalRow> collect_eval_rows(const MultiSourceDataset& dataset,
                                       const std::vector<SplitIndices>& splits,
                                       const EvalReference& reference, const PredictFn& predict) {
    std::vector<EvalRow> rows;
    const auto add = [&](int i, std::size_t j) {
        const auto& s = dataset.sources[static_cast<std::size_t>(i)].samples[j];
        const auto pred = predict(i, j);
        if (!pred) return;
        const double ref = reference.kind == EvalReference::Kind::source
                               ? s.target
                               : reference.grid->nearest(s.location);
        rows.push_back({s.location, *pred, ref});
    };

    if (reference.kind == EvalReference::Kind::source) {
        if (reference.source_id < 0 || reference.source_id >= dataset.num_sources())
            throw usage_error("invalid evaluation set", "reference source out of range");
        for (std::size_t j : splits[static_cast<std::size_t>(reference.source_id)].test)
            add(reference.source_id, j);
    } else {
        if (!reference.grid) throw usage_error("invalid evaluation set", "no truth grid");
        for (int i = 0; i < dataset.num_sources(); ++i)
            for (std::size_t j : splits[static_cast<std::size_t>(i)].test) add(i, j);
    }
    if (rows.empty()) throw data_error("no evaluable samples");
    return rows;
}

MetricsReport evaluate_model(const Predictor& predictor, const std::vector<SplitIndices>& splits,
                             const EvalReference& reference, std::vector<EvalRow>* rows_out) {
    const auto& dataset = predictor.dataset();
    const PredictFn predict = [&](int i, std::size_t j) -> std::optional<double> {
        const MaskedView view = mask_target(dataset, i, j);
        const auto& s = dataset.sources[static_cast<std::size_t>(i)].samples[j];
        ad::Tape tape(predictor.params().store);
        const TapedForward f = predictor.build(tape, &view, s.location, s.timestamp, nullptr);
        if (!f.feasible) return std::nullopt;
        return tape.value(f.fused);
    };
    const auto rows = collect_eval_rows(dataset, splits, reference, predict);
    std::vector<double> preds, refs;
    preds.reserve(rows.size());
    refs.reserve(rows.size());
    for (const auto& row : rows) {
        preds.push_back(row.prediction);
        refs.push_back(row.reference);
    }
    if (rows_out) *rows_out = rows;
    return evaluate(preds, refs);
}

nlohmann::json report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["mae"] = report.mae;
    j["rmse"] = report.rmse;
    j["evs"] = report.evs ? nlohmann::json(*report.evs) : nlohmann::json(nullptr);
    j["cod"] = report.cod ? nlohmann::json(*report.cod) : nlohmann::json(nullptr);
    j["pearson"] = report.pearson ? nlohmann::json(*report.pearson) : nlohmann::json(nullptr);
    j["n"] = report.n;
    auto undefined = nlohmann::json::array();
    if (!report.evs) undefined.push_back("evs");
    if (!report.cod) undefined.push_back("cod");
    if (!report.pearson) undefined.push_back("pearson");
    j["undefined"] = std::move(undefined);
    return j;
}

}  // namespace dmsp
