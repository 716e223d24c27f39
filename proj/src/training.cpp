#include "dmsp/training.hpp"

#include <algorithm>
#include <cmath>

#include "dmsp/error.hpp"

namespace dmsp {

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw usage_error("invalid config", "learning rate must be positive");
    if (max_epochs < 1) throw usage_error("invalid config", "max_epochs must be positive");
    if (patience < 1) throw usage_error("invalid config", "patience must be >= 1");
    if (k_neighbors < 1) throw usage_error("invalid config", "k must be positive");
    if (hidden_dim < 1 || num_layers < 1) throw usage_error("invalid config", "model dims");
    if (batch_size < 1) throw usage_error("invalid config", "batch size must be positive");
    if (mode.kind == TrainMode::Kind::single_source && mode.source < 0)
        throw usage_error("invalid config", "single_source mode needs a source id");
}

double loss(double prediction, double target) {
    if (!std::isfinite(prediction) || !std::isfinite(target))
        throw numeric_error("numeric failure", "non-finite loss input");
    const double e = prediction - target;
    return e * e;
}

void adam_step(std::span<double> params, std::span<const double> gradients, AdamState& state,
               double learning_rate) {
    if (params.size() != gradients.size())
        throw usage_error("dimension error", "params/gradients size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size())
        throw usage_error("dimension error", "optimizer state size mismatch");

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = gradients[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= learning_rate * mhat / (std::sqrt(vhat) + eps);
    }
}

namespace {

struct SampleEval {
    double weighted_loss;
    double squared_error;
};

std::optional<SampleEval> eval_sample(const Predictor& predictor, ad::Tape& tape, int source,
                                      std::size_t index, std::span<double>* gradients) {
    const auto& sample =
        predictor.dataset().sources[static_cast<std::size_t>(source)].samples[index];
    const MaskedView view = mask_target(predictor.dataset(), source, index);
    tape.reset();
    const TapedForward f =
        predictor.build(tape, &view, sample.location, sample.timestamp, &sample.target);
    if (!f.feasible) return std::nullopt;
    const double wl = tape.value(f.weighted_loss);
    if (!std::isfinite(wl)) throw numeric_error("numeric failure", "non-finite training loss");
    if (gradients) tape.backward(f.weighted_loss, *gradients);
    return SampleEval{wl, tape.value(f.squared_error)};
}

}  // namespace

std::optional<double> compute_gradients(const Predictor& predictor, int source, std::size_t index,
                                        std::span<double> gradients) {
    ad::Tape tape(predictor.params().store);
    const auto r = eval_sample(predictor, tape, source, index, &gradients);
    if (!r) return std::nullopt;
    return r->weighted_loss;
}

std::optional<double> sample_loss(const Predictor& predictor, int source, std::size_t index) {
    ad::Tape tape(predictor.params().store);
    const auto r = eval_sample(predictor, tape, source, index, nullptr);
    if (!r) return std::nullopt;
    return r->weighted_loss;
}

void train_epoch(TrainState& state, const Predictor& predictor,
                 const std::vector<SplitIndices>& splits, const TrainConfig& config) {
    const auto& dataset = predictor.dataset();
    const int n_sources = dataset.num_sources();

    std::vector<std::pair<int, std::size_t>> items;
    for (int i = 0; i < n_sources; ++i) {
        if (config.mode.kind == TrainMode::Kind::single_source && i != config.mode.source)
            continue;
        for (std::size_t j : splits[static_cast<std::size_t>(i)].train) items.emplace_back(i, j);
    }
    if (items.empty()) throw data_error("no usable source", "empty training split");
    if (!config.strict_order) state.shuffle_rng.shuffle(items);

    const std::size_t psize = state.params.store.size();
    std::vector<double> grads(psize, 0.0);
    std::vector<double> batch_grads(psize, 0.0);
    ad::Tape tape(state.params.store);

    std::vector<double> sq_sum(static_cast<std::size_t>(n_sources), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(n_sources), 0);
    int skipped = 0;
    int in_batch = 0;

    const auto zero_frozen = [&](std::vector<double>& g) {
        if (config.mode.kind != TrainMode::Kind::frozen_fidelity) return;
        const auto& blk = state.params.store.block(state.params.fidelity_block);
        std::fill_n(g.begin() + static_cast<std::ptrdiff_t>(blk.offset), blk.size, 0.0);
    };
    const auto apply = [&](std::vector<double>& g, int count) {
        if (count > 1)
            for (double& x : g) x /= static_cast<double>(count);
        zero_frozen(g);
        adam_step(state.params.store.data(), g, state.adam, config.learning_rate);
        std::fill(g.begin(), g.end(), 0.0);
    };

    for (const auto& [i, j] : items) {
        std::span<double> gspan(grads);
        const auto r = eval_sample(predictor, tape, i, j, &gspan);
        if (!r) {
            ++skipped;
            continue;
        }
        sq_sum[static_cast<std::size_t>(i)] += r->squared_error;
        counts[static_cast<std::size_t>(i)] += 1;

        if (config.batch_size == 1) {
            apply(grads, 1);
        } else {
            for (std::size_t p = 0; p < psize; ++p) batch_grads[p] += grads[p];
            std::fill(grads.begin(), grads.end(), 0.0);
            if (++in_batch == config.batch_size) {
                apply(batch_grads, in_batch);
                in_batch = 0;
            }
        }
    }
    if (in_batch > 0) apply(batch_grads, in_batch);

    if (skipped == static_cast<int>(items.size()))
        throw data_error("no usable source", "every sample skipped this epoch");
    if (!state.params.finite())
        throw numeric_error("numeric failure", "non-finite parameters after epoch");

    state.epoch += 1;
    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.skipped_samples = skipped;
    rec.train_loss_per_source.resize(static_cast<std::size_t>(n_sources));
    for (int i = 0; i < n_sources; ++i)
        if (counts[static_cast<std::size_t>(i)] > 0)
            rec.train_loss_per_source[static_cast<std::size_t>(i)] =
                sq_sum[static_cast<std::size_t>(i)] / counts[static_cast<std::size_t>(i)];
    rec.fidelity_scores = state.params.fidelity_scores().values;
    state.history.push_back(std::move(rec));
}

namespace {

// plain mean squared error of fused predictions over the validation split.
// Weighting by the learned fidelity scores would blind model selection to
// the down-weighted sources once the scores concentrate, and it measurably
// picks worse checkpoints; held-out samples count equally instead.
double validation_loss(const Predictor& predictor, const std::vector<SplitIndices>& splits,
                       const TrainConfig& config) {
    const auto& dataset = predictor.dataset();
    ad::Tape tape(predictor.params().store);
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < dataset.num_sources(); ++i) {
        if (config.mode.kind == TrainMode::Kind::single_source && i != config.mode.source)
            continue;
        for (std::size_t j : splits[static_cast<std::size_t>(i)].validation) {
            const auto& sample = dataset.sources[static_cast<std::size_t>(i)].samples[j];
            const MaskedView view = mask_target(dataset, i, j);
            tape.reset();
            const TapedForward f =
                predictor.build(tape, &view, sample.location, sample.timestamp, nullptr);
            if (!f.feasible) continue;
            const double e = tape.value(f.fused) - sample.target;
            sum += e * e;
            ++count;
        }
    }
    if (count == 0) return std::numeric_limits<double>::infinity();
    return sum / static_cast<double>(count);
}

std::vector<int> active_sources_for(const TrainConfig& config) {
    if (config.mode.kind == TrainMode::Kind::single_source) return {config.mode.source};
    return {};
}

FitResult run_fit(const MultiSourceDataset& dataset, const TrainConfig& config, TrainState state) {
    const auto splits = split(dataset, config.fractions, config.seed);
    const Predictor predictor(state.params, dataset, config.k_neighbors,
                              active_sources_for(config));

    while (state.epoch < config.max_epochs) {
        train_epoch(state, predictor, splits, config);
        const double val = validation_loss(predictor, splits, config);
        state.history.back().val_loss = val;
        if (val < state.best_val) {
            state.best_val = val;
            state.best_epoch = state.epoch;
            state.best_params_data = state.params.store.data();
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
            if (state.epochs_since_improvement >= config.patience) break;
        }
    }

    FitResult result{std::move(state.params), std::move(state.history), state.epoch,
                     state.best_epoch, state.best_val};
    if (!state.best_params_data.empty()) result.params.store.data() = state.best_params_data;
    return result;
}

}  // namespace

FitResult fit(const MultiSourceDataset& dataset, const TrainConfig& config) {
    config.validate();
    dataset.validate();
    std::vector<int> dims;
    for (const auto& src : dataset.sources) dims.push_back(src.feature_dim);
    TrainState state;
    state.params = ModelParams::create(dataset.num_sources(), std::move(dims), config.hidden_dim,
                                       config.num_layers, Rng::derive(config.seed, "init"));
    state.shuffle_rng = Rng(Rng::derive(config.seed, "shuffle"));
    return run_fit(dataset, config, std::move(state));
}

FitResult fit_resume(const MultiSourceDataset& dataset, const TrainConfig& config,
                     TrainState state) {
    config.validate();
    dataset.validate();
    return run_fit(dataset, config, std::move(state));
}

namespace {

std::string mode_to_string(const TrainMode& mode) {
    switch (mode.kind) {
        case TrainMode::Kind::full: return "full";
        case TrainMode::Kind::single_source: return "single-source=" + std::to_string(mode.source);
        case TrainMode::Kind::frozen_fidelity: return "frozen-fidelity";
    }
    return "full";
}

}  // namespace

void save_train_state(const TrainState& state, const TrainConfig& config, const std::string& path) {
    CheckpointExtras extras;
    extras.meta["k_neighbors"] = config.k_neighbors;
    extras.meta["mode"] = mode_to_string(config.mode);
    nlohmann::json ts;
    ts["epoch"] = state.epoch;
    // JSON has no infinity; a fresh state's best_val round-trips via null
    ts["best_val"] = std::isfinite(state.best_val) ? nlohmann::json(state.best_val)
                                                   : nlohmann::json(nullptr);
    ts["best_epoch"] = state.best_epoch;
    ts["epochs_since_improvement"] = state.epochs_since_improvement;
    ts["adam_t"] = state.adam.t;
    ts["rng"] = state.shuffle_rng.serialize();
    auto hist = nlohmann::json::array();
    for (const auto& rec : state.history) {
        nlohmann::json r;
        r["epoch"] = rec.epoch;
        r["val_loss"] = rec.val_loss;
        r["skipped_samples"] = rec.skipped_samples;
        r["fidelity_scores"] = rec.fidelity_scores;
        auto losses = nlohmann::json::array();
        for (const auto& l : rec.train_loss_per_source)
            losses.push_back(l ? nlohmann::json(*l) : nlohmann::json(nullptr));
        r["train_loss_per_source"] = std::move(losses);
        hist.push_back(std::move(r));
    }
    ts["history"] = std::move(hist);
    extras.meta["train_state"] = std::move(ts);
    extras.arrays.emplace_back("adam_m", state.adam.m);
    extras.arrays.emplace_back("adam_v", state.adam.v);
    extras.arrays.emplace_back("best_params", state.best_params_data);
    save_checkpoint(state.params, path, extras);
}

TrainState load_train_state(const LoadedCheckpoint& loaded) {
    if (!loaded.extras.meta.contains("train_state"))
        throw data_error("checkpoint error", "checkpoint carries no training state");
    const auto& ts = loaded.extras.meta.at("train_state");

    TrainState state;
    state.params = loaded.params;
    state.epoch = ts.at("epoch").get<int>();
    state.best_val = ts.at("best_val").is_null() ? std::numeric_limits<double>::infinity()
                                                 : ts.at("best_val").get<double>();
    state.best_epoch = ts.at("best_epoch").get<int>();
    state.epochs_since_improvement = ts.at("epochs_since_improvement").get<int>();
    state.adam.t = ts.at("adam_t").get<long long>();
    state.shuffle_rng = Rng::deserialize(ts.at("rng").get<std::string>());
    for (const auto& r : ts.at("history")) {
        EpochRecord rec;
        rec.epoch = r.at("epoch").get<int>();
        rec.val_loss = r.at("val_loss").get<double>();
        rec.skipped_samples = r.at("skipped_samples").get<int>();
        rec.fidelity_scores = r.at("fidelity_scores").get<std::vector<double>>();
        for (const auto& l : r.at("train_loss_per_source"))
            rec.train_loss_per_source.push_back(
                l.is_null() ? std::nullopt : std::optional<double>(l.get<double>()));
        state.history.push_back(std::move(rec));
    }
    const auto* m = loaded.extras.array("adam_m");
    const auto* v = loaded.extras.array("adam_v");
    const auto* best = loaded.extras.array("best_params");
    if (!m || !v || !best) throw data_error("checkpoint error", "missing optimizer arrays");
    state.adam.m = *m;
    state.adam.v = *v;
    state.best_params_data = *best;
    return state;
}

nlohmann::json report_to_json(const FitResult& result, const TrainConfig& config) {
    nlohmann::json j;
    j["epochs_run"] = result.epochs_run;
    j["best_epoch"] = result.best_epoch;
    j["best_val_loss"] = result.best_val;
    j["final_fidelity_scores"] = result.params.fidelity_scores().values;
    j["final_fidelity_logits"] = result.params.fidelity_logits().values;

    auto epochs = nlohmann::json::array();
    for (const auto& rec : result.history) {
        nlohmann::json r;
        r["epoch"] = rec.epoch;
        auto losses = nlohmann::json::array();
        for (const auto& l : rec.train_loss_per_source)
            losses.push_back(l ? nlohmann::json(*l) : nlohmann::json(nullptr));
        r["train_loss_per_source"] = std::move(losses);
        r["val_loss"] = rec.val_loss;
        r["fidelity_scores"] = rec.fidelity_scores;
        r["skipped_samples"] = rec.skipped_samples;
        epochs.push_back(std::move(r));
    }
    j["epochs"] = std::move(epochs);

    nlohmann::json c;
    c["learning_rate"] = config.learning_rate;
    c["max_epochs"] = config.max_epochs;
    c["patience"] = config.patience;
    c["k_neighbors"] = config.k_neighbors;
    c["hidden_dim"] = config.hidden_dim;
    c["num_layers"] = config.num_layers;
    c["batch_size"] = config.batch_size;
    c["strict_order"] = config.strict_order;
    c["seed"] = config.seed;
    c["mode"] = mode_to_string(config.mode);
    j["config"] = std::move(c);
    return j;
}

}  // namespace dmsp
