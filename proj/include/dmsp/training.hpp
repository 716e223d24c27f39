#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dmsp/checkpoint.hpp"
#include "dmsp/dataset.hpp"
#include "dmsp/model.hpp"
#include "dmsp/rng.hpp"

namespace dmsp {

struct TrainMode {
    enum class Kind { full, single_source, frozen_fidelity };
    Kind kind = Kind::full;
    int source = -1;  // for single_source

    static TrainMode full() { return {}; }
    static TrainMode single(int source) { return {Kind::single_source, source}; }
    static TrainMode frozen() { return {Kind::frozen_fidelity, -1}; }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int max_epochs = 500;
    int patience = 20;
    int k_neighbors = 3;
    int hidden_dim = 16;
    int num_layers = 2;
    int batch_size = 1;        // per-sample updates by default
    bool strict_order = false; // iterate sources then samples in index order
    std::uint64_t seed = 0;
    TrainMode mode;
    SplitFractions fractions;

    void validate() const;
};

struct AdamState {
    std::vector<double> m, v;
    long long t = 0;
};

// In-place Adam update with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).
void adam_step(std::span<double> params, std::span<const double> gradients, AdamState& state,
               double learning_rate);

// Per-sample squared error; RMSE's root is applied at metric time.
double loss(double prediction, double target);

struct EpochRecord {
    int epoch = 0;
    std::vector<std::optional<double>> train_loss_per_source;  // mean squared error
    double val_loss = 0.0;
    std::vector<double> fidelity_scores;
    int skipped_samples = 0;
};

struct TrainState {
    ModelParams params;
    AdamState adam;
    int epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_since_improvement = 0;
    std::vector<double> best_params_data;
    Rng shuffle_rng{0};
    std::vector<EpochRecord> history;
};

// Exact gradients of the Algorithm-style weighted loss C_i * (fused - y)^2
// for one masked sample, over every parameter including the fidelity logits.
// Gradients accumulate into `gradients` (sized like params.store).
// Returns the loss, or nullopt when no source is usable for the sample.
std::optional<double> compute_gradients(const Predictor& predictor, int source, std::size_t index,
                                        std::span<double> gradients);
std::optional<double> sample_loss(const Predictor& predictor, int source, std::size_t index);

// One pass over the training split: mask, forward, weighted loss, optimizer
// step per sample (or per batch). Appends an EpochRecord to state.history.
void train_epoch(TrainState& state, const Predictor& predictor,
                 const std::vector<SplitIndices>& splits, const TrainConfig& config);

struct FitResult {
    ModelParams params;  // best-validation parameters
    std::vector<EpochRecord> history;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val = 0.0;
};

FitResult fit(const MultiSourceDataset& dataset, const TrainConfig& config);

// Resume support: full training state round-trips through a checkpoint.
void save_train_state(const TrainState& state, const TrainConfig& config, const std::string& path);
TrainState load_train_state(const LoadedCheckpoint& loaded);
FitResult fit_resume(const MultiSourceDataset& dataset, const TrainConfig& config,
                     TrainState state);

nlohmann::json report_to_json(const FitResult& result, const TrainConfig& config);

}  // namespace dmsp
