#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "dmsp/autodiff.hpp"
#include "dmsp/dataset.hpp"
#include "dmsp/fidelity.hpp"
#include "dmsp/geometry.hpp"

namespace dmsp {

// All weights of the network: one shared edge encoder, per-(source, layer)
// graph convolution blocks, one shared 3-layer decoder, and the fidelity
// logits. Everything lives in one flat ParamStore so the optimizer and the
// checkpoint writer can treat parameters uniformly.
struct ModelParams {
    int num_sources = 0;
    int hidden_dim = 16;
    int num_layers = 2;
    std::vector<int> feature_dims;

    ad::ParamStore store;
    int encoder_block = -1;
    std::vector<std::vector<std::array<int, 2>>> conv_blocks;  // [source][layer] -> {msg, upd}
    std::array<int, 3> decoder_blocks{-1, -1, -1};
    int fidelity_block = -1;

    static ModelParams create(int num_sources, std::vector<int> feature_dims, int hidden_dim,
                              int num_layers, std::uint64_t seed);

    // width of node embeddings entering conv layer `layer` of `source`
    int layer_input_width(int source, int layer) const {
        return layer == 0 ? feature_dims[static_cast<std::size_t>(source)] + 2 : hidden_dim;
    }

    FidelityLogits fidelity_logits() const;
    void set_fidelity_logits(const FidelityLogits& logits);
    FidelityScores fidelity_scores() const { return scores_from_logits(fidelity_logits()); }

    bool finite() const;
};

// ---- operations over explicit graphs ----

std::vector<double> encode_edge(const ModelParams& params, const EdgeGeometry& geometry);

// One message-passing layer over every node of the graph:
//   h_o' = tanh(W_upd [h_o ; mean_k tanh(W_msg [h_k ; enc(l,lambda)])])
std::vector<std::vector<double>> graph_conv_layer(const ModelParams& params, int source_id,
                                                  int layer,
                                                  std::span<const std::vector<double>> node_features,
                                                  const SpatialKnnGraph& graph);

double decode(const ModelParams& params, std::span<const double> node_embedding);

// ---- fused prediction ----

struct SourcePrediction {
    std::vector<std::optional<double>> per_source;
    std::vector<double> weights;  // fusion weights actually used; 0 for absent sources
    double fused = 0.0;
    bool all_sources_used = true;
};

// Tape node handles for one forward pass; loss nodes are set only when a
// supervision target was provided.
struct TapedForward {
    int fused = -1;
    int weighted_loss = -1;
    int squared_error = -1;
    std::vector<int> per_source;  // -1 for skipped sources
    std::vector<double> weights;
    bool all_sources_used = true;
    bool feasible = false;
};

// Immutable per-(source, timestamp) sample groups and spatial indexes for a
// dataset. Forward passes only touch the L-hop in-neighborhood of the query,
// so per-prediction cost stays flat as datasets grow.
class Predictor {
public:
    // active_sources restricts the forward pass to a subset of sources (the
    // single-source ablation); empty means all sources participate.
    Predictor(const ModelParams& params, const MultiSourceDataset& dataset, int k_neighbors,
              std::vector<int> active_sources = {});

    const ModelParams& params() const { return *params_; }
    const MultiSourceDataset& dataset() const { return *data_; }
    int k() const { return k_; }

    SourcePrediction predict(const GeoPoint& location, std::int64_t timestamp) const;
    SourcePrediction predict_masked(const MaskedView& view) const;

    // Forward on an externally owned tape (training path). Returns
    // feasible=false when no source has enough simultaneous samples.
    TapedForward build(ad::Tape& tape, const MaskedView* view, const GeoPoint& location,
                       std::int64_t timestamp, const double* supervision_target) const;

private:
    struct Group {
        std::vector<std::size_t> sample_idx;  // ascending dataset indices
        GridIndex index;
    };

    const ModelParams* params_;
    const MultiSourceDataset* data_;
    int k_;
    std::vector<bool> active_;
    std::vector<std::map<std::int64_t, Group>> groups_;

    int build_source(ad::Tape& tape, int source, const Group& group, const MaskedView* view,
                     const GeoPoint& location) const;
};

// One-shot convenience wrappers over a throwaway Predictor.
SourcePrediction forward(const ModelParams& params, const MultiSourceDataset& dataset,
                         const GeoPoint& target_location, std::int64_t timestamp, int k_neighbors);
SourcePrediction forward(const ModelParams& params, const MaskedView& view, int k_neighbors);

}  // namespace dmsp
