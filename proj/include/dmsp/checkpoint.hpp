#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dmsp/model.hpp"

namespace dmsp {

// Extra payload carried alongside the model weights (optimizer state for
// resume, k_neighbors, etc.). meta holds small scalars; arrays hold bulk
// doubles written after the parameter block.
struct CheckpointExtras {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, std::vector<double>>> arrays;

    const std::vector<double>* array(const std::string& name) const;
};

// Binary layout: magic "DMSPCKP1", u64 manifest length, JSON manifest,
// little-endian f64 payload (parameters, then extra arrays in manifest
// order). Save/load round-trips bit-exactly.
void save_checkpoint(const ModelParams& params, const std::string& path,
                     const CheckpointExtras& extras = {});

struct LoadedCheckpoint {
    ModelParams params;
    CheckpointExtras extras;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dmsp
