#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmsp/geometry.hpp"

namespace dmsp {

struct Sample {
    GeoPoint location;
    std::vector<double> features;
    double target = 0.0;
    std::int64_t timestamp = 0;
};

struct SourceDataset {
    int source_id = 0;
    int feature_dim = 0;
    std::string name;
    std::vector<Sample> samples;
};

struct MultiSourceDataset {
    std::vector<SourceDataset> sources;

    int num_sources() const { return static_cast<int>(sources.size()); }
    void validate() const;
};

// Read-only view hiding one sample's target. Everything else passes through;
// the hidden value is unreachable via any accessor.
class MaskedView {
public:
    MaskedView(const MultiSourceDataset& base, int masked_source, std::size_t masked_index);

    const MultiSourceDataset& base() const { return *base_; }
    int masked_source() const { return masked_source_; }
    std::size_t masked_index() const { return masked_index_; }

    bool is_masked(int source, std::size_t index) const {
        return source == masked_source_ && index == masked_index_;
    }

    // nullopt for the masked sample
    std::optional<double> target(int source, std::size_t index) const;

    // model input channels: (value, mask_flag); masked -> (0, 1)
    std::pair<double, double> target_channel(int source, std::size_t index) const;

private:
    const MultiSourceDataset* base_;
    int masked_source_;
    std::size_t masked_index_;
};

MaskedView mask_target(const MultiSourceDataset& dataset, int source_id, std::size_t index);

// Indices of the source's samples carrying the given timestamp, in storage order.
std::vector<std::size_t> simultaneous_samples(const SourceDataset& source, std::int64_t timestamp);

struct SplitIndices {
    std::vector<std::size_t> train, validation, test;
};

struct SplitFractions {
    double train = 0.6, validation = 0.2, test = 0.2;
};

// Per-source disjoint exhaustive shuffled splits, deterministic under seed.
std::vector<SplitIndices> split(const MultiSourceDataset& dataset, SplitFractions fractions,
                                std::uint64_t seed);

// CSV schema: header "source_id,timestamp,x,y,target,f0,...,fM"; sources with
// fewer features leave trailing cells empty.
MultiSourceDataset load_csv(const std::string& path);
void save_csv(const MultiSourceDataset& dataset, const std::string& path);

struct TruthGrid {
    int size = 0;              // lattice is size x size
    double x_lo = 0, x_hi = 0;
    double y_lo = 0, y_hi = 0;
    std::vector<double> values;  // row-major, y-major

    double nearest(const GeoPoint& p) const;
};

TruthGrid load_truth_csv(const std::string& path);
void save_truth_csv(const TruthGrid& grid, const std::string& path);

}  // namespace dmsp
