#pragma once

#include <cstdint>
#include <vector>

#include "dmsp/dataset.hpp"

namespace dmsp {

// Lossy feature release keeps the task from degrading to plain regression:
// the target cannot be recovered from the features alone.
enum class ScrFeatureVariant {
    sum_abs,   // (f1 + f2, |f3|)
    diff_sq,   // (f1 - f2, f3^2)
};

struct ScrConfig {
    int grid_size = 64;         // latent field resolution (G x G)
    double length_scale = 8.0;  // Gaussian smoothing kernel, in grid cells
    int num_fields = 3;
    int n_high = 200;
    int n_low = 2000;
    double noise_sigma = 0.5;   // std of the Gaussian noise on the low-quality source
    int truth_grid_size = 64;
    ScrFeatureVariant high_features = ScrFeatureVariant::sum_abs;
    ScrFeatureVariant low_features = ScrFeatureVariant::sum_abs;

    void validate() const;
};

// Smoothed-white-noise Gaussian random fields on a square grid, standardized
// to zero mean / unit variance, with bilinear interpolation off-grid.
class LatentFields {
public:
    LatentFields(const ScrConfig& config, std::uint64_t seed);

    double value(int field, const GeoPoint& p) const;
    double truth(const GeoPoint& p) const;  // sin(f1) + f2*f3 + 0.5*f1^2
    std::vector<double> features(ScrFeatureVariant variant, const GeoPoint& p) const;
    double extent() const { return static_cast<double>(grid_size_ - 1); }

private:
    int grid_size_;
    std::vector<std::vector<double>> fields_;  // row-major per field
};

struct ScrResult {
    MultiSourceDataset dataset;  // source 0 high quality, source 1 noisy
    TruthGrid truth;
};

ScrResult generate_scr(const ScrConfig& config, std::uint64_t seed);

}  // namespace dmsp
