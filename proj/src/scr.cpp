#include "dmsp/scr.hpp"

#include <algorithm>
#include <cmath>

#include "dmsp/error.hpp"
#include "dmsp/rng.hpp"

namespace dmsp {

void ScrConfig::validate() const {
    if (grid_size < 2 || truth_grid_size < 2) throw usage_error("invalid config", "grid too small");
    if (length_scale <= 0) throw usage_error("invalid config", "length scale must be positive");
    if (num_fields < 3) throw usage_error("invalid config", "need at least 3 latent fields");
    if (n_high < 1 || n_low < 1) throw usage_error("invalid config", "sample counts must be positive");
    if (noise_sigma < 0) throw usage_error("invalid config", "noise sigma must be nonnegative");
}

namespace {

// separable Gaussian blur with edge renormalization
std::vector<double> smooth(const std::vector<double>& in, int g, double ell) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * ell)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int d = -radius; d <= radius; ++d)
        kernel[static_cast<std::size_t>(d + radius)] =
            std::exp(-0.5 * static_cast<double>(d) * static_cast<double>(d) / (ell * ell));

    std::vector<double> tmp(in.size()), out(in.size());
    for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int d = -radius; d <= radius; ++d) {
                const int xx = x + d;
                if (xx < 0 || xx >= g) continue;
                const double w = kernel[static_cast<std::size_t>(d + radius)];
                acc += w * in[static_cast<std::size_t>(y) * g + xx];
                wsum += w;
            }
            tmp[static_cast<std::size_t>(y) * g + x] = acc / wsum;
        }
    }
    for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int d = -radius; d <= radius; ++d) {
                const int yy = y + d;
                if (yy < 0 || yy >= g) continue;
                const double w = kernel[static_cast<std::size_t>(d + radius)];
                acc += w * tmp[static_cast<std::size_t>(yy) * g + x];
                wsum += w;
            }
            out[static_cast<std::size_t>(y) * g + x] = acc / wsum;
        }
    }
    return out;
}

void standardize(std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double sd = std::sqrt(var);
    for (double& x : v) x = (x - mean) / sd;
}

}  // namespace

LatentFields::LatentFields(const ScrConfig& config, std::uint64_t seed)
    : grid_size_(config.grid_size) {
    Rng rng(Rng::derive(seed, "scr-fields"));
    const std::size_t cells = static_cast<std::size_t>(grid_size_) * static_cast<std::size_t>(grid_size_);
    for (int f = 0; f < config.num_fields; ++f) {
        std::vector<double> noise(cells);
        for (double& v : noise) v = rng.normal();
        auto field = smooth(noise, grid_size_, config.length_scale);
        standardize(field);
        fields_.push_back(std::move(field));
    }
}

double LatentFields::value(int field, const GeoPoint& p) const {
    const auto& grid = fields_[static_cast<std::size_t>(field)];
    const double limit = static_cast<double>(grid_size_ - 1);
    const double x = std::clamp(p.x, 0.0, limit);
    const double y = std::clamp(p.y, 0.0, limit);
    const int x0 = std::min(static_cast<int>(x), grid_size_ - 2);
    const int y0 = std::min(static_cast<int>(y), grid_size_ - 2);
    const double tx = x - static_cast<double>(x0);
    const double ty = y - static_cast<double>(y0);
    const auto at = [&](int xi, int yi) {
        return grid[static_cast<std::size_t>(yi) * grid_size_ + xi];
    };
    return (1 - tx) * (1 - ty) * at(x0, y0) + tx * (1 - ty) * at(x0 + 1, y0) +
           (1 - tx) * ty * at(x0, y0 + 1) + tx * ty * at(x0 + 1, y0 + 1);
}

double LatentFields::truth(const GeoPoint& p) const {
    const double f1 = value(0, p), f2 = value(1, p), f3 = value(2, p);
    return std::sin(f1) + f2 * f3 + 0.5 * f1 * f1;
}

std::vector<double> LatentFields::features(ScrFeatureVariant variant, const GeoPoint& p) const {
    const double f1 = value(0, p), f2 = value(1, p), f3 = value(2, p);
    switch (variant) {
        case ScrFeatureVariant::sum_abs: return {f1 + f2, std::abs(f3)};
        case ScrFeatureVariant::diff_sq: return {f1 - f2, f3 * f3};
    }
    throw usage_error("invalid config", "unknown feature variant");
}

ScrResult generate_scr(const ScrConfig& config, std::uint64_t seed) {
    config.validate();
    const LatentFields fields(config, seed);
    const double extent = fields.extent();

    Rng loc_rng(Rng::derive(seed, "scr-locations"));
    Rng noise_rng(Rng::derive(seed, "scr-noise"));

    ScrResult result;
    const auto make_source = [&](int id, const char* name, int n, ScrFeatureVariant variant,
                                 double sigma) {
        SourceDataset src;
        src.source_id = id;
        src.name = name;
        src.feature_dim = 2;
        src.samples.reserve(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            Sample s;
            s.location = {loc_rng.uniform(0.0, extent), loc_rng.uniform(0.0, extent)};
            s.features = fields.features(variant, s.location);
            s.target = fields.truth(s.location) + (sigma > 0 ? sigma * noise_rng.normal() : 0.0);
            s.timestamp = 0;
            src.samples.push_back(std::move(s));
        }
        return src;
    };
    result.dataset.sources.push_back(
        make_source(0, "high_quality", config.n_high, config.high_features, 0.0));
    result.dataset.sources.push_back(
        make_source(1, "low_quality", config.n_low, config.low_features, config.noise_sigma));

    TruthGrid& grid = result.truth;
    grid.size = config.truth_grid_size;
    grid.x_lo = grid.y_lo = 0.0;
    grid.x_hi = grid.y_hi = extent;
    grid.values.resize(static_cast<std::size_t>(grid.size) * static_cast<std::size_t>(grid.size));
    for (int iy = 0; iy < grid.size; ++iy) {
        for (int ix = 0; ix < grid.size; ++ix) {
            const GeoPoint p{extent * static_cast<double>(ix) / static_cast<double>(grid.size - 1),
                             extent * static_cast<double>(iy) / static_cast<double>(grid.size - 1)};
            grid.values[static_cast<std::size_t>(iy) * grid.size + ix] = fields.truth(p);
        }
    }
    return result;
}

}  // namespace dmsp
