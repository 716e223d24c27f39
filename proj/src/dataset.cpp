#include "dmsp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmsp/error.hpp"
#include "dmsp/rng.hpp"

namespace dmsp {

void MultiSourceDataset::validate() const {
    if (sources.empty()) throw data_error("schema violation", "dataset has no sources");
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto& src = sources[i];
        if (src.source_id != static_cast<int>(i))
            throw data_error("schema violation", "source ids must be 0..N-1 without gaps");
        if (src.samples.empty())
            throw data_error("schema violation", "source " + std::to_string(i) + " is empty");
        for (const auto& s : src.samples) {
            if (static_cast<int>(s.features.size()) != src.feature_dim)
                throw data_error("ragged features", "source " + std::to_string(i));
            if (!is_finite(s.location) || !std::isfinite(s.target))
                throw data_error("parse error", "non-finite value in source " + std::to_string(i));
            for (double f : s.features)
                if (!std::isfinite(f))
                    throw data_error("parse error", "non-finite feature in source " + std::to_string(i));
        }
    }
}

MaskedView::MaskedView(const MultiSourceDataset& base, int masked_source, std::size_t masked_index)
    : base_(&base), masked_source_(masked_source), masked_index_(masked_index) {
    if (masked_source < 0 || masked_source >= base.num_sources() ||
        masked_index >= base.sources[static_cast<std::size_t>(masked_source)].samples.size())
        throw usage_error("invalid mask target");
}

std::optional<double> MaskedView::target(int source, std::size_t index) const {
    if (is_masked(source, index)) return std::nullopt;
    return base_->sources[static_cast<std::size_t>(source)].samples[index].target;
}

std::pair<double, double> MaskedView::target_channel(int source, std::size_t index) const {
    if (is_masked(source, index)) return {0.0, 1.0};
    return {base_->sources[static_cast<std::size_t>(source)].samples[index].target, 0.0};
}

MaskedView mask_target(const MultiSourceDataset& dataset, int source_id, std::size_t index) {
    return MaskedView(dataset, source_id, index);
}

std::vector<std::size_t> simultaneous_samples(const SourceDataset& source, std::int64_t timestamp) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < source.samples.size(); ++j)
        if (source.samples[j].timestamp == timestamp) out.push_back(j);
    return out;
}

std::vector<SplitIndices> split(const MultiSourceDataset& dataset, SplitFractions fractions,
                                std::uint64_t seed) {
    const double total = fractions.train + fractions.validation + fractions.test;
    if (std::abs(total - 1.0) > 1e-9)
        throw usage_error("invalid fractions", "fractions must sum to 1");
    if (fractions.train < 0 || fractions.validation < 0 || fractions.test < 0)
        throw usage_error("invalid fractions", "fractions must be nonnegative");

    std::vector<SplitIndices> out;
    for (const auto& src : dataset.sources) {
        const std::size_t n = src.samples.size();
        if (n < 3)
            throw data_error("split infeasible",
                             "source " + std::to_string(src.source_id) + " has " +
                                 std::to_string(n) + " samples");
        // largest-remainder apportionment, then guarantee nonempty parts
        const double ideals[3] = {fractions.train * static_cast<double>(n),
                                  fractions.validation * static_cast<double>(n),
                                  fractions.test * static_cast<double>(n)};
        std::size_t counts[3];
        double rema[3];
        std::size_t used = 0;
        for (int p = 0; p < 3; ++p) {
            counts[p] = static_cast<std::size_t>(ideals[p]);
            rema[p] = ideals[p] - static_cast<double>(counts[p]);
            used += counts[p];
        }
        for (std::size_t left = n - used; left > 0; --left) {
            int best = 0;
            for (int p = 1; p < 3; ++p)
                if (rema[p] > rema[best]) best = p;
            counts[best]++;
            rema[best] = -1.0;
        }
        for (int p = 0; p < 3; ++p) {
            if (counts[p] == 0) {
                int big = 0;
                for (int q = 1; q < 3; ++q)
                    if (counts[q] > counts[big]) big = q;
                counts[big]--;
                counts[p]++;
            }
        }

        std::vector<std::size_t> order(n);
        for (std::size_t j = 0; j < n; ++j) order[j] = j;
        Rng rng(Rng::derive(seed, "split") ^ static_cast<std::uint64_t>(src.source_id + 1));
        rng.shuffle(order);

        SplitIndices idx;
        idx.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(counts[0]));
        idx.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(counts[0]),
                              order.begin() + static_cast<std::ptrdiff_t>(counts[0] + counts[1]));
        idx.test.assign(order.begin() + static_cast<std::ptrdiff_t>(counts[0] + counts[1]), order.end());
        out.push_back(std::move(idx));
    }
    return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_double(const std::string& cell, std::size_t row) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0')
        throw data_error("parse error", "row " + std::to_string(row) + ": '" + cell + "'");
    return v;
}

std::int64_t parse_int(const std::string& cell, std::size_t row) {
    char* end = nullptr;
    const long long v = std::strtoll(cell.c_str(), &end, 10);
    if (end == cell.c_str() || *end != '\0')
        throw data_error("parse error", "row " + std::to_string(row) + ": '" + cell + "'");
    return v;
}

void format_double(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

}  // namespace

MultiSourceDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("file error", "cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw data_error("schema violation", "empty file");
    const auto header = split_line(line);
    const char* required[5] = {"source_id", "timestamp", "x", "y", "target"};
    for (int c = 0; c < 5; ++c) {
        if (static_cast<int>(header.size()) <= c || header[static_cast<std::size_t>(c)] != required[c])
            throw data_error("schema violation", std::string("missing column ") + required[c]);
    }
    const std::size_t max_features = header.size() - 5;
    for (std::size_t c = 5; c < header.size(); ++c) {
        if (header[c] != "f" + std::to_string(c - 5))
            throw data_error("schema violation", "feature columns must be f0..fM in order");
    }

    std::map<int, SourceDataset> by_id;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size())
            throw data_error("schema violation",
                             "row " + std::to_string(row) + " has " +
                                 std::to_string(cells.size()) + " cells, expected " +
                                 std::to_string(header.size()));
        const int source_id = static_cast<int>(parse_int(cells[0], row));
        Sample s;
        s.timestamp = parse_int(cells[1], row);
        s.location = {parse_double(cells[2], row), parse_double(cells[3], row)};
        s.target = parse_double(cells[4], row);
        std::size_t p = 0;
        while (p < max_features && !cells[5 + p].empty()) {
            s.features.push_back(parse_double(cells[5 + p], row));
            ++p;
        }
        for (std::size_t q = p; q < max_features; ++q) {
            if (!cells[5 + q].empty())
                throw data_error("ragged features",
                                 "row " + std::to_string(row) + ": gap before f" + std::to_string(q));
        }

        auto [it, inserted] = by_id.try_emplace(source_id);
        if (inserted) {
            it->second.source_id = source_id;
            it->second.feature_dim = static_cast<int>(s.features.size());
            it->second.name = "source_" + std::to_string(source_id);
        } else if (static_cast<int>(s.features.size()) != it->second.feature_dim) {
            throw data_error("ragged features",
                             "row " + std::to_string(row) + ": source " + std::to_string(source_id) +
                                 " expects " + std::to_string(it->second.feature_dim) + " features");
        }
        it->second.samples.push_back(std::move(s));
    }
    if (by_id.empty()) throw data_error("schema violation", "no data rows");

    MultiSourceDataset out;
    int expect = 0;
    for (auto& [id, src] : by_id) {
        if (id != expect)
            throw data_error("schema violation", "source ids must be 0..N-1 without gaps");
        ++expect;
        out.sources.push_back(std::move(src));
    }
    out.validate();
    return out;
}

void save_csv(const MultiSourceDataset& dataset, const std::string& path) {
    dataset.validate();
    int max_p = 0;
    for (const auto& src : dataset.sources) max_p = std::max(max_p, src.feature_dim);

    std::string buf = "source_id,timestamp,x,y,target";
    for (int f = 0; f < max_p; ++f) buf += ",f" + std::to_string(f);
    buf += "\n";
    for (const auto& src : dataset.sources) {
        for (const auto& s : src.samples) {
            buf += std::to_string(src.source_id);
            buf += ',';
            buf += std::to_string(s.timestamp);
            buf += ',';
            format_double(buf, s.location.x);
            buf += ',';
            format_double(buf, s.location.y);
            buf += ',';
            format_double(buf, s.target);
            for (int f = 0; f < max_p; ++f) {
                buf += ',';
                if (f < src.feature_dim) format_double(buf, s.features[static_cast<std::size_t>(f)]);
            }
            buf += '\n';
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("file error", "cannot write " + path);
    out << buf;
}

double TruthGrid::nearest(const GeoPoint& p) const {
    const auto snap = [](double v, double lo, double hi, int n) {
        if (n == 1 || hi <= lo) return 0;
        const double t = (v - lo) / (hi - lo) * static_cast<double>(n - 1);
        return std::clamp(static_cast<int>(std::lround(t)), 0, n - 1);
    };
    const int ix = snap(p.x, x_lo, x_hi, size);
    const int iy = snap(p.y, y_lo, y_hi, size);
    return values[static_cast<std::size_t>(iy) * static_cast<std::size_t>(size) +
                  static_cast<std::size_t>(ix)];
}

TruthGrid load_truth_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("file error", "cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || split_line(line) != std::vector<std::string>{"x", "y", "truth"})
        throw data_error("schema violation", "truth grid header must be x,y,truth");

    std::vector<double> xs, ys, vs;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != 3) throw data_error("schema violation", "row " + std::to_string(row));
        xs.push_back(parse_double(cells[0], row));
        ys.push_back(parse_double(cells[1], row));
        vs.push_back(parse_double(cells[2], row));
    }
    const auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(vs.size()))));
    if (n * n != vs.size() || n == 0)
        throw data_error("schema violation", "truth grid must be square");

    TruthGrid g;
    g.size = static_cast<int>(n);
    g.values = std::move(vs);
    g.x_lo = *std::min_element(xs.begin(), xs.end());
    g.x_hi = *std::max_element(xs.begin(), xs.end());
    g.y_lo = *std::min_element(ys.begin(), ys.end());
    g.y_hi = *std::max_element(ys.begin(), ys.end());
    return g;
}

void save_truth_csv(const TruthGrid& grid, const std::string& path) {
    std::string buf = "x,y,truth\n";
    for (int iy = 0; iy < grid.size; ++iy) {
        for (int ix = 0; ix < grid.size; ++ix) {
            const double fx = grid.size == 1 ? 0.0
                                             : static_cast<double>(ix) / static_cast<double>(grid.size - 1);
            const double fy = grid.size == 1 ? 0.0
                                             : static_cast<double>(iy) / static_cast<double>(grid.size - 1);
            format_double(buf, grid.x_lo + fx * (grid.x_hi - grid.x_lo));
            buf += ',';
            format_double(buf, grid.y_lo + fy * (grid.y_hi - grid.y_lo));
            buf += ',';
            format_double(buf, grid.values[static_cast<std::size_t>(iy) * static_cast<std::size_t>(grid.size) +
                                           static_cast<std::size_t>(ix)]);
            buf += '\n';
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("file error", "cannot write " + path);
    out << buf;
}

}  // namespace dmsp
