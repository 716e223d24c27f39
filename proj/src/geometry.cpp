#include "dmsp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dmsp/error.hpp"

namespace dmsp {

bool is_finite(const GeoPoint& p) { return std::isfinite(p.x) && std::isfinite(p.y); }

double squared_distance(const GeoPoint& a, const GeoPoint& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

double distance(const GeoPoint& a, const GeoPoint& b) {
    return std::sqrt(squared_distance(a, b));
}

double wrap_angle(double theta) {
    const double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(theta + std::numbers::pi, two_pi);
    if (w < 0.0) w += two_pi;
    return w - std::numbers::pi;
}

namespace {

struct Candidate {
    double d2;
    int id;
    bool operator<(const Candidate& o) const {
        return d2 != o.d2 ? d2 < o.d2 : id < o.id;
    }
};

void check_finite(std::span<const GeoPoint> points) {
    for (const auto& p : points) {
        if (!is_finite(p)) throw data_error("invalid geometry", "non-finite coordinate");
    }
}

std::vector<int> select_k(std::vector<Candidate>& cands, int k) {
    if (static_cast<int>(cands.size()) < k)
        throw data_error("insufficient neighbors",
                         "k=" + std::to_string(k) + " but only " +
                             std::to_string(cands.size()) + " other points");
    std::partial_sort(cands.begin(), cands.begin() + k, cands.end());
    std::vector<int> out(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = cands[static_cast<std::size_t>(i)].id;
    return out;
}

}  // namespace

std::vector<int> knn_indices(std::span<const GeoPoint> points, int query_index, int k) {
    if (k <= 0) throw usage_error("invalid k", "k must be positive");
    check_finite(points);
    const int n = static_cast<int>(points.size());
    if (query_index < 0 || query_index >= n)
        throw usage_error("invalid query", "query index out of range");

    std::vector<Candidate> cands;
    cands.reserve(static_cast<std::size_t>(n > 0 ? n - 1 : 0));
    const GeoPoint q = points[static_cast<std::size_t>(query_index)];
    for (int i = 0; i < n; ++i) {
        if (i == query_index) continue;
        cands.push_back({squared_distance(q, points[static_cast<std::size_t>(i)]), i});
    }
    return select_k(cands, k);
}

GridIndex::GridIndex(std::vector<GeoPoint> points) : points_(std::move(points)) {
    check_finite(points_);
    const std::size_t n = points_.size();
    if (n < 64) return;  // full scan wins at small n

    double xlo = points_[0].x, xhi = points_[0].x;
    double ylo = points_[0].y, yhi = points_[0].y;
    for (const auto& p : points_) {
        xlo = std::min(xlo, p.x); xhi = std::max(xhi, p.x);
        ylo = std::min(ylo, p.y); yhi = std::max(yhi, p.y);
    }
    const double w = xhi - xlo, h = yhi - ylo;
    const double area = w * h;
    if (!(area > 0.0)) return;  // degenerate extent

    // ~2 points per cell on average
    double cell = std::sqrt(2.0 * area / static_cast<double>(n));
    if (!(cell > 0.0)) return;
    int ncx = static_cast<int>(w / cell) + 1;
    int ncy = static_cast<int>(h / cell) + 1;
    const long long total = static_cast<long long>(ncx) * ncy;
    if (total > static_cast<long long>(8 * n + 64)) return;  // extreme aspect ratio

    x0_ = xlo; y0_ = ylo; cell_ = cell; ncx_ = ncx; ncy_ = ncy;
    cells_.assign(static_cast<std::size_t>(total), {});
    for (std::size_t i = 0; i < n; ++i) {
        int cx = static_cast<int>((points_[i].x - x0_) / cell_);
        int cy = static_cast<int>((points_[i].y - y0_) / cell_);
        cx = std::clamp(cx, 0, ncx_ - 1);
        cy = std::clamp(cy, 0, ncy_ - 1);
        cells_[static_cast<std::size_t>(cy) * ncx_ + cx].push_back(static_cast<int>(i));
    }
    use_grid_ = true;
}

std::vector<int> GridIndex::scan_all(const GeoPoint& q, int k, int skip_a, int skip_b) const {
    std::vector<Candidate> cands;
    cands.reserve(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const int id = static_cast<int>(i);
        if (id == skip_a || id == skip_b) continue;
        cands.push_back({squared_distance(q, points_[i]), id});
    }
    return select_k(cands, k);
}

std::vector<int> GridIndex::query(const GeoPoint& q, int k, int skip_a, int skip_b) const {
    if (k <= 0) throw usage_error("invalid k", "k must be positive");
    if (!is_finite(q)) throw data_error("invalid geometry", "non-finite query point");
    if (!use_grid_) return scan_all(q, k, skip_a, skip_b);

    const int qcx = std::clamp(static_cast<int>((q.x - x0_) / cell_), 0, ncx_ - 1);
    const int qcy = std::clamp(static_cast<int>((q.y - y0_) / cell_), 0, ncy_ - 1);
    const int max_ring = std::max({qcx, ncx_ - 1 - qcx, qcy, ncy_ - 1 - qcy});

    std::vector<Candidate> best;  // kept sorted, at most k entries
    best.reserve(static_cast<std::size_t>(k) + 1);
    auto offer = [&](const Candidate& c) {
        if (static_cast<int>(best.size()) == k && !(c < best.back())) return;
        best.insert(std::upper_bound(best.begin(), best.end(), c), c);
        if (static_cast<int>(best.size()) > k) best.pop_back();
    };
    auto scan_cell = [&](int cx, int cy) {
        for (int idx : cells_[static_cast<std::size_t>(cy) * ncx_ + cx]) {
            if (idx == skip_a || idx == skip_b) continue;
            offer({squared_distance(q, points_[static_cast<std::size_t>(idx)]), idx});
        }
    };

    for (int r = 0; r <= max_ring; ++r) {
        const int cx_lo = std::max(qcx - r, 0), cx_hi = std::min(qcx + r, ncx_ - 1);
        const int cy_lo = std::max(qcy - r, 0), cy_hi = std::min(qcy + r, ncy_ - 1);
        if (r == 0) {
            scan_cell(qcx, qcy);
        } else {
            for (int cx = cx_lo; cx <= cx_hi; ++cx) {
                if (qcy - r >= 0) scan_cell(cx, qcy - r);
                if (qcy + r <= ncy_ - 1) scan_cell(cx, qcy + r);
            }
            for (int cy = std::max(cy_lo, qcy - r + 1); cy <= std::min(cy_hi, qcy + r - 1); ++cy) {
                if (qcx - r >= 0) scan_cell(qcx - r, cy);
                if (qcx + r <= ncx_ - 1) scan_cell(qcx + r, cy);
            }
        }
        if (static_cast<int>(best.size()) == k) {
            // Everything beyond the scanned block is at least lb away in one
            // coordinate; a strict bound certifies the current k are final.
            const double bx_lo = x0_ + static_cast<double>(qcx - r) * cell_;
            const double bx_hi = x0_ + static_cast<double>(qcx + r + 1) * cell_;
            const double by_lo = y0_ + static_cast<double>(qcy - r) * cell_;
            const double by_hi = y0_ + static_cast<double>(qcy + r + 1) * cell_;
            const double lb = std::min(std::min(q.x - bx_lo, bx_hi - q.x),
                                       std::min(q.y - by_lo, by_hi - q.y));
            if (lb > 0.0 && lb * lb > best.back().d2) break;
        }
    }

    if (static_cast<int>(best.size()) < k)
        throw data_error("insufficient neighbors",
                         "k=" + std::to_string(k) + " but only " +
                             std::to_string(best.size()) + " other points");
    std::vector<int> out(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = best[static_cast<std::size_t>(i)].id;
    return out;
}

double clockwise_gap_angle(const GeoPoint& u, const GeoPoint& o,
                           std::span<const GeoPoint> neighbors_of_u,
                           std::span<const int> neighbor_ids, int o_id) {
    if (squared_distance(u, o) == 0.0) return 0.0;  // zero-length ray
    const double alpha = std::atan2(o.y - u.y, o.x - u.x);
    const double two_pi = 2.0 * std::numbers::pi;

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < neighbors_of_u.size(); ++i) {
        if (neighbor_ids[i] == o_id) continue;
        const GeoPoint& w = neighbors_of_u[i];
        if (squared_distance(u, w) == 0.0) continue;  // direction undefined
        const double beta = std::atan2(w.y - u.y, w.x - u.x);
        double theta = std::fmod(alpha - beta, two_pi);
        if (theta < 0.0) theta += two_pi;
        best = std::min(best, theta);
    }
    if (!std::isfinite(best)) return 0.0;  // no other usable ray
    return wrap_angle(best);
}

SpatialKnnGraph build_knn_graph(const GeoPoint& target_location,
                                std::span<const GeoPoint> sample_points,
                                std::span<const std::vector<double>> sample_attrs,
                                int k,
                                std::vector<double> target_attrs) {
    if (sample_points.empty()) throw usage_error("invalid graph input", "no samples");
    if (!sample_attrs.empty() && sample_attrs.size() != sample_points.size())
        throw usage_error("invalid graph input", "attribute count mismatch");
    if (!is_finite(target_location)) throw data_error("invalid geometry", "non-finite target");
    check_finite(sample_points);

    SpatialKnnGraph g;
    g.k = k;
    const int n_nodes = static_cast<int>(sample_points.size()) + 1;
    if (k <= 0 || k >= n_nodes)
        throw data_error("insufficient neighbors",
                         "k=" + std::to_string(k) + " with " + std::to_string(n_nodes) + " nodes");

    g.nodes.reserve(static_cast<std::size_t>(n_nodes));
    for (std::size_t i = 0; i < sample_points.size(); ++i) {
        g.nodes.push_back({static_cast<int>(i), sample_points[i],
                           sample_attrs.empty() ? std::vector<double>{} : sample_attrs[i]});
    }
    g.target_node = n_nodes - 1;
    g.nodes.push_back({g.target_node, target_location, std::move(target_attrs)});

    std::vector<GeoPoint> all(static_cast<std::size_t>(n_nodes));
    for (int i = 0; i < n_nodes; ++i) all[static_cast<std::size_t>(i)] = g.nodes[static_cast<std::size_t>(i)].pos;

    std::vector<std::vector<int>> in_neighbors(static_cast<std::size_t>(n_nodes));
    for (int o = 0; o < n_nodes; ++o)
        in_neighbors[static_cast<std::size_t>(o)] = knn_indices(all, o, k);

    g.edges.reserve(static_cast<std::size_t>(n_nodes) * k);
    g.edge_geometry.reserve(static_cast<std::size_t>(n_nodes) * k);
    std::vector<GeoPoint> nbr_pts;
    for (int o = 0; o < n_nodes; ++o) {
        for (int u : in_neighbors[static_cast<std::size_t>(o)]) {
            g.edges.push_back({u, o});
            const auto& u_nbrs = in_neighbors[static_cast<std::size_t>(u)];
            nbr_pts.clear();
            for (int w : u_nbrs) nbr_pts.push_back(all[static_cast<std::size_t>(w)]);
            const double lambda = clockwise_gap_angle(all[static_cast<std::size_t>(u)],
                                                      all[static_cast<std::size_t>(o)],
                                                      nbr_pts, u_nbrs, o);
            g.edge_geometry.push_back({distance(all[static_cast<std::size_t>(u)],
                                                all[static_cast<std::size_t>(o)]),
                                       lambda});
        }
    }
    return g;
}

double edge_angle(const SpatialKnnGraph& graph, std::size_t edge_index) {
    if (edge_index >= graph.edges.size()) throw usage_error("edge not in graph");
    const auto& e = graph.edges[edge_index];
    const GeoPoint u = graph.nodes[static_cast<std::size_t>(e.src)].pos;
    const GeoPoint o = graph.nodes[static_cast<std::size_t>(e.dst)].pos;

    // in-neighbors of the edge source, read back from the stored edge list
    std::vector<GeoPoint> nbr_pts;
    std::vector<int> nbr_ids;
    for (const auto& f : graph.edges) {
        if (f.dst == e.src) {
            nbr_ids.push_back(f.src);
            nbr_pts.push_back(graph.nodes[static_cast<std::size_t>(f.src)].pos);
        }
    }
    return clockwise_gap_angle(u, o, nbr_pts, nbr_ids, e.dst);
}

}  // namespace dmsp
