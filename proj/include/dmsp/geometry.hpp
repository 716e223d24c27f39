#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dmsp {

struct GeoPoint {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const GeoPoint&) const = default;
};

bool is_finite(const GeoPoint& p);
double squared_distance(const GeoPoint& a, const GeoPoint& b);
double distance(const GeoPoint& a, const GeoPoint& b);

// Per-edge spatial inputs of the relationship encoder: distance l >= 0 and
// angle lambda in [-pi, pi).
struct EdgeGeometry {
    double distance = 0.0;
    double angle = 0.0;
};

struct GraphNode {
    int id = 0;
    GeoPoint pos;
    std::vector<double> attrs;
};

struct GraphEdge {
    int src = 0;
    int dst = 0;
};

// Directed KNN graph over the target location and the simultaneous samples of
// one source. Every node has exactly k incoming edges, so |E| == k * |V|.
struct SpatialKnnGraph {
    std::vector<GraphNode> nodes;   // node id == index
    std::vector<GraphEdge> edges;   // grouped by destination, k per node
    std::vector<EdgeGeometry> edge_geometry;  // parallel to edges
    int k = 0;
    int target_node = 0;
};

// Indices of the k nearest points to points[query_index], excluding the query
// itself. Sorted ascending by distance, ties broken by smaller index.
std::vector<int> knn_indices(std::span<const GeoPoint> points, int query_index, int k);

// Uniform-grid spatial index with exact k-nearest queries. Matches
// knn_indices ordering (distance, then index) on every input.
class GridIndex {
public:
    explicit GridIndex(std::vector<GeoPoint> points);

    // k nearest stored points to q. skip_a/skip_b remove stored points from
    // consideration (pass -1 for none). Throws "insufficient neighbors" when
    // fewer than k candidates remain.
    std::vector<int> query(const GeoPoint& q, int k, int skip_a = -1, int skip_b = -1) const;

    std::size_t size() const { return points_.size(); }
    const GeoPoint& point(int i) const { return points_[static_cast<std::size_t>(i)]; }

private:
    std::vector<GeoPoint> points_;
    std::vector<std::vector<int>> cells_;  // dense ncx * ncy buckets
    double x0_ = 0.0, y0_ = 0.0;
    double cell_ = 1.0;
    int ncx_ = 1, ncy_ = 1;
    bool use_grid_ = false;

    std::vector<int> scan_all(const GeoPoint& q, int k, int skip_a, int skip_b) const;
};

// Signed clockwise rotation from the ray u->o to the nearest subsequent
// neighbor ray of u, wrapped into [-pi, pi). neighbors are u's in-neighbors;
// o is skipped if present. Falls back to 0 when no other usable ray exists.
double clockwise_gap_angle(const GeoPoint& u, const GeoPoint& o,
                           std::span<const GeoPoint> neighbors_of_u,
                           std::span<const int> neighbor_ids, int o_id);

// Graph built from the target location plus sample locations. Samples become
// nodes 0..n-1 in input order; the target is the last node and carries
// target_attrs (the masked-attribute slot filled by the caller).
SpatialKnnGraph build_knn_graph(const GeoPoint& target_location,
                                std::span<const GeoPoint> sample_points,
                                std::span<const std::vector<double>> sample_attrs,
                                int k,
                                std::vector<double> target_attrs = {});

// Angle feature of one stored edge, recomputed from the graph.
double edge_angle(const SpatialKnnGraph& graph, std::size_t edge_index);

double wrap_angle(double theta);  // into [-pi, pi)

}  // namespace dmsp
