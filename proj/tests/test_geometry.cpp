#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <doctest.h>

#include "dmsp/error.hpp"
#include "dmsp/geometry.hpp"
#include "dmsp/rng.hpp"

using namespace dmsp;

namespace {

// independent oracle: full sort over all pairwise distances
std::vector<int> knn_oracle(const std::vector<GeoPoint>& pts, int query, int k) {
    std::vector<std::pair<double, int>> d;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        if (i == query) continue;
        const double dx = pts[static_cast<std::size_t>(i)].x - pts[static_cast<std::size_t>(query)].x;
        const double dy = pts[static_cast<std::size_t>(i)].y - pts[static_cast<std::size_t>(query)].y;
        d.emplace_back(dx * dx + dy * dy, i);
    }
    std::sort(d.begin(), d.end());
    std::vector<int> out;
    for (int i = 0; i < k; ++i) out.push_back(d[static_cast<std::size_t>(i)].second);
    return out;
}

std::vector<GeoPoint> random_points(Rng& rng, int n, double extent = 100.0) {
    std::vector<GeoPoint> pts;
    for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(0, extent), rng.uniform(0, extent)});
    return pts;
}

}  // namespace

TEST_CASE("knn_indices collinear distances") {
    const std::vector<GeoPoint> pts{{0, 0}, {1, 0}, {2, 0}, {5, 0}};
    CHECK(knn_indices(pts, 0, 2) == std::vector<int>{1, 2});
}

TEST_CASE("knn_indices distance tie broken by id") {
    const std::vector<GeoPoint> pts{{0, 0}, {1, 0}, {0, 1}};
    CHECK(knn_indices(pts, 0, 2) == std::vector<int>{1, 2});
}

TEST_CASE("knn_indices matches brute-force oracle") {
    Rng rng(42);
    const auto pts = random_points(rng, 50);
    for (int q = 0; q < 50; ++q) CHECK(knn_indices(pts, q, 3) == knn_oracle(pts, q, 3));
}

TEST_CASE("knn_indices error cases") {
    const std::vector<GeoPoint> pts{{0, 0}, {1, 0}, {2, 0}};
    CHECK(knn_indices(pts, 0, 2).size() == 2);  // k == n-1 is allowed
    CHECK_THROWS_WITH_AS(knn_indices(pts, 0, 3), doctest::Contains("insufficient neighbors"),
                         Error);
    const std::vector<GeoPoint> bad{{0, 0}, {std::nan(""), 1}};
    CHECK_THROWS_WITH_AS(knn_indices(bad, 0, 1), doctest::Contains("invalid geometry"), Error);
}

TEST_CASE("grid index equals full scan") {
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 64 + static_cast<int>(rng.below(400));
        auto pts = random_points(rng, n, trial % 2 == 0 ? 1000.0 : 3.0);
        if (trial % 3 == 0) pts[5] = pts[17];  // duplicates
        const GridIndex index(pts);
        for (int probe = 0; probe < 10; ++probe) {
            // queries inside and far outside the extent
            const GeoPoint q{rng.uniform(-500, 1500), rng.uniform(-500, 1500)};
            const int k = 1 + static_cast<int>(rng.below(6));
            const int skip = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            std::vector<std::pair<double, int>> d;
            for (int i = 0; i < n; ++i) {
                if (i == skip) continue;
                d.emplace_back(squared_distance(q, pts[static_cast<std::size_t>(i)]), i);
            }
            std::sort(d.begin(), d.end());
            std::vector<int> expect;
            for (int i = 0; i < k; ++i) expect.push_back(d[static_cast<std::size_t>(i)].second);
            CHECK(index.query(q, k, skip) == expect);
        }
    }
}

TEST_CASE("build_knn_graph edge count is K * V") {
    const std::vector<GeoPoint> samples{{0, 1}, {1, 0}, {1, 1}};
    const std::vector<std::vector<double>> attrs(3, std::vector<double>{0.0});
    const auto g = build_knn_graph({0, 0}, samples, attrs, 1);
    CHECK(g.nodes.size() == 4);
    CHECK(g.edges.size() == 4);
    CHECK(g.target_node == 3);
}

TEST_CASE("build_knn_graph random instance contract") {
    Rng rng(3);
    const auto samples = random_points(rng, 10);
    const auto g = build_knn_graph({50, 50}, samples, {}, 3);
    CHECK(g.nodes.size() == 11);
    CHECK(g.edges.size() == 33);

    std::vector<int> in_degree(11, 0);
    std::vector<GeoPoint> all;
    for (const auto& node : g.nodes) all.push_back(node.pos);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto& edge = g.edges[e];
        CHECK(edge.src != edge.dst);
        in_degree[static_cast<std::size_t>(edge.dst)]++;
        // stored distance matches the endpoints
        const double d = distance(all[static_cast<std::size_t>(edge.src)],
                                  all[static_cast<std::size_t>(edge.dst)]);
        CHECK(g.edge_geometry[e].distance == doctest::Approx(d).epsilon(1e-9));
        CHECK(g.edge_geometry[e].angle >= -std::numbers::pi);
        CHECK(g.edge_geometry[e].angle < std::numbers::pi);
    }
    for (int v = 0; v < 11; ++v) {
        CHECK(in_degree[static_cast<std::size_t>(v)] == 3);
        // neighbor set equals the oracle
        std::set<int> got;
        for (std::size_t e = 0; e < g.edges.size(); ++e)
            if (g.edges[e].dst == v) got.insert(g.edges[e].src);
        const auto expect = knn_oracle(all, v, 3);
        CHECK(got == std::set<int>(expect.begin(), expect.end()));
    }
}

TEST_CASE("build_knn_graph target coincident with a sample") {
    const std::vector<GeoPoint> samples{{0, 0}, {2, 0}};
    const auto g = build_knn_graph({0, 0}, samples, {}, 1);
    CHECK(g.nodes.size() == 3);
    CHECK(g.edges.size() == 3);
    // sample 0 and the target sit on the same spot; each may pick the other
    bool zero_edge = false;
    for (const auto& geo : g.edge_geometry) zero_edge |= geo.distance == 0.0;
    CHECK(zero_edge);
    for (const auto& geo : g.edge_geometry) CHECK(std::isfinite(geo.angle));
}

TEST_CASE("edge_angle east-to-north wraps to -pi/2") {
    // source node at origin with in-neighbors due east and due north; the
    // edge toward east rotates clockwise 3*pi/2 to reach north
    const std::vector<GeoPoint> nbrs{{1, 0}, {0, 1}};
    const std::vector<int> ids{1, 2};
    const double lambda = clockwise_gap_angle({0, 0}, {1, 0}, nbrs, ids, 1);
    CHECK(lambda == doctest::Approx(-std::numbers::pi / 2).epsilon(1e-12));
}

TEST_CASE("edge_angle single neighbor falls back to zero") {
    const std::vector<GeoPoint> samples{{1, 0}};
    const auto g = build_knn_graph({0, 0}, samples, {}, 1);
    for (std::size_t e = 0; e < g.edges.size(); ++e) CHECK(edge_angle(g, e) == 0.0);
}

TEST_CASE("edge_angle matches stored geometry") {
    Rng rng(11);
    const auto samples = random_points(rng, 12);
    const auto g = build_knn_graph({50, 50}, samples, {}, 3);
    for (std::size_t e = 0; e < g.edges.size(); ++e)
        CHECK(edge_angle(g, e) == doctest::Approx(g.edge_geometry[e].angle).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(edge_angle(g, g.edges.size()), doctest::Contains("edge not in graph"),
                         Error);
}

TEST_CASE("edge angles invariant under rigid motion") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        const auto samples = random_points(rng, 15);
        const GeoPoint target{rng.uniform(0, 100), rng.uniform(0, 100)};
        const auto g = build_knn_graph(target, samples, {}, 3);

        const double theta = rng.uniform(0, 2 * std::numbers::pi);
        const double tx = rng.uniform(-50, 50), ty = rng.uniform(-50, 50);
        const auto move = [&](const GeoPoint& p) -> GeoPoint {
            return {p.x * std::cos(theta) - p.y * std::sin(theta) + tx,
                    p.x * std::sin(theta) + p.y * std::cos(theta) + ty};
        };
        std::vector<GeoPoint> moved;
        for (const auto& p : samples) moved.push_back(move(p));
        const auto g2 = build_knn_graph(move(target), moved, {}, 3);

        REQUIRE(g.edges.size() == g2.edges.size());
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            CHECK(g.edges[e].src == g2.edges[e].src);
            CHECK(g.edges[e].dst == g2.edges[e].dst);
            CHECK(g2.edge_geometry[e].distance ==
                  doctest::Approx(g.edge_geometry[e].distance).epsilon(1e-9));
            CHECK(g2.edge_geometry[e].angle ==
                  doctest::Approx(g.edge_geometry[e].angle).epsilon(1e-9));
        }
    }
}

TEST_CASE("wrap_angle range") {
    Rng rng(23);
    for (int i = 0; i < 1000; ++i) {
        const double w = wrap_angle(rng.uniform(-50, 50));
        CHECK(w >= -std::numbers::pi);
        CHECK(w < std::numbers::pi);
    }
    CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
}
