#include "dmsp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dmsp/error.hpp"
#include "dmsp/rng.hpp"

namespace dmsp {

ModelParams ModelParams::create(int num_sources, std::vector<int> feature_dims, int hidden_dim,
                                int num_layers, std::uint64_t seed) {
    if (num_sources < 1 || hidden_dim < 1 || num_layers < 1)
        throw usage_error("invalid config", "model dimensions must be positive");
    if (static_cast<int>(feature_dims.size()) != num_sources)
        throw usage_error("dimension error", "feature_dims size mismatch");

    ModelParams p;
    p.num_sources = num_sources;
    p.hidden_dim = hidden_dim;
    p.num_layers = num_layers;
    p.feature_dims = std::move(feature_dims);

    const int h = hidden_dim;
    p.encoder_block = p.store.add_affine("encoder", h, 2);
    p.conv_blocks.resize(static_cast<std::size_t>(num_sources));
    for (int i = 0; i < num_sources; ++i) {
        for (int l = 0; l < num_layers; ++l) {
            const int in = p.layer_input_width(i, l);
            const std::string stem = "conv/s" + std::to_string(i) + "/l" + std::to_string(l);
            const int msg = p.store.add_affine(stem + "/msg", h, in + h);
            const int upd = p.store.add_affine(stem + "/upd", h, in + h);
            p.conv_blocks[static_cast<std::size_t>(i)].push_back({msg, upd});
        }
    }
    p.decoder_blocks[0] = p.store.add_affine("decoder/0", h, h);
    p.decoder_blocks[1] = p.store.add_affine("decoder/1", h, h);
    p.decoder_blocks[2] = p.store.add_affine("decoder/2", 1, h);
    p.fidelity_block = p.store.add_vector("fidelity_logits", num_sources);

    Rng rng(Rng::derive(seed, "model-init"));
    for (const auto& blk : p.store.blocks()) {
        if (blk.kind == ad::ParamStore::BlockKind::vector) continue;  // logits start at zero
        const double bound = 1.0 / std::sqrt(static_cast<double>(blk.in));
        auto vals = p.store.values(p.store.block_id(blk.name));
        for (double& v : vals) v = rng.uniform(-bound, bound);
    }
    return p;
}

FidelityLogits ModelParams::fidelity_logits() const {
    const auto v = store.values(fidelity_block);
    return {std::vector<double>(v.begin(), v.end())};
}

void ModelParams::set_fidelity_logits(const FidelityLogits& logits) {
    auto v = store.values(fidelity_block);
    if (logits.values.size() != v.size()) throw usage_error("dimension error", "logits length");
    std::copy(logits.values.begin(), logits.values.end(), v.begin());
}

bool ModelParams::finite() const {
    for (double v : store.data())
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

int tape_encode_edge(ad::Tape& tape, const ModelParams& p, const EdgeGeometry& geo) {
    if (!std::isfinite(geo.distance) || !std::isfinite(geo.angle))
        throw data_error("invalid geometry", "non-finite edge geometry");
    const double raw[2] = {geo.distance, geo.angle};
    return tape.tanh(tape.affine(tape.leaf({raw, 2}), p.encoder_block));
}

int tape_decode(ad::Tape& tape, const ModelParams& p, int embedding) {
    int h = tape.tanh(tape.affine(embedding, p.decoder_blocks[0]));
    h = tape.tanh(tape.affine(h, p.decoder_blocks[1]));
    return tape.affine(h, p.decoder_blocks[2]);  // linear regression head
}

int tape_node_update(ad::Tape& tape, const ModelParams& p, int source, int layer, int h_self,
                     std::span<const int> h_neighbors, std::span<const int> edge_embs) {
    const auto [msg_blk, upd_blk] =
        p.conv_blocks[static_cast<std::size_t>(source)][static_cast<std::size_t>(layer)];
    std::vector<int> msgs;
    msgs.reserve(h_neighbors.size());
    for (std::size_t j = 0; j < h_neighbors.size(); ++j)
        msgs.push_back(tape.tanh(tape.affine(tape.concat(h_neighbors[j], edge_embs[j]), msg_blk)));
    const int agg = tape.mean(msgs);
    return tape.tanh(tape.affine(tape.concat(h_self, agg), upd_blk));
}

}  // namespace

std::vector<double> encode_edge(const ModelParams& params, const EdgeGeometry& geometry) {
    ad::Tape tape(params.store);
    const int out = tape_encode_edge(tape, params, geometry);
    const auto v = tape.values(out);
    return {v.begin(), v.end()};
}

std::vector<std::vector<double>> graph_conv_layer(const ModelParams& params, int source_id,
                                                  int layer,
                                                  std::span<const std::vector<double>> node_features,
                                                  const SpatialKnnGraph& graph) {
    if (source_id < 0 || source_id >= params.num_sources || layer < 0 ||
        layer >= params.num_layers)
        throw usage_error("dimension error", "source/layer out of range");
    if (node_features.size() != graph.nodes.size())
        throw usage_error("dimension error", "feature row count != node count");
    const int want = params.layer_input_width(source_id, layer);
    for (const auto& f : node_features)
        if (static_cast<int>(f.size()) != want)
            throw usage_error("dimension error",
                              "expected width " + std::to_string(want) + ", got " +
                                  std::to_string(f.size()));

    ad::Tape tape(params.store);
    std::vector<int> h(node_features.size());
    for (std::size_t v = 0; v < node_features.size(); ++v) h[v] = tape.leaf(node_features[v]);

    // edges are grouped by destination: k consecutive entries per node
    std::vector<std::vector<double>> out(node_features.size());
    for (std::size_t o = 0; o < graph.nodes.size(); ++o) {
        std::vector<int> nbrs, embs;
        for (std::size_t e = o * static_cast<std::size_t>(graph.k);
             e < (o + 1) * static_cast<std::size_t>(graph.k); ++e) {
            nbrs.push_back(h[static_cast<std::size_t>(graph.edges[e].src)]);
            embs.push_back(tape_encode_edge(tape, params, graph.edge_geometry[e]));
        }
        const int updated = tape_node_update(tape, params, source_id, layer, h[o], nbrs, embs);
        const auto v = tape.values(updated);
        out[o].assign(v.begin(), v.end());
    }
    return out;
}

double decode(const ModelParams& params, std::span<const double> node_embedding) {
    if (static_cast<int>(node_embedding.size()) != params.hidden_dim)
        throw usage_error("dimension error", "embedding width != hidden_dim");
    ad::Tape tape(params.store);
    return tape.value(tape_decode(tape, params, tape.leaf(node_embedding)));
}

Predictor::Predictor(const ModelParams& params, const MultiSourceDataset& dataset, int k_neighbors,
                     std::vector<int> active_sources)
    : params_(&params), data_(&dataset), k_(k_neighbors) {
    if (k_ < 1) throw usage_error("invalid config", "k must be positive");
    if (params.num_sources != dataset.num_sources())
        throw usage_error("dimension error", "model/dataset source count mismatch");
    active_.assign(static_cast<std::size_t>(dataset.num_sources()), active_sources.empty());
    for (int i : active_sources) {
        if (i < 0 || i >= dataset.num_sources())
            throw usage_error("invalid config", "active source out of range");
        active_[static_cast<std::size_t>(i)] = true;
    }
    for (int i = 0; i < dataset.num_sources(); ++i) {
        if (params.feature_dims[static_cast<std::size_t>(i)] !=
            dataset.sources[static_cast<std::size_t>(i)].feature_dim)
            throw usage_error("dimension error", "feature dim mismatch for source " + std::to_string(i));
    }

    groups_.resize(static_cast<std::size_t>(dataset.num_sources()));
    for (int i = 0; i < dataset.num_sources(); ++i) {
        const auto& src = dataset.sources[static_cast<std::size_t>(i)];
        std::map<std::int64_t, std::vector<std::size_t>> by_ts;
        for (std::size_t j = 0; j < src.samples.size(); ++j)
            by_ts[src.samples[j].timestamp].push_back(j);
        for (auto& [ts, idx] : by_ts) {
            std::vector<GeoPoint> pts;
            pts.reserve(idx.size());
            for (std::size_t j : idx) pts.push_back(src.samples[j].location);
            groups_[static_cast<std::size_t>(i)].emplace(ts, Group{std::move(idx), GridIndex(std::move(pts))});
        }
    }
}

// Builds one source's branch: KNN closure around the query, L conv layers on
// it, decode of the query embedding. Returns the scalar prediction node.
int Predictor::build_source(ad::Tape& tape, int source, const Group& group, const MaskedView* view,
                            const GeoPoint& location) const {
    const auto& src = data_->sources[static_cast<std::size_t>(source)];
    const int n_sim = static_cast<int>(group.sample_idx.size());

    // position of the masked sample inside this group, if it is one of ours
    int excluded_pos = -1;
    if (view && view->masked_source() == source) {
        const auto it = std::lower_bound(group.sample_idx.begin(), group.sample_idx.end(),
                                         view->masked_index());
        if (it != group.sample_idx.end() && *it == view->masked_index())
            excluded_pos = static_cast<int>(it - group.sample_idx.begin());
    }

    const int m = n_sim - (excluded_pos >= 0 ? 1 : 0);  // fixed node count
    const int target_id = m;                            // query node is last

    // group position <-> node id (query exclusion shifts ids above it down)
    const auto pos_to_node = [&](int pos) { return excluded_pos >= 0 && pos > excluded_pos ? pos - 1 : pos; };
    const auto node_to_pos = [&](int id) { return excluded_pos >= 0 && id >= excluded_pos ? id + 1 : id; };
    const auto node_point = [&](int id) -> GeoPoint {
        if (id == target_id) return location;
        return group.index.point(node_to_pos(id));
    };

    // exact knn among the other graph nodes: grid query over the fixed
    // samples merged with the movable query point (largest id, loses ties)
    std::map<int, std::vector<int>> knn_memo;
    const auto knn_of = [&](int id) -> const std::vector<int>& {
        auto it = knn_memo.find(id);
        if (it != knn_memo.end()) return it->second;
        std::vector<int> result;
        if (id == target_id) {
            for (int pos : group.index.query(location, std::min(k_, m), excluded_pos))
                result.push_back(pos_to_node(pos));
        } else {
            const GeoPoint p = node_point(id);
            const int avail = m - 1;
            const int ask = std::min(k_, avail);
            std::vector<std::pair<double, int>> cand;  // (d2, node id)
            if (ask > 0)
                for (int pos : group.index.query(p, ask, node_to_pos(id), excluded_pos))
                    cand.emplace_back(squared_distance(p, group.index.point(pos)), pos_to_node(pos));
            const double d2t = squared_distance(p, location);
            // strict <: equal distance keeps the smaller (sample) id first
            auto at = std::upper_bound(cand.begin(), cand.end(),
                                       std::make_pair(d2t, std::numeric_limits<int>::max()));
            cand.insert(at, {d2t, target_id});
            if (static_cast<int>(cand.size()) > k_) cand.pop_back();
            for (auto& [d2, nid] : cand) result.push_back(nid);
        }
        if (static_cast<int>(result.size()) < k_)
            throw data_error("insufficient neighbors", "source " + std::to_string(source));
        return knn_memo.emplace(id, std::move(result)).first->second;
    };

    // L-hop in-closure of the query
    const int L = params_->num_layers;
    std::vector<std::vector<int>> need(static_cast<std::size_t>(L) + 1);
    need[static_cast<std::size_t>(L)] = {target_id};
    for (int l = L; l >= 1; --l) {
        std::vector<int> prev = need[static_cast<std::size_t>(l)];
        for (int o : need[static_cast<std::size_t>(l)])
            for (int u : knn_of(o)) prev.push_back(u);
        std::sort(prev.begin(), prev.end());
        prev.erase(std::unique(prev.begin(), prev.end()), prev.end());
        need[static_cast<std::size_t>(l) - 1] = std::move(prev);
    }
    for (int u : need[0]) knn_of(u);  // angle inputs for the deepest edges

    // raw node attributes [features ; target value ; mask flag]
    std::map<int, int> h;  // node id -> tape node, rebuilt per layer
    std::vector<double> attr;
    for (int id : need[0]) {
        attr.clear();
        if (id == target_id) {
            if (excluded_pos >= 0) {
                const auto& s = src.samples[view->masked_index()];
                attr.assign(s.features.begin(), s.features.end());
            } else {
                attr.assign(static_cast<std::size_t>(src.feature_dim), 0.0);
            }
            attr.push_back(0.0);  // masked value
            attr.push_back(1.0);  // mask flag
        } else {
            const std::size_t sj = group.sample_idx[static_cast<std::size_t>(node_to_pos(id))];
            const auto& s = src.samples[sj];
            attr.assign(s.features.begin(), s.features.end());
            const auto [value, flag] = view ? view->target_channel(source, sj)
                                            : std::make_pair(s.target, 0.0);
            attr.push_back(value);
            attr.push_back(flag);
        }
        h.emplace(id, tape.leaf(attr));
    }

    std::map<std::pair<int, int>, int> edge_emb;
    std::vector<GeoPoint> nbr_pts;
    const auto edge_embedding = [&](int u, int o) {
        const auto key = std::make_pair(u, o);
        auto it = edge_emb.find(key);
        if (it != edge_emb.end()) return it->second;
        const GeoPoint pu = node_point(u), po = node_point(o);
        const auto& u_nbrs = knn_of(u);
        nbr_pts.clear();
        for (int w : u_nbrs) nbr_pts.push_back(node_point(w));
        EdgeGeometry geo{distance(pu, po), clockwise_gap_angle(pu, po, nbr_pts, u_nbrs, o)};
        const int node = tape_encode_edge(tape, *params_, geo);
        edge_emb.emplace(key, node);
        return node;
    };

    for (int l = 0; l < L; ++l) {
        std::map<int, int> next;
        for (int o : need[static_cast<std::size_t>(l) + 1]) {
            std::vector<int> nbrs, embs;
            for (int u : knn_of(o)) {
                nbrs.push_back(h.at(u));
                embs.push_back(edge_embedding(u, o));
            }
            next.emplace(o, tape_node_update(tape, *params_, source, l, h.at(o), nbrs, embs));
        }
        h = std::move(next);
    }
    return tape_decode(tape, *params_, h.at(target_id));
}

TapedForward Predictor::build(ad::Tape& tape, const MaskedView* view, const GeoPoint& location,
                              std::int64_t timestamp, const double* supervision_target) const {
    if (!is_finite(location)) throw data_error("invalid geometry", "non-finite query location");
    TapedForward out;
    const int n = params_->num_sources;
    out.per_source.assign(static_cast<std::size_t>(n), -1);
    out.weights.assign(static_cast<std::size_t>(n), 0.0);

    std::vector<int> present;
    std::vector<int> preds;
    for (int i = 0; i < n; ++i) {
        if (!active_[static_cast<std::size_t>(i)]) continue;
        const auto& by_ts = groups_[static_cast<std::size_t>(i)];
        const auto it = by_ts.find(timestamp);
        // a source participates only with at least k+1 simultaneous samples
        if (it == by_ts.end() || static_cast<int>(it->second.sample_idx.size()) < k_ + 1) {
            out.all_sources_used = false;
            continue;
        }
        const int y = build_source(tape, i, it->second, view, location);
        out.per_source[static_cast<std::size_t>(i)] = y;
        present.push_back(i);
        preds.push_back(y);
    }
    if (present.empty()) return out;  // infeasible
    out.feasible = true;

    const int logits = tape.param_vector(params_->fidelity_block);
    const int scores = tape.softmax(tape.select(logits, present));
    out.fused = tape.dot(scores, tape.stack(preds));

    const auto w = tape.values(scores);
    for (std::size_t j = 0; j < present.size(); ++j)
        out.weights[static_cast<std::size_t>(present[j])] = w[j];

    if (supervision_target) {
        if (!view) throw usage_error("invalid config", "supervision requires a masked view");
        // Algorithm weight: the masked source's fidelity score over the
        // sources the model actually fuses
        std::vector<int> active_ids;
        int masked_pos = -1;
        for (int i = 0; i < n; ++i) {
            if (!active_[static_cast<std::size_t>(i)]) continue;
            if (i == view->masked_source()) masked_pos = static_cast<int>(active_ids.size());
            active_ids.push_back(i);
        }
        if (masked_pos < 0)
            throw usage_error("invalid config", "masked source is not an active source");
        const int weight =
            tape.pick(tape.softmax(tape.select(logits, active_ids)), masked_pos);
        out.squared_error = tape.square(tape.sub(out.fused, tape.leaf1(*supervision_target)));
        out.weighted_loss = tape.mul(weight, out.squared_error);
    }
    return out;
}

namespace {

SourcePrediction read_prediction(const ad::Tape& tape, const TapedForward& f) {
    SourcePrediction out;
    out.per_source.resize(f.per_source.size());
    for (std::size_t i = 0; i < f.per_source.size(); ++i)
        if (f.per_source[i] >= 0) out.per_source[i] = tape.value(f.per_source[i]);
    out.weights = f.weights;
    out.fused = tape.value(f.fused);
    out.all_sources_used = f.all_sources_used;
    return out;
}

}  // namespace

SourcePrediction Predictor::predict(const GeoPoint& location, std::int64_t timestamp) const {
    ad::Tape tape(params_->store);
    const TapedForward f = build(tape, nullptr, location, timestamp, nullptr);
    if (!f.feasible) throw data_error("no usable source", "timestamp " + std::to_string(timestamp));
    return read_prediction(tape, f);
}

SourcePrediction Predictor::predict_masked(const MaskedView& view) const {
    const auto& s = view.base()
                        .sources[static_cast<std::size_t>(view.masked_source())]
                        .samples[view.masked_index()];
    ad::Tape tape(params_->store);
    const TapedForward f = build(tape, &view, s.location, s.timestamp, nullptr);
    if (!f.feasible) throw data_error("no usable source", "timestamp " + std::to_string(s.timestamp));
    return read_prediction(tape, f);
}

SourcePrediction forward(const ModelParams& params, const MultiSourceDataset& dataset,
                         const GeoPoint& target_location, std::int64_t timestamp, int k_neighbors) {
    return Predictor(params, dataset, k_neighbors).predict(target_location, timestamp);
}

SourcePrediction forward(const ModelParams& params, const MaskedView& view, int k_neighbors) {
    return Predictor(params, view.base(), k_neighbors).predict_masked(view);
}

}  // namespace dmsp
