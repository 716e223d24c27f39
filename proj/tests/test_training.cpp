#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "dmsp/error.hpp"
#include "dmsp/rng.hpp"
#include "dmsp/scr.hpp"
#include "dmsp/training.hpp"

using namespace dmsp;

namespace {

MultiSourceDataset tiny_dataset(std::uint64_t seed, int n0, int n1, double extent = 20.0) {
    Rng rng(seed);
    MultiSourceDataset ds;
    for (int i = 0; i < 2; ++i) {
        SourceDataset src;
        src.source_id = i;
        src.feature_dim = 2;
        src.name = "s" + std::to_string(i);
        const int n = i == 0 ? n0 : n1;
        for (int j = 0; j < n; ++j) {
            Sample s;
            s.location = {rng.uniform(0, extent), rng.uniform(0, extent)};
            s.features = {std::sin(s.location.x / 5.0), std::cos(s.location.y / 5.0)};
            s.target = s.features[0] + 0.5 * s.features[1];
            s.timestamp = 0;
            src.samples.push_back(std::move(s));
        }
        ds.sources.push_back(std::move(src));
    }
    return ds;
}

ModelParams params_for(const MultiSourceDataset& ds, int hidden, int layers, std::uint64_t seed) {
    std::vector<int> dims;
    for (const auto& src : ds.sources) dims.push_back(src.feature_dim);
    return ModelParams::create(ds.num_sources(), dims, hidden, layers, seed);
}

}  // namespace

TEST_CASE("loss is plain squared error") {
    CHECK(loss(3.0, 5.0) == 4.0);
    CHECK(loss(7.25, 7.25) == 0.0);
    CHECK(0.5 * loss(3.0, 5.0) == 2.0);  // Algorithm weighting applied outside
    CHECK_THROWS_AS(loss(std::nan(""), 0.0), Error);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    std::vector<double> params{1.0, -2.0, 3.0};
    const std::vector<double> grad{0.0, 0.0, 0.0};
    AdamState state;
    for (int i = 0; i < 5; ++i) adam_step(params, grad, state, 0.1);
    CHECK(params == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam first step is -lr * sign(gradient)") {
    std::vector<double> params{0.0, 0.0};
    const std::vector<double> grad{0.35, -7.0};
    AdamState state;
    adam_step(params, grad, state, 0.01);
    CHECK(params[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(params[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam step magnitude approaches lr under constant gradient") {
    std::vector<double> params{0.0};
    const std::vector<double> grad{0.5};
    AdamState state;
    double prev = params[0];
    double step = 0.0;
    for (int i = 0; i < 1000; ++i) {
        adam_step(params, grad, state, 0.001);
        step = std::abs(params[0] - prev);
        prev = params[0];
    }
    CHECK(std::abs(step - 0.001) / 0.001 < 0.05);
}

TEST_CASE("adam shape mismatch") {
    std::vector<double> params{0.0};
    AdamState state;
    CHECK_THROWS_WITH_AS(adam_step(params, std::vector<double>{1.0, 2.0}, state, 0.1),
                         doctest::Contains("dimension error"), Error);
}

TEST_CASE("analytic gradients match central finite differences") {
    // small instances; the full sweep runs in the acceptance suite
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto ds = tiny_dataset(seed, 6, 6);
        auto params = params_for(ds, 4, 2, seed + 100);
        params.set_fidelity_logits({{0.3, -0.2}});
        const Predictor predictor(params, ds, 2);

        Rng pick(seed);
        const int i = static_cast<int>(pick.below(2));
        const std::size_t j = pick.below(6);
        std::vector<double> grads(params.store.size(), 0.0);
        const auto l0 = compute_gradients(predictor, i, j, grads);
        REQUIRE(l0.has_value());

        const double h = 1e-5;
        for (std::size_t p = 0; p < params.store.size(); ++p) {
            auto probe = params;
            probe.store.data()[p] += h;
            const auto hi = sample_loss(Predictor(probe, ds, 2), i, j);
            probe.store.data()[p] -= 2 * h;
            const auto lo = sample_loss(Predictor(probe, ds, 2), i, j);
            const double fd = (*hi - *lo) / (2 * h);
            const double tol = std::max(1e-8, 1e-5 * std::abs(fd));
            CHECK(std::abs(grads[p] - fd) <= tol);
        }
    }
}

TEST_CASE("fidelity logit gradient sign follows the loss gap") {
    const auto ds = tiny_dataset(5, 8, 8);
    auto params = params_for(ds, 4, 2, 200);
    const Predictor predictor(params, ds, 2);

    // gradient through the loss-weight path: raising the logit of the masked
    // source raises the objective when its loss is above the weighted mean
    std::vector<double> grads(params.store.size(), 0.0);
    const auto wl = compute_gradients(predictor, 0, 1, grads);
    REQUIRE(wl.has_value());
    const auto& blk = params.store.block(params.fidelity_block);
    // compare against the closed form plus the fusion-path term computed by
    // finite differences on the logits only
    for (int idx = 0; idx < 2; ++idx) {
        auto probe = params;
        const double h = 1e-6;
        probe.store.data()[blk.offset + static_cast<std::size_t>(idx)] += h;
        const auto hi = sample_loss(Predictor(probe, ds, 2), 0, 1);
        probe.store.data()[blk.offset + static_cast<std::size_t>(idx)] -= 2 * h;
        const auto lo = sample_loss(Predictor(probe, ds, 2), 0, 1);
        CHECK(grads[blk.offset + static_cast<std::size_t>(idx)] ==
              doctest::Approx((*hi - *lo) / (2 * h)).epsilon(1e-4));
    }
}

TEST_CASE("train_epoch updates every block and records losses") {
    const auto ds = tiny_dataset(6, 8, 8);
    TrainConfig config;
    config.seed = 1;
    config.k_neighbors = 2;
    config.hidden_dim = 4;
    config.num_layers = 2;

    TrainState state;
    state.params = params_for(ds, 4, 2, 300);
    state.shuffle_rng = Rng(1);
    const auto before = state.params.store.data();
    const Predictor predictor(state.params, ds, 2);
    const auto splits = split(ds, config.fractions, config.seed);
    train_epoch(state, predictor, splits, config);

    CHECK(state.epoch == 1);
    REQUIRE(state.history.size() == 1);
    CHECK(state.history[0].train_loss_per_source[0].has_value());
    CHECK(state.history[0].train_loss_per_source[1].has_value());
    // every parameter block moved
    for (const auto& blk : state.params.store.blocks()) {
        double delta = 0.0;
        for (std::size_t p = blk.offset; p < blk.offset + blk.size; ++p)
            delta += std::abs(state.params.store.data()[p] - before[p]);
        CHECK(delta > 0.0);
    }
}

TEST_CASE("frozen-fidelity mode pins the logits") {
    const auto ds = tiny_dataset(7, 8, 8);
    TrainConfig config;
    config.seed = 2;
    config.k_neighbors = 2;
    config.hidden_dim = 4;
    config.mode = TrainMode::frozen();

    TrainState state;
    state.params = params_for(ds, 4, 2, 301);
    state.shuffle_rng = Rng(2);
    const Predictor predictor(state.params, ds, 2);
    const auto splits = split(ds, config.fractions, config.seed);
    train_epoch(state, predictor, splits, config);
    train_epoch(state, predictor, splits, config);

    for (double logit : state.params.fidelity_logits().values) CHECK(logit == 0.0);
    for (const auto& rec : state.history)
        for (double s : rec.fidelity_scores) CHECK(s == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("frozen-fidelity equals full-mode updates with logit gradients zeroed") {
    // independent route: drive the same strict-order trajectory by hand with
    // compute_gradients + manual zeroing + adam_step
    const auto ds = tiny_dataset(8, 7, 7);
    TrainConfig config;
    config.seed = 3;
    config.k_neighbors = 2;
    config.hidden_dim = 4;
    config.strict_order = true;
    config.mode = TrainMode::frozen();

    std::vector<int> dims{2, 2};
    TrainState state;
    state.params = ModelParams::create(2, dims, 4, 2, Rng::derive(config.seed, "init"));
    state.shuffle_rng = Rng(Rng::derive(config.seed, "shuffle"));
    const auto splits = split(ds, config.fractions, config.seed);

    ModelParams manual = state.params;
    AdamState manual_adam;
    {
        const Predictor predictor(manual, ds, 2);
        const auto& blk = manual.store.block(manual.fidelity_block);
        std::vector<double> grads(manual.store.size(), 0.0);
        for (int i = 0; i < 2; ++i) {
            for (std::size_t j : splits[static_cast<std::size_t>(i)].train) {
                std::fill(grads.begin(), grads.end(), 0.0);
                const auto wl = compute_gradients(predictor, i, j, grads);
                REQUIRE(wl.has_value());
                for (std::size_t p = blk.offset; p < blk.offset + blk.size; ++p) grads[p] = 0.0;
                adam_step(manual.store.data(), grads, manual_adam, config.learning_rate);
            }
        }
    }
    {
        const Predictor predictor(state.params, ds, 2);
        train_epoch(state, predictor, splits, config);
    }
    CHECK(state.params.store.data() == manual.store.data());
}

TEST_CASE("single-source mode uses only that source end to end") {
    const auto ds = tiny_dataset(9, 8, 8);
    TrainConfig config;
    config.seed = 4;
    config.k_neighbors = 2;
    config.hidden_dim = 4;
    config.max_epochs = 2;
    config.patience = 9;
    config.mode = TrainMode::single(1);

    const auto result = fit(ds, config);
    CHECK_FALSE(result.history[0].train_loss_per_source[0].has_value());
    CHECK(result.history[0].train_loss_per_source[1].has_value());
    // the restricted forward never touches the other sources' targets or the
    // fidelity weights: logits receive no gradient through a singleton softmax
    for (double logit : result.params.fidelity_logits().values) CHECK(logit == 0.0);

    // perturbing the unused source's targets leaves the trajectory identical
    auto altered = ds;
    for (auto& s : altered.sources[0].samples) s.target += 1e3;
    const auto replay = fit(altered, config);
    CHECK(replay.params.store.data() == result.params.store.data());
}

TEST_CASE("training loss trends downward on an easy dataset") {
    const auto ds = tiny_dataset(10, 20, 20);
    TrainConfig config;
    config.seed = 5;
    config.k_neighbors = 2;
    config.hidden_dim = 8;
    config.max_epochs = 10;
    config.patience = 99;

    const auto result = fit(ds, config);
    REQUIRE(result.history.size() == 10);
    const auto epoch_loss = [&](std::size_t e) {
        double acc = 0.0;
        for (const auto& l : result.history[e].train_loss_per_source) acc += l.value_or(0.0);
        return acc;
    };
    // negative slope of a least-squares line through the per-epoch losses
    double sx = 0, sy = 0, sxy = 0, sxx = 0;
    for (std::size_t e = 0; e < 10; ++e) {
        sx += static_cast<double>(e);
        sy += epoch_loss(e);
        sxy += static_cast<double>(e) * epoch_loss(e);
        sxx += static_cast<double>(e) * static_cast<double>(e);
    }
    const double slope = (10 * sxy - sx * sy) / (10 * sxx - sx * sx);
    CHECK(slope < 0.0);
    CHECK(epoch_loss(9) < epoch_loss(0));
}

TEST_CASE("fit stops early and keeps the best parameters") {
    const auto ds = tiny_dataset(11, 10, 10);
    TrainConfig config;
    config.seed = 6;
    config.k_neighbors = 2;
    config.hidden_dim = 4;
    config.max_epochs = 200;
    config.patience = 3;

    const auto result = fit(ds, config);
    CHECK(result.epochs_run < 200);
    CHECK(result.best_epoch <= result.epochs_run);
    // best val loss is the minimum of the recorded epochs
    double best = 1e300;
    for (const auto& rec : result.history) best = std::min(best, rec.val_loss);
    CHECK(result.best_val == doctest::Approx(best).epsilon(1e-15));
}

TEST_CASE("fit is bitwise deterministic") {
    const auto ds = tiny_dataset(12, 9, 9);
    TrainConfig config;
    config.seed = 7;
    config.k_neighbors = 2;
    config.hidden_dim = 4;
    config.max_epochs = 4;
    config.patience = 99;

    const auto a = fit(ds, config);
    const auto b = fit(ds, config);
    CHECK(a.params.store.data() == b.params.store.data());
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e)
        CHECK(a.history[e].val_loss == b.history[e].val_loss);
}

TEST_CASE("resume reproduces an uninterrupted run bitwise") {
    const auto ds = tiny_dataset(13, 9, 9);
    TrainConfig config;
    config.seed = 8;
    config.k_neighbors = 2;
    config.hidden_dim = 4;
    config.max_epochs = 6;
    config.patience = 99;

    const auto full = fit(ds, config);

    TrainConfig half = config;
    half.max_epochs = 3;
    // run 3 epochs without early-stop interference, snapshot, resume
    std::vector<int> dims{2, 2};
    TrainState state;
    state.params = ModelParams::create(2, dims, 4, 2, Rng::derive(config.seed, "init"));
    state.shuffle_rng = Rng(Rng::derive(config.seed, "shuffle"));
    {
        const Predictor predictor(state.params, ds, 2);
        const auto splits = split(ds, config.fractions, config.seed);
        for (int e = 0; e < 3; ++e) train_epoch(state, predictor, splits, config);
    }
    const auto path = (std::filesystem::temp_directory_path() / "dmsp_resume.dmsp").string();
    save_train_state(state, config, path);
    auto restored = load_train_state(load_checkpoint(path));
    CHECK(restored.params.store.data() == state.params.store.data());
    CHECK(restored.adam.m == state.adam.m);
    CHECK(restored.adam.v == state.adam.v);
    CHECK(restored.shuffle_rng == state.shuffle_rng);

    {
        const Predictor predictor(restored.params, ds, 2);
        const auto splits = split(ds, config.fractions, config.seed);
        for (int e = 0; e < 3; ++e) train_epoch(restored, predictor, splits, config);
    }
    // the uninterrupted run applies the same 6 epochs; compare raw weights
    // (fit replays validation bookkeeping on top of the same trajectory)
    TrainState straight;
    straight.params = ModelParams::create(2, dims, 4, 2, Rng::derive(config.seed, "init"));
    straight.shuffle_rng = Rng(Rng::derive(config.seed, "shuffle"));
    {
        const Predictor predictor(straight.params, ds, 2);
        const auto splits = split(ds, config.fractions, config.seed);
        for (int e = 0; e < 6; ++e) train_epoch(straight, predictor, splits, config);
    }
    CHECK(restored.params.store.data() == straight.params.store.data());
    (void)full;
}

TEST_CASE("indistinguishable sources keep near-uniform fidelity") {
    // two clean sources of equal size: nothing separates them, so the
    // learned scores should hover near (0.5, 0.5)
    ScrConfig cfg;
    cfg.n_high = 120;
    cfg.n_low = 120;
    cfg.noise_sigma = 0.0;
    cfg.grid_size = 32;
    cfg.truth_grid_size = 8;
    const auto data = generate_scr(cfg, 50);

    TrainConfig config;
    config.seed = 51;
    config.max_epochs = 8;
    config.patience = 8;
    const auto result = fit(data.dataset, config);
    const auto& scores = result.history.back().fidelity_scores;
    CHECK(std::abs(scores[0] - scores[1]) < 0.15);
}

TEST_CASE("batched updates train and stay deterministic") {
    const auto ds = tiny_dataset(14, 10, 10);
    TrainConfig config;
    config.seed = 10;
    config.k_neighbors = 2;
    config.hidden_dim = 4;
    config.max_epochs = 3;
    config.patience = 9;
    config.batch_size = 4;

    const auto a = fit(ds, config);
    const auto b = fit(ds, config);
    CHECK(a.params.store.data() == b.params.store.data());
    CHECK(a.params.finite());
    // a different batch size follows a different trajectory
    config.batch_size = 1;
    const auto c = fit(ds, config);
    CHECK(a.params.store.data() != c.params.store.data());
}

TEST_CASE("degenerate datasets raise no-usable-source") {
    // one sample per timestamp: never k+1 simultaneous samples
    MultiSourceDataset ds;
    SourceDataset src;
    src.source_id = 0;
    src.feature_dim = 1;
    for (int j = 0; j < 6; ++j)
        src.samples.push_back({{double(j), 0.0}, {0.1}, 1.0, j});
    ds.sources.push_back(src);

    TrainConfig config;
    config.seed = 9;
    config.k_neighbors = 3;
    config.hidden_dim = 4;
    config.max_epochs = 1;
    CHECK_THROWS_WITH_AS(fit(ds, config), doctest::Contains("no usable source"), Error);
}
