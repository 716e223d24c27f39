#include <cmath>

#include <doctest.h>

#include "dmsp/error.hpp"
#include "dmsp/metrics.hpp"
#include "dmsp/rng.hpp"
#include "dmsp/scr.hpp"

using namespace dmsp;

namespace {

// independent scalar-loop implementation kept free of the library's
// accumulation strategy
struct OracleReport {
    double mae, rmse;
    bool defined;
    double evs, cod, pearson;
};

OracleReport metrics_oracle(const std::vector<double>& p, const std::vector<double>& y) {
    const std::size_t n = p.size();
    double mae = 0;
    for (std::size_t i = 0; i < n; ++i) mae += std::fabs(p[i] - y[i]);
    mae /= static_cast<double>(n);
    double mse = 0;
    for (std::size_t i = 0; i < n; ++i) mse += (p[i] - y[i]) * (p[i] - y[i]);
    mse /= static_cast<double>(n);

    double ym = 0, pm = 0;
    for (std::size_t i = 0; i < n; ++i) ym += y[i];
    ym /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) pm += p[i];
    pm /= static_cast<double>(n);
    double yv = 0, pv = 0, cov = 0;
    for (std::size_t i = 0; i < n; ++i) yv += (y[i] - ym) * (y[i] - ym);
    yv /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) pv += (p[i] - pm) * (p[i] - pm);
    pv /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) cov += (p[i] - pm) * (y[i] - ym);
    cov /= static_cast<double>(n);

    OracleReport r{mae, std::sqrt(mse), yv > 0 && pv > 0, 0, 0, 0};
    if (yv > 0) {
        double ev = 0, em = 0;
        for (std::size_t i = 0; i < n; ++i) em += p[i] - y[i];
        em /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            ev += (p[i] - y[i] - em) * (p[i] - y[i] - em);
        ev /= static_cast<double>(n);
        r.evs = 1 - ev / yv;
        r.cod = 1 - mse / yv;
        if (pv > 0) r.pearson = cov / (std::sqrt(pv) * std::sqrt(yv));
    }
    return r;
}

}  // namespace

TEST_CASE("perfect predictor identities") {
    const std::vector<double> y{1.0, 2.0, -3.0, 4.5};
    const auto r = evaluate(y, y);
    CHECK(r.mae == 0.0);
    CHECK(r.rmse == 0.0);
    CHECK(*r.evs == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(*r.cod == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(*r.pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.n == 4);
}

TEST_CASE("constant prediction at the target mean zeroes CoD and EVS") {
    const std::vector<double> y{1.0, 2.0, 3.0, 6.0};
    const std::vector<double> p(4, 3.0);  // mean of y
    const auto r = evaluate(p, y);
    CHECK(*r.cod == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(*r.evs == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_FALSE(r.pearson.has_value());  // zero prediction variance
}

TEST_CASE("zero-variance targets leave CoD/EVS/Pearson undefined") {
    const std::vector<double> p{1.0, 2.0, 3.0};
    const std::vector<double> y{2.0, 2.0, 2.0};
    const auto r = evaluate(p, y);
    CHECK(r.mae == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.rmse == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
    CHECK_FALSE(r.cod.has_value());
    CHECK_FALSE(r.evs.has_value());
    CHECK_FALSE(r.pearson.has_value());

    const auto j = report_to_json(r);
    CHECK(j.at("cod").is_null());
    CHECK(j.at("undefined").size() == 3);
}

TEST_CASE("evaluate matches the scalar-loop oracle") {
    Rng rng(71);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(40);
        std::vector<double> p(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.normal() * 3 + 1;
            y[i] = rng.normal() * 2 - 0.5;
        }
        const auto r = evaluate(p, y);
        const auto o = metrics_oracle(p, y);
        CHECK(std::abs(r.mae - o.mae) <= 1e-12);
        CHECK(std::abs(r.rmse - o.rmse) <= 1e-12);
        REQUIRE(o.defined == (r.cod.has_value() && r.pearson.has_value()));
        if (o.defined) {
            CHECK(std::abs(*r.evs - o.evs) <= 1e-12);
            CHECK(std::abs(*r.cod - o.cod) <= 1e-12);
            CHECK(std::abs(*r.pearson - o.pearson) <= 1e-12);
        }
        // report invariants
        CHECK(r.rmse + 1e-12 >= r.mae);
        if (r.cod && r.evs) CHECK(*r.cod <= *r.evs + 1e-12);
        if (r.pearson) {
            CHECK(*r.pearson <= 1.0 + 1e-12);
            CHECK(*r.pearson >= -1.0 - 1e-12);
        }
    }
}

TEST_CASE("CoD equals EVS for unbiased predictions") {
    Rng rng(72);
    std::vector<double> y(50), p(50);
    for (std::size_t i = 0; i < 50; ++i) y[i] = rng.normal();
    // symmetric errors: mean error exactly zero
    for (std::size_t i = 0; i < 50; ++i) p[i] = y[i] + (i % 2 == 0 ? 0.25 : -0.25);
    const auto r = evaluate(p, y);
    CHECK(*r.cod == doctest::Approx(*r.evs).epsilon(1e-12));
}

TEST_CASE("pearson invariant under positive affine rescaling") {
    Rng rng(73);
    std::vector<double> y(30), p(30);
    for (std::size_t i = 0; i < 30; ++i) {
        y[i] = rng.normal();
        p[i] = 0.8 * y[i] + 0.3 * rng.normal();
    }
    const auto base = evaluate(p, y);
    auto scaled = p;
    for (double& v : scaled) v = 2.5 * v + 7.0;
    const auto moved = evaluate(scaled, y);
    CHECK(*moved.pearson == doctest::Approx(*base.pearson).epsilon(1e-12));
}

TEST_CASE("evaluate rejects bad input") {
    CHECK_THROWS_WITH_AS(evaluate(std::vector<double>{}, std::vector<double>{}),
                         doctest::Contains("invalid evaluation set"), Error);
    CHECK_THROWS_WITH_AS(evaluate(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                         doctest::Contains("invalid evaluation set"), Error);
}

TEST_CASE("evaluate_model on a clean dataset with an untrained model stays bounded") {
    ScrConfig cfg;
    cfg.n_high = 25;
    cfg.n_low = 40;
    cfg.noise_sigma = 0.0;
    cfg.grid_size = 32;
    cfg.truth_grid_size = 16;
    const auto data = generate_scr(cfg, 44);
    const auto splits = split(data.dataset, {}, 3);
    std::vector<int> dims{2, 2};
    const auto params = ModelParams::create(2, dims, 8, 2, 45);  // untrained
    const Predictor predictor(params, data.dataset, 2);

    const auto r = evaluate_model(predictor, splits, EvalReference::truth(data.truth));
    CHECK(std::isfinite(r.mae));
    CHECK(std::isfinite(r.rmse));
    CHECK(r.n > 0);
    if (r.pearson) {
        CHECK(*r.pearson <= 1.0 + 1e-12);
        CHECK(*r.pearson >= -1.0 - 1e-12);
    }
}

TEST_CASE("harness self-check with a cheating predictor") {
    MultiSourceDataset ds;
    SourceDataset src;
    src.source_id = 0;
    src.feature_dim = 0;
    Rng rng(74);
    for (int j = 0; j < 20; ++j)
        src.samples.push_back({{rng.uniform(0, 10), rng.uniform(0, 10)}, {}, rng.normal(), 0});
    ds.sources.push_back(src);
    const auto splits = split(ds, {}, 5);

    // predictor that returns the reference value itself
    const auto rows = collect_eval_rows(
        ds, splits, EvalReference::source(0),
        [&](int i, std::size_t j) -> std::optional<double> {
            return ds.sources[static_cast<std::size_t>(i)].samples[j].target;
        });
    std::vector<double> p, y;
    for (const auto& row : rows) {
        p.push_back(row.prediction);
        y.push_back(row.reference);
    }
    const auto r = evaluate(p, y);
    CHECK(r.mae == 0.0);
    CHECK(*r.cod == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.n == splits[0].test.size());
}
