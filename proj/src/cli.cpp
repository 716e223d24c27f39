#include "dmsp/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmsp/checkpoint.hpp"
#include "dmsp/error.hpp"
#include "dmsp/metrics.hpp"
#include "dmsp/scr.hpp"
#include "dmsp/svg.hpp"
#include "dmsp/training.hpp"

namespace dmsp::cli {

namespace {

using nlohmann::json;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("file error", "cannot write " + path);
    out << text;
}

struct CommonFlags {
    bool json_errors = false;
};

struct GenScrFlags {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = ".";
    ScrConfig config;
};

struct TrainFlags {
    std::string data_path;
    std::string out_dir = ".";
    std::string resume_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string mode = "full";
    TrainConfig config;
};

TrainMode parse_mode(const std::string& text) {
    if (text == "full") return TrainMode::full();
    if (text == "frozen-fidelity") return TrainMode::frozen();
    if (text.rfind("single-source=", 0) == 0) {
        const std::string id = text.substr(14);
        char* end = nullptr;
        const long v = std::strtol(id.c_str(), &end, 10);
        if (end == id.c_str() || *end != '\0' || v < 0)
            throw usage_error("invalid config", "bad source id in --mode");
        return TrainMode::single(static_cast<int>(v));
    }
    throw usage_error("invalid config",
                      "--mode must be full, single-source=<i>, or frozen-fidelity");
}

// a single-source checkpoint keeps predicting through that source alone
std::vector<int> active_sources_from_meta(const nlohmann::json& meta) {
    const std::string mode = meta.value("mode", "full");
    if (mode.rfind("single-source=", 0) == 0)
        return {static_cast<int>(std::strtol(mode.c_str() + 14, nullptr, 10))};
    return {};
}

std::vector<std::pair<GeoPoint, std::int64_t>> load_locations_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("file error", "cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error("schema violation", "empty locations file");
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    const bool with_ts = line == "x,y,timestamp";
    if (!with_ts && line != "x,y")
        throw data_error("schema violation", "locations header must be x,y[,timestamp]");

    std::vector<std::pair<GeoPoint, std::int64_t>> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string xs, ys, ts;
        if (!std::getline(ls, xs, ',') || !std::getline(ls, ys, ','))
            throw data_error("parse error", "row " + std::to_string(row));
        std::int64_t t = 0;
        if (with_ts) {
            if (!std::getline(ls, ts, ','))
                throw data_error("parse error", "row " + std::to_string(row));
            t = std::strtoll(ts.c_str(), nullptr, 10);
        }
        char* ex = nullptr;
        char* ey = nullptr;
        const double x = std::strtod(xs.c_str(), &ex);
        const double y = std::strtod(ys.c_str(), &ey);
        if (ex == xs.c_str() || ey == ys.c_str())
            throw data_error("parse error", "row " + std::to_string(row));
        out.push_back({{x, y}, t});
    }
    if (out.empty()) throw data_error("schema violation", "no locations");
    return out;
}

void format_g17(std::string& buf, double v) {
    char tmp[32];
    std::snprintf(tmp, sizeof(tmp), "%.17g", v);
    buf += tmp;
}

int run_gen_scr(const GenScrFlags& flags, std::ostream& out) {
    const auto result = generate_scr(flags.config, flags.seed);
    std::filesystem::create_directories(flags.out_dir);
    const std::string data_path = flags.out_dir + "/scr_dataset.csv";
    const std::string truth_path = flags.out_dir + "/scr_truth.csv";
    save_csv(result.dataset, data_path);
    save_truth_csv(result.truth, truth_path);

    json summary;
    summary["dataset"] = data_path;
    summary["truth_grid"] = truth_path;
    summary["num_sources"] = result.dataset.num_sources();
    auto sources = json::array();
    for (const auto& src : result.dataset.sources)
        sources.push_back({{"source_id", src.source_id},
                           {"name", src.name},
                           {"n", src.samples.size()},
                           {"feature_dim", src.feature_dim}});
    summary["sources"] = std::move(sources);
    summary["seed"] = flags.seed;
    out << summary.dump(2) << "\n";
    return 0;
}

int run_train(const TrainFlags& flags, std::ostream& out) {
    TrainConfig config = flags.config;
    config.seed = flags.seed;
    config.mode = parse_mode(flags.mode);
    const MultiSourceDataset dataset = load_csv(flags.data_path);

    FitResult result;
    if (!flags.resume_path.empty()) {
        const auto loaded = load_checkpoint(flags.resume_path);
        result = fit_resume(dataset, config, load_train_state(loaded));
    } else {
        result = fit(dataset, config);
    }

    std::filesystem::create_directories(flags.out_dir);
    const std::string ckpt_path = flags.out_dir + "/checkpoint.dmsp";
    const std::string report_path = flags.out_dir + "/training_report.json";

    // the checkpoint holds the best-validation weights plus resumable state
    TrainState final_state;
    final_state.params = result.params;
    final_state.epoch = result.epochs_run;
    final_state.best_val = result.best_val;
    final_state.best_epoch = result.best_epoch;
    final_state.best_params_data = result.params.store.data();
    final_state.history = result.history;
    save_train_state(final_state, config, ckpt_path);

    const json report = report_to_json(result, config);
    write_text(report_path, report.dump(2) + "\n");

    json summary;
    summary["checkpoint"] = ckpt_path;
    summary["report"] = report_path;
    summary["epochs_run"] = result.epochs_run;
    summary["best_epoch"] = result.best_epoch;
    summary["best_val_loss"] = result.best_val;
    summary["fidelity_scores"] = result.params.fidelity_scores().values;
    out << summary.dump(2) << "\n";
    return 0;
}

struct PredictFlags {
    std::string checkpoint_path, data_path, locations_path, out_path;
    int masked_source = -1;
};

int run_predict(const PredictFlags& flags, std::ostream& out) {
    const auto loaded = load_checkpoint(flags.checkpoint_path);
    const int k = loaded.extras.meta.value("k_neighbors", 3);
    const MultiSourceDataset dataset = load_csv(flags.data_path);
    const Predictor predictor(loaded.params, dataset, k, active_sources_from_meta(loaded.extras.meta));
    const int n = dataset.num_sources();

    std::string buf = "x,y,timestamp";
    for (int i = 0; i < n; ++i) buf += ",y_source_" + std::to_string(i);
    buf += ",fused\n";
    const auto emit = [&b = buf, n](const GeoPoint& p, std::int64_t ts,
                                    const SourcePrediction& pred) {
        format_g17(b, p.x);
        b += ',';
        format_g17(b, p.y);
        b += ',';
        b += std::to_string(ts);
        for (int i = 0; i < n; ++i) {
            b += ',';
            if (pred.per_source[static_cast<std::size_t>(i)])
                format_g17(b, *pred.per_source[static_cast<std::size_t>(i)]);
        }
        b += ',';
        format_g17(b, pred.fused);
        b += '\n';
    };

    std::size_t rows = 0;
    if (flags.masked_source >= 0) {
        if (flags.masked_source >= n)
            throw usage_error("invalid config", "masked source out of range");
        const auto& src = dataset.sources[static_cast<std::size_t>(flags.masked_source)];
        for (std::size_t j = 0; j < src.samples.size(); ++j) {
            const MaskedView view = mask_target(dataset, flags.masked_source, j);
            emit(src.samples[j].location, src.samples[j].timestamp, predictor.predict_masked(view));
            ++rows;
        }
    } else {
        for (const auto& [p, ts] : load_locations_csv(flags.locations_path)) {
            emit(p, ts, predictor.predict(p, ts));
            ++rows;
        }
    }
    write_text(flags.out_path, buf);

    json summary;
    summary["predictions"] = flags.out_path;
    summary["rows"] = rows;
    out << summary.dump(2) << "\n";
    return 0;
}

struct EvalFlags {
    std::string checkpoint_path, data_path, reference, out_path, residuals_path;
    std::uint64_t split_seed = 0;
    SplitFractions fractions;
};

EvalReference parse_reference(const std::string& text, std::optional<TruthGrid>& grid_storage) {
    if (text.rfind("source=", 0) == 0)
        return EvalReference::source(static_cast<int>(std::strtol(text.c_str() + 7, nullptr, 10)));
    if (text.rfind("truth=", 0) == 0) {
        grid_storage = load_truth_csv(text.substr(6));
        return EvalReference::truth(*grid_storage);
    }
    throw usage_error("invalid config", "--reference must be source=<i> or truth=<csv>");
}

int run_eval(const EvalFlags& flags, std::ostream& out) {
    const auto loaded = load_checkpoint(flags.checkpoint_path);
    const int k = loaded.extras.meta.value("k_neighbors", 3);
    const MultiSourceDataset dataset = load_csv(flags.data_path);
    const auto splits = split(dataset, flags.fractions, flags.split_seed);
    const Predictor predictor(loaded.params, dataset, k, active_sources_from_meta(loaded.extras.meta));

    std::optional<TruthGrid> grid;
    const EvalReference reference = parse_reference(flags.reference, grid);
    std::vector<EvalRow> rows;
    const MetricsReport report = evaluate_model(predictor, splits, reference, &rows);

    const json j = report_to_json(report);
    if (!flags.out_path.empty()) write_text(flags.out_path, j.dump(2) + "\n");
    if (!flags.residuals_path.empty()) {
        std::string buf = "x,y,prediction,reference,residual\n";
        for (const auto& row : rows) {
            format_g17(buf, row.location.x);
            buf += ',';
            format_g17(buf, row.location.y);
            buf += ',';
            format_g17(buf, row.prediction);
            buf += ',';
            format_g17(buf, row.reference);
            buf += ',';
            format_g17(buf, row.prediction - row.reference);
            buf += '\n';
        }
        write_text(flags.residuals_path, buf);
    }
    out << j.dump(2) << "\n";
    return 0;
}

int run_inspect_fidelity(const std::string& checkpoint_path, std::ostream& out) {
    const auto loaded = load_checkpoint(checkpoint_path);
    const auto logits = loaded.params.fidelity_logits();
    const auto scores = scores_from_logits(logits);
    auto j = json::array();
    for (std::size_t i = 0; i < logits.values.size(); ++i)
        j.push_back({{"source_id", i}, {"logit", logits.values[i]}, {"score", scores.values[i]}});
    out << j.dump(2) << "\n";
    return 0;
}

struct PlotFlags {
    std::string checkpoint_path, data_path, reference, out_dir = ".";
    std::uint64_t split_seed = 0;
    SplitFractions fractions;
    int heatmap_size = 48;
};

int run_plot(const PlotFlags& flags, std::ostream& out) {
    const auto loaded = load_checkpoint(flags.checkpoint_path);
    const int k = loaded.extras.meta.value("k_neighbors", 3);
    const MultiSourceDataset dataset = load_csv(flags.data_path);
    const auto splits = split(dataset, flags.fractions, flags.split_seed);
    const Predictor predictor(loaded.params, dataset, k, active_sources_from_meta(loaded.extras.meta));

    std::optional<TruthGrid> grid;
    const EvalReference reference = parse_reference(flags.reference, grid);
    std::vector<EvalRow> rows;
    evaluate_model(predictor, splits, reference, &rows);

    std::filesystem::create_directories(flags.out_dir);

    std::vector<svg::XY> pts;
    pts.reserve(rows.size());
    for (const auto& row : rows) pts.push_back({row.reference, row.prediction});
    write_text(flags.out_dir + "/scatter.svg",
               svg::scatter_plot(pts, "Prediction vs reference", "reference", "prediction", true));

    const auto scores = loaded.params.fidelity_scores().values;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < scores.size(); ++i) labels.push_back("source " + std::to_string(i));
    write_text(flags.out_dir + "/fidelity.svg",
               svg::bar_chart(scores, labels, "Fidelity scores"));

    // fused prediction heat map over the data extent at a fixed timestamp
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    std::int64_t ts = dataset.sources[0].samples[0].timestamp;
    for (const auto& src : dataset.sources)
        for (const auto& s : src.samples) {
            xlo = std::min(xlo, s.location.x); xhi = std::max(xhi, s.location.x);
            ylo = std::min(ylo, s.location.y); yhi = std::max(yhi, s.location.y);
        }
    const int hs = flags.heatmap_size;
    std::vector<double> values(static_cast<std::size_t>(hs) * static_cast<std::size_t>(hs), 0.0);
    for (int iy = 0; iy < hs; ++iy)
        for (int ix = 0; ix < hs; ++ix) {
            const GeoPoint p{xlo + (xhi - xlo) * ix / (hs - 1.0),
                             ylo + (yhi - ylo) * iy / (hs - 1.0)};
            values[static_cast<std::size_t>(iy) * hs + ix] = predictor.predict(p, ts).fused;
        }
    write_text(flags.out_dir + "/heatmap.svg", svg::heat_map(values, hs, "Fused prediction"));

    json summary;
    summary["plots"] = {flags.out_dir + "/scatter.svg", flags.out_dir + "/fidelity.svg",
                        flags.out_dir + "/heatmap.svg"};
    out << summary.dump(2) << "\n";
    return 0;
}

struct BenchFlags {
    std::string data_path;
    std::uint64_t seed = 0;
    int epochs = 2;
    TrainConfig config;
};

int run_bench(const BenchFlags& flags, std::ostream& out) {
    TrainConfig config = flags.config;
    config.seed = flags.seed;
    config.max_epochs = flags.epochs;
    config.patience = flags.epochs + 1;
    const MultiSourceDataset dataset = load_csv(flags.data_path);
    const auto splits = split(dataset, config.fractions, config.seed);

    std::vector<int> dims;
    for (const auto& src : dataset.sources) dims.push_back(src.feature_dim);
    TrainState state;
    state.params = ModelParams::create(dataset.num_sources(), std::move(dims), config.hidden_dim,
                                       config.num_layers, Rng::derive(config.seed, "init"));
    state.shuffle_rng = Rng(Rng::derive(config.seed, "shuffle"));
    const Predictor predictor(state.params, dataset, config.k_neighbors);

    auto epochs_ms = json::array();
    double total = 0.0;
    for (int e = 0; e < flags.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        train_epoch(state, predictor, splits, config);
        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        epochs_ms.push_back(ms);
        total += ms;
    }
    json j;
    j["epoch_ms"] = std::move(epochs_ms);
    j["mean_ms"] = total / flags.epochs;
    j["train_samples_per_epoch"] = [&] {
        std::size_t c = 0;
        for (const auto& s : splits) c += s.train.size();
        return c;
    }();
    out << j.dump(2) << "\n";
    return 0;
}

void add_train_options(CLI::App* cmd, TrainFlags& flags) {
    cmd->add_option("--data", flags.data_path, "dataset CSV")->required();
    cmd->add_option("--seed", flags.seed, "RNG seed")->required();
    cmd->add_option("--out-dir", flags.out_dir, "output directory");
    cmd->add_option("--lr", flags.config.learning_rate, "learning rate");
    cmd->add_option("--max-epochs", flags.config.max_epochs, "epoch cap");
    cmd->add_option("--patience", flags.config.patience, "early-stop patience");
    cmd->add_option("--k", flags.config.k_neighbors, "KNN neighbor count");
    cmd->add_option("--layers", flags.config.num_layers, "graph conv layers");
    cmd->add_option("--hidden", flags.config.hidden_dim, "hidden width");
    cmd->add_option("--batch", flags.config.batch_size, "samples per optimizer step");
    cmd->add_option("--mode", flags.mode, "full | single-source=<i> | frozen-fidelity");
    cmd->add_flag("--strict-order", flags.config.strict_order,
                  "iterate sources then samples in index order (no shuffling)");
    cmd->add_option("--resume", flags.resume_path, "checkpoint to resume from");
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Deep multi-source spatial prediction"};
    app.require_subcommand(1);
    CommonFlags common;
    app.add_flag("--json-errors", common.json_errors, "machine-readable errors on stderr");

    GenScrFlags gen;
    auto* gen_cmd = app.add_subcommand("gen-scr", "generate the synthetic SCR benchmark");
    gen_cmd->add_option("--seed", gen.seed, "RNG seed")->required();
    gen_cmd->add_option("--out-dir", gen.out_dir, "output directory");
    gen_cmd->add_option("--n-high", gen.config.n_high, "high-quality sample count");
    gen_cmd->add_option("--n-low", gen.config.n_low, "low-quality sample count");
    gen_cmd->add_option("--noise-sigma", gen.config.noise_sigma, "noise std on the low source");
    gen_cmd->add_option("--grid", gen.config.grid_size, "latent field grid size");
    gen_cmd->add_option("--length-scale", gen.config.length_scale, "field length scale");
    gen_cmd->add_option("--fields", gen.config.num_fields, "latent field count");
    gen_cmd->add_option("--truth-grid", gen.config.truth_grid_size, "truth grid size");

    TrainFlags train;
    auto* train_cmd = app.add_subcommand("train", "run the masked self-consistent training loop");
    add_train_options(train_cmd, train);

    PredictFlags predict;
    auto* predict_cmd = app.add_subcommand("predict", "predict at locations or masked samples");
    predict_cmd->add_option("--checkpoint", predict.checkpoint_path, "trained checkpoint")->required();
    predict_cmd->add_option("--data", predict.data_path, "dataset CSV")->required();
    predict_cmd->add_option("--locations", predict.locations_path, "locations CSV (x,y[,timestamp])");
    predict_cmd->add_option("--masked-samples", predict.masked_source,
                            "predict each sample of this source through the masked path");
    predict_cmd->add_option("--out", predict.out_path, "predictions CSV")->required();

    EvalFlags eval;
    auto* eval_cmd = app.add_subcommand("eval", "score test-split predictions against a reference");
    eval_cmd->add_option("--checkpoint", eval.checkpoint_path, "trained checkpoint")->required();
    eval_cmd->add_option("--data", eval.data_path, "dataset CSV")->required();
    eval_cmd->add_option("--reference", eval.reference, "source=<i> | truth=<csv>")->required();
    eval_cmd->add_option("--split-seed", eval.split_seed, "seed the split was made with")->required();
    eval_cmd->add_option("--out", eval.out_path, "metrics report JSON");
    eval_cmd->add_option("--residuals", eval.residuals_path, "per-sample residual CSV");

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect-fidelity", "print per-source logits and scores");
    inspect_cmd->add_option("--checkpoint", inspect_path, "checkpoint")->required();

    PlotFlags plot;
    auto* plot_cmd = app.add_subcommand("plot", "emit scatter/heatmap/fidelity SVGs");
    plot_cmd->add_option("--checkpoint", plot.checkpoint_path, "trained checkpoint")->required();
    plot_cmd->add_option("--data", plot.data_path, "dataset CSV")->required();
    plot_cmd->add_option("--reference", plot.reference, "source=<i> | truth=<csv>")->required();
    plot_cmd->add_option("--split-seed", plot.split_seed, "seed the split was made with")->required();
    plot_cmd->add_option("--out-dir", plot.out_dir, "output directory");
    plot_cmd->add_option("--heatmap-size", plot.heatmap_size, "heat map resolution");

    BenchFlags bench;
    auto* bench_cmd = app.add_subcommand("bench", "time training epochs");
    bench_cmd->add_option("--data", bench.data_path, "dataset CSV")->required();
    bench_cmd->add_option("--seed", bench.seed, "RNG seed")->required();
    bench_cmd->add_option("--epochs", bench.epochs, "epochs to time");
    bench_cmd->add_option("--k", bench.config.k_neighbors, "KNN neighbor count");

    const auto emit_error = [&](ErrorKind kind, const std::string& code, const std::string& what) {
        if (common.json_errors) {
            json j;
            j["error"] = code;
            j["message"] = what;
            err << j.dump() << "\n";
        } else {
            err << "error: " << what << "\n";
        }
        switch (kind) {
            case ErrorKind::usage: return 2;
            case ErrorKind::data: return 3;
            case ErrorKind::numeric: return 4;
        }
        return 4;
    };

    try {
        std::vector<const char*> argv;
        argv.push_back("dmsp");
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            out << app.help();
            return 0;
        }
        return emit_error(ErrorKind::usage, "usage error", e.what());
    }

    try {
        if (gen_cmd->parsed()) return run_gen_scr(gen, out);
        if (train_cmd->parsed()) return run_train(train, out);
        if (predict_cmd->parsed()) {
            if (predict.locations_path.empty() == (predict.masked_source < 0))
                throw usage_error("invalid config",
                                  "exactly one of --locations / --masked-samples required");
            return run_predict(predict, out);
        }
        if (eval_cmd->parsed()) return run_eval(eval, out);
        if (inspect_cmd->parsed()) return run_inspect_fidelity(inspect_path, out);
        if (plot_cmd->parsed()) return run_plot(plot, out);
        if (bench_cmd->parsed()) return run_bench(bench, out);
        return emit_error(ErrorKind::usage, "usage error", "no subcommand");
    } catch (const Error& e) {
        return emit_error(e.kind(), e.code(), e.what());
    } catch (const std::exception& e) {
        return emit_error(ErrorKind::numeric, "internal error", e.what());
    }
}

}  // namespace dmsp::cli
