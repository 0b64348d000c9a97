/*
 * cli.hpp
 *
 * Command-line front end. `run` parses arguments and dispatches to the
 * subcommands; exit status 0 on success, 1 on usage errors, 2 on data or
 * convergence errors. Progress goes to the diagnostic stream, results to
 * files or (for summarize, evaluate, predict, cascade, gradcheck) as JSON on
 * the output stream.
 */
#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <variant>

#include <CLI11.hpp>
#include <json.hpp>

#include "experiments.hpp"
#include "nn/gradcheck.hpp"

namespace strokelab::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Environment variable consulted when neither --data nor the config names
/// a dataset.
inline constexpr const char* kDataEnv = "STROKELAB_DATA";

enum class ModelKind { Logistic, Dense, Conv };

inline ModelKind parse_model(const std::string& s) {
    if (s == "logistic" || s == "lr") return ModelKind::Logistic;
    if (s == "dense" || s == "dnn") return ModelKind::Dense;
    if (s == "conv" || s == "cnn") return ModelKind::Conv;
    throw UsageError("cli", "unknown --model '" + s + "' (expected logistic|dense|conv)");
}

inline std::string model_name(ModelKind m) {
    switch (m) {
        case ModelKind::Logistic: return "logistic";
        case ModelKind::Dense: return "dense";
        case ModelKind::Conv: return "conv";
    }
    return "?";
}

/// Flag values plus the option handles that tell whether each was given.
/// Only given flags override the config file.
struct Overrides {
    std::string config_path;
    std::string data;
    std::uint64_t seed = 42;
    double test_fraction = 0.2;
    bool stratify = false;
    std::string impute = "mean";
    double threshold = 0.5;
    std::string out = "results";
    double lr = 0.01;
    long long epochs = 400;
    long long batch_size = 32;
    double dropout = 0.3;
    double l2 = 1.0;
    long long max_iterations = 10000;
    long long bootstrap_iterations = 1000;
    double bootstrap_level = 0.95;
    double screen = 0.3;
    double assess = 0.5;
    double validate = 0.5;
    bool parallel = false;

    /// Several subcommands register the same flag; only the parsed one
    /// can have a count.
    std::multimap<std::string, CLI::Option*> given;

    bool has(const std::string& name) const {
        auto [lo, hi] = given.equal_range(name);
        for (auto it = lo; it != hi; ++it)
            if (it->second->count() > 0) return true;
        return false;
    }
};

namespace detail {

template <typename T>
void add(CLI::App* sub, Overrides& o, const std::string& name, T& target, const std::string& help) {
    o.given.emplace(name, sub->add_option("--" + name, target, help)->capture_default_str());
}

inline void add_split_flags(CLI::App* sub, Overrides& o) {
    o.given.emplace("config", sub->add_option("--config", o.config_path, "Experiment config JSON"));
    o.given.emplace("data", sub->add_option("--data", o.data, std::string("Stroke CSV (default: config dataset, then $") + kDataEnv + ")"));
    add(sub, o, "seed", o.seed, "Seed for split, initialization, batching and bootstrap");
    add(sub, o, "test-fraction", o.test_fraction, "Held-out test fraction");
    o.given.emplace("stratify", sub->add_flag("--stratify", o.stratify, "Stratify the split by label"));
    add(sub, o, "impute", o.impute, "Missing BMI handling: mean|drop");
    add(sub, o, "threshold", o.threshold, "Decision threshold");
}

inline void add_train_flags(CLI::App* sub, Overrides& o) {
    add(sub, o, "lr", o.lr, "Network learning rate (Adam)");
    add(sub, o, "epochs", o.epochs, "Network training epochs");
    add(sub, o, "batch-size", o.batch_size, "Network mini-batch size");
    add(sub, o, "dropout", o.dropout, "Network dropout rate");
    add(sub, o, "l2", o.l2, "Logistic L2 strength");
    add(sub, o, "max-iterations", o.max_iterations, "Logistic iteration cap");
}

inline void add_bootstrap_flags(CLI::App* sub, Overrides& o) {
    add(sub, o, "bootstrap-iterations", o.bootstrap_iterations, "Bootstrap resamples");
    add(sub, o, "bootstrap-level", o.bootstrap_level, "Bootstrap confidence level");
}

inline void add_cascade_flags(CLI::App* sub, Overrides& o) {
    add(sub, o, "screen", o.screen, "Cascade screening threshold (logistic)");
    add(sub, o, "assess", o.assess, "Cascade assessment threshold (dense)");
    add(sub, o, "validate", o.validate, "Cascade validation threshold (conv)");
}

inline std::size_t positive(long long v, const std::string& flag) {
    if (v <= 0) throw UsageError("cli", "--" + flag + " must be a positive integer, got " + std::to_string(v));
    return static_cast<std::size_t>(v);
}

/// Config file (or defaults) with every given flag applied on top.
inline experiments::ExperimentConfig resolve_config(const Overrides& o) {
    auto c = o.has("config") ? experiments::ExperimentConfig::load(o.config_path) : experiments::ExperimentConfig{};
    if (o.has("data")) c.dataset = o.data;
    if (c.dataset.empty()) {
        if (const char* env = std::getenv(kDataEnv); env && *env) c.dataset = env;
    }
    if (o.has("seed")) c.seed = o.seed;
    if (o.has("test-fraction")) c.test_fraction = o.test_fraction;
    if (o.has("stratify")) c.stratified = o.stratify;
    if (o.has("impute")) c.impute = data::parse_impute(o.impute);
    if (o.has("threshold")) c.threshold = o.threshold;
    if (o.has("out")) c.output_dir = o.out;
    if (o.has("parallel")) c.parallel = o.parallel;
    for (auto* section : {&c.dense, &c.conv}) {
        if (o.has("lr")) section->train.learning_rate = o.lr;
        if (o.has("epochs")) section->train.epochs = positive(o.epochs, "epochs");
        if (o.has("batch-size")) section->train.batch_size = positive(o.batch_size, "batch-size");
        if (o.has("dropout")) section->spec.dropout_rate = o.dropout;
    }
    if (o.has("l2")) c.logistic.l2_strength = o.l2;
    if (o.has("max-iterations")) c.logistic.max_iterations = positive(o.max_iterations, "max-iterations");
    if (o.has("bootstrap-iterations")) c.bootstrap.iterations = positive(o.bootstrap_iterations, "bootstrap-iterations");
    if (o.has("bootstrap-level")) c.bootstrap.level = o.bootstrap_level;
    if (o.has("screen")) c.cascade.screen = o.screen;
    if (o.has("assess")) c.cascade.assess = o.assess;
    if (o.has("validate")) c.cascade.validate = o.validate;
    c.validate();
    return c;
}

inline data::RawTable load_table(const std::string& path, std::ostream& log) {
    if (path.empty()) {
        throw UsageError("cli", std::string("no dataset: pass --data, set it in the config, or set ") + kDataEnv);
    }
    auto table = data::load_dataset(path);
    log << "loaded " << table.size() << " rows from " << path << "\n";
    return table;
}

inline json read_json(const fs::path& path, const std::string& stage) {
    std::string text;
    try {
        text = nn::read_file(path);
    } catch (const DataError&) {
        throw DataError(stage, "cannot read '" + path.string() + "'");
    }
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(stage, path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    experiments::write_text(path, j.dump(2) + "\n");
}

/// Either kind of saved model, with its preprocessing and threshold.
struct LoadedModel {
    std::variant<logistic::LogisticModel, nn::NetworkModel<double>> model;

    const data::PreprocessArtifacts& artifacts() const {
        return std::visit([](const auto& m) -> const data::PreprocessArtifacts& { return m.preprocessing; }, model);
    }
    double threshold() const {
        if (auto* lr = std::get_if<logistic::LogisticModel>(&model)) return lr->threshold;
        return std::get<nn::NetworkModel<double>>(model).config.threshold;
    }
    std::string name() const {
        if (std::holds_alternative<logistic::LogisticModel>(model)) return "logistic";
        return nn::to_string(std::get<nn::NetworkModel<double>>(model).network.spec().variant);
    }
    std::vector<double> predict(const Matrix<double>& x) const {
        if (auto* lr = std::get_if<logistic::LogisticModel>(&model)) return lr->predict_proba(x);
        return std::get<nn::NetworkModel<double>>(model).network.predict_proba(x);
    }
};

inline LoadedModel load_model(const fs::path& path) {
    const auto j = read_json(path, "model");
    const auto kind = j.value("model", "");
    if (kind == "logistic") return {logistic::LogisticModel::from_json(j)};
    if (kind == "network") return {nn::load_network(path)};
    throw DataError("model", path.string() + " is neither a logistic nor a network model file");
}

inline void save_models(const experiments::ComparisonRun& run, const fs::path& dir) {
    fs::create_directories(dir);
    write_json(dir / "logistic.json", run.logistic.to_json());
    nn::save_network(run.dense, dir / "dense.json");
    nn::save_network(run.conv, dir / "conv.json");
}

inline std::string percent(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
    return buf;
}

inline void print_row(std::ostream& log, const experiments::EvalReport& e, std::optional<double> seconds) {
    log << "  " << e.model << std::string(10 - std::min<std::size_t>(e.model.size(), 9), ' ') << "acc "
        << percent(e.summary.accuracy) << "  prec " << percent(e.summary.precision) << "  rec "
        << percent(e.summary.recall) << "  f1 " << percent(e.summary.f1) << "  auc " << percent(e.auc);
    if (seconds) log << "  " << *seconds << " s";
    log << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// subcommands

inline int cmd_summarize(const Overrides& o, std::ostream& out, std::ostream& log) {
    const auto c = detail::resolve_config(o);
    const auto table = detail::load_table(c.dataset, log);
    const auto summary = experiments::dataset_summary(table);
    if (o.has("out")) {
        fs::create_directories(o.out);
        detail::write_json(fs::path(o.out) / "summary.json", summary.to_json());
        experiments::write_text(fs::path(o.out) / "histograms.csv", summary.histogram_csv());
        log << "wrote summary.json and histograms.csv to " << o.out << "\n";
    }
    out << summary.to_json().dump(2) << "\n";
    return kExitOk;
}

inline int cmd_train(const Overrides& o, const std::string& model, std::ostream& log) {
    const auto kind = parse_model(model);
    const auto c = detail::resolve_config(o);
    const auto table = detail::load_table(c.dataset, log);
    const auto prepared = data::prepare(table, c.pipeline());
    const fs::path dir = c.output_dir;
    fs::create_directories(dir / "models");
    log << "training " << model_name(kind) << " on " << prepared.train.size() << " rows\n";

    std::vector<double> scores;
    if (kind == ModelKind::Logistic) {
        auto fit = logistic::train_logreg(prepared.train, c.logistic);
        fit.model.threshold = c.threshold;
        fit.model.preprocessing = prepared.artifacts;
        log << "  " << fit.iterations << " iterations, converged " << (fit.converged ? "yes" : "no") << "\n";
        detail::write_json(dir / "models" / "logistic.json", fit.model.to_json());
        scores = fit.model.predict_proba(prepared.test.features);
    } else {
        const auto& section = kind == ModelKind::Dense ? c.dense : c.conv;
        const auto train = c.train_config(section);
        nn::NetworkModel<double> m{nn::build_network<double>(section.spec, c.seed), train,
                                   train.class_weights.value_or(data::class_weights(prepared.train.labels)),
                                   prepared.artifacts};
        const auto history = nn::train_network(m.network, prepared.train, prepared.test, train);
        experiments::write_text(dir / ("history_" + model_name(kind) + ".csv"), history.to_csv());
        nn::save_network(m, dir / "models" / (model_name(kind) + ".json"));
        scores = nn::predict_dataset(m.network, prepared.test);
    }
    const auto eval = experiments::evaluate_scores(model_name(kind), scores, prepared.test, c.threshold, c.bootstrap, c.seed);
    detail::write_json(dir / ("eval_" + model_name(kind) + ".json"), eval.to_json());
    detail::print_row(log, eval, std::nullopt);
    log << "wrote model and evaluation to " << dir.string() << "\n";
    return kExitOk;
}

/// Rebuilds the model's own split from its stored preprocessing settings and
/// scores the test rows.
inline int cmd_evaluate(const Overrides& o, const std::string& model_file, std::ostream& out, std::ostream& log) {
    const auto c = detail::resolve_config(o);
    const auto loaded = detail::load_model(model_file);
    const auto& a = loaded.artifacts();
    const auto table = detail::load_table(c.dataset, log);
    const auto prepared = data::prepare(table, {a.impute, a.test_fraction, a.seed, a.stratified});
    if (prepared.artifacts.fingerprint() != a.fingerprint()) {
        throw DataError("evaluate", "dataset does not reproduce the preprocessing the model was fitted with");
    }
    const double threshold = o.has("threshold") ? c.threshold : loaded.threshold();
    const auto eval = experiments::evaluate_scores(loaded.name(), loaded.predict(prepared.test.features),
                                                   prepared.test, threshold, c.bootstrap, a.seed);
    detail::print_row(log, eval, std::nullopt);
    if (o.has("out")) detail::write_json(o.out, eval.to_json());
    else out << eval.to_json().dump(2) << "\n";
    return kExitOk;
}

inline int cmd_compare(const Overrides& o, std::ostream& log) {
    const auto c = detail::resolve_config(o);
    const auto table = detail::load_table(c.dataset, log);
    log << "training logistic, dense and conv models" << (c.parallel ? " in parallel" : "") << "\n";
    const auto run = experiments::run_comparison(c, table);
    const fs::path dir = c.output_dir;
    const auto manifest = experiments::emit_report(run.report, dir);
    detail::save_models(run, dir / "models");
    const auto& r = run.report;
    log << "test rows: " << r.test_rows << "\n";
    detail::print_row(log, r.logistic, r.timing.logistic);
    detail::print_row(log, r.dense, r.timing.dense);
    detail::print_row(log, r.conv, r.timing.conv);
    log << "wrote " << manifest.files.size() << " report files and models to " << dir.string() << "\n";
    return kExitOk;
}

inline data::PatientRecord read_patient(const std::string& path) {
    return data::record_from_json(detail::read_json(path, "input"));
}

inline int cmd_predict(const Overrides& o, const std::string& model_file, const std::string& input, std::ostream& out) {
    const auto loaded = detail::load_model(model_file);
    const auto record = read_patient(input);
    const double threshold = o.has("threshold") ? o.threshold : loaded.threshold();
    if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("cli", "--threshold must lie in (0, 1)");
    const auto x = loaded.artifacts().transform(record);
    Matrix<double> row(1, x.size());
    std::copy(x.begin(), x.end(), row.data().begin());
    const double p = loaded.predict(row).front();
    out << json{{"model", loaded.name()},
                {"probability", p},
                {"threshold", threshold},
                {"label", metrics::classify(p, threshold)}}
               .dump(2)
        << "\n";
    return kExitOk;
}

inline int cmd_cascade(const Overrides& o, const std::string& models_dir, const std::string& input, std::ostream& out) {
    const auto c = detail::resolve_config(o);
    const fs::path dir = models_dir;
    const auto lr = logistic::LogisticModel::from_json(detail::read_json(dir / "logistic.json", "cascade"));
    const auto dense = nn::load_network(dir / "dense.json");
    const auto conv = nn::load_network(dir / "conv.json");
    const experiments::CascadeModels models{lr, dense, conv};
    const auto decision = experiments::cascade_predict(models, read_patient(input), c.cascade);
    out << decision.to_json().dump(2) << "\n";
    return kExitOk;
}

struct GradcheckOptions {
    std::string variant = "both";
    std::string precision = "double";
    long long seeds = 100;
    std::uint64_t first_seed = 0;
    double epsilon = 1e-4;
    std::optional<double> tolerance;
};

inline int cmd_gradcheck(const GradcheckOptions& g, std::ostream& out, std::ostream& log) {
    const auto n = detail::positive(g.seeds, "seeds");
    std::vector<nn::Variant> variants;
    if (g.variant == "both") variants = {nn::Variant::Dense, nn::Variant::Conv};
    else variants = {nn::parse_variant(g.variant)};
    if (g.precision != "double" && g.precision != "float") throw UsageError("cli", "--precision must be double or float");
    const bool single = g.precision == "float";
    const double tol = g.tolerance.value_or(single ? 1e-4 : 1e-6);

    json results = json::array();
    std::size_t failures = 0;
    for (auto v : variants) {
        double worst = 0.0;
        std::size_t checked = 0, skipped = 0, failed = 0;
        for (std::uint64_t s = g.first_seed; s < g.first_seed + n; ++s) {
            const auto r = single ? nn::check_random_network<float>(s, v, g.epsilon)
                                  : nn::check_random_network<double>(s, v, g.epsilon);
            worst = std::max(worst, r.max_relative_error);
            checked += r.checked;
            skipped += r.skipped;
            if (!(r.max_relative_error < tol)) {
                ++failed;
                log << "  " << nn::to_string(v) << " seed " << s << ": " << r.max_relative_error << " at "
                    << r.worst_parameter << "\n";
            }
        }
        log << nn::to_string(v) << ": " << (n - failed) << "/" << n << " seeds below " << tol << ", max " << worst << "\n";
        results.push_back({{"variant", nn::to_string(v)},
                           {"seeds", n},
                           {"passed", n - failed},
                           {"max_relative_error", worst},
                           {"coordinates_checked", checked},
                           {"coordinates_skipped", skipped}});
        failures += failed;
    }
    out << json{{"precision", g.precision}, {"tolerance", tol}, {"epsilon", g.epsilon}, {"results", results}}.dump(2)
        << "\n";
    if (failures) throw ConvergenceError("gradcheck", std::to_string(failures) + " seed(s) exceeded the tolerance");
    return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses `argv` and runs one subcommand; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"strokelab: stroke-risk models and reports"};
    app.name("strokelab");
    app.require_subcommand(1);

    Overrides o;
    std::string model = "logistic", model_file, input, models_dir = "results/models";
    GradcheckOptions g;

    auto* summarize = app.add_subcommand("summarize", "Summary statistics of a stroke CSV");
    o.given.emplace("config", summarize->add_option("--config", o.config_path, "Experiment config JSON"));
    o.given.emplace("data", summarize->add_option("--data", o.data, std::string("Stroke CSV (default: $") + kDataEnv + ")"));
    o.given.emplace("out", summarize->add_option("--out", o.out, "Also write summary.json and histograms.csv here"));

    auto* train = app.add_subcommand("train", "Train one model and evaluate it on the test split");
    train->add_option("--model", model, "logistic|dense|conv (aliases lr, dnn, cnn)")->capture_default_str();
    detail::add_split_flags(train, o);
    detail::add_train_flags(train, o);
    detail::add_bootstrap_flags(train, o);
    detail::add(train, o, "out", o.out, "Output directory");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a saved model on its own test split");
    evaluate->add_option("--model-file", model_file, "Saved model JSON")->required();
    o.given.emplace("config", evaluate->add_option("--config", o.config_path, "Experiment config JSON"));
    o.given.emplace("data", evaluate->add_option("--data", o.data, "Stroke CSV"));
    detail::add(evaluate, o, "threshold", o.threshold, "Decision threshold (default: the model's)");
    detail::add_bootstrap_flags(evaluate, o);
    o.given.emplace("out", evaluate->add_option("--out", o.out, "Write the evaluation JSON here instead of stdout"));

    auto* compare = app.add_subcommand("compare", "Train and compare all three models; write the report");
    detail::add_split_flags(compare, o);
    detail::add_train_flags(compare, o);
    detail::add_bootstrap_flags(compare, o);
    detail::add_cascade_flags(compare, o);
    detail::add(compare, o, "out", o.out, "Output directory");
    o.given.emplace("parallel", compare->add_flag("--parallel", o.parallel, "Train the three models concurrently"));

    auto* predict = app.add_subcommand("predict", "Score one raw patient record");
    predict->add_option("--model-file", model_file, "Saved model JSON")->required();
    predict->add_option("--input", input, "Patient record JSON")->required();
    o.given.emplace("threshold", predict->add_option("--threshold", o.threshold, "Decision threshold (default: the model's)"));

    auto* cascade = app.add_subcommand("cascade", "Run the three-stage screening cascade on one record");
    cascade->add_option("--models", models_dir, "Directory with logistic.json, dense.json, conv.json")
        ->capture_default_str();
    cascade->add_option("--input", input, "Patient record JSON")->required();
    o.given.emplace("config", cascade->add_option("--config", o.config_path, "Experiment config JSON (cascade thresholds)"));
    detail::add_cascade_flags(cascade, o);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check on random small networks");
    gradcheck->add_option("--variant", g.variant, "dense|conv|both")->capture_default_str();
    gradcheck->add_option("--precision", g.precision, "double|float")->capture_default_str();
    gradcheck->add_option("--seeds", g.seeds, "Number of random seeds")->capture_default_str();
    gradcheck->add_option("--first-seed", g.first_seed, "First seed")->capture_default_str();
    gradcheck->add_option("--epsilon", g.epsilon, "Finite-difference step")->capture_default_str();
    gradcheck->add_option("--tolerance", g.tolerance, "Relative-error limit (default 1e-6 double, 1e-4 float)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*summarize) return cmd_summarize(o, out, err);
        if (*train) return cmd_train(o, model, err);
        if (*evaluate) return cmd_evaluate(o, model_file, out, err);
        if (*compare) return cmd_compare(o, err);
        if (*predict) return cmd_predict(o, model_file, input, out);
        if (*cascade) return cmd_cascade(o, models_dir, input, out);
        if (*gradcheck) return cmd_gradcheck(g, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "error: io: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace strokelab::cli
