/*
 * experiments.hpp
 *
 * Three-model comparison (logistic regression, dense network, conv network)
 * on one shared split, report files, dataset summaries and the cascade
 * screening rule.
 */
#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "data.hpp"
#include "logistic.hpp"
#include "metrics.hpp"
#include "nn/io.hpp"
#include "nn/network.hpp"
#include "nn/training.hpp"

namespace strokelab::experiments {

using json = nlohmann::json;

namespace detail {

/// Throws when `j` is not an object or holds a key outside `allowed`.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw UsageError("config", where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (auto a : allowed) known = known || a == key;
        if (!known) throw UsageError("config", "unknown key '" + key + "' in " + where);
    }
}

inline std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw UsageError("config", where + "." + key + ": " + e.what());
    }
}

}  // namespace detail

struct BootstrapSettings {
    std::size_t iterations = 1000;
    double level = 0.95;
    friend bool operator==(const BootstrapSettings&, const BootstrapSettings&) = default;
};

/// Stage thresholds of the cascade: screen (logistic), assess (dense),
/// validate (conv).
struct CascadeThresholds {
    double screen = 0.3;
    double assess = 0.5;
    double validate = 0.5;

    void check() const {
        for (double t : {screen, assess, validate})
            if (!(t > 0.0 && t < 1.0)) throw UsageError("config", "cascade thresholds must lie in (0, 1)");
    }
    json to_json() const { return json{{"screen", screen}, {"assess", assess}, {"validate", validate}}; }
    static CascadeThresholds from_json(const json& j) {
        detail::check_keys(j, {"screen", "assess", "validate"}, "cascade");
        CascadeThresholds t;
        if (j.contains("screen")) t.screen = detail::get<double>(j, "screen", "cascade");
        if (j.contains("assess")) t.assess = detail::get<double>(j, "assess", "cascade");
        if (j.contains("validate")) t.validate = detail::get<double>(j, "validate", "cascade");
        return t;
    }
    friend bool operator==(const CascadeThresholds&, const CascadeThresholds&) = default;
};

struct NetworkSection {
    nn::NetworkSpec spec;
    nn::TrainConfig train;
    friend bool operator==(const NetworkSection& a, const NetworkSection& b) {
        return a.spec == b.spec && a.train.to_json() == b.train.to_json();
    }
};

/// Everything a comparison run depends on. The single `seed` drives the
/// split, network initialization, dropout, batch order and the bootstrap;
/// the single `threshold` applies to all three models.
struct ExperimentConfig {
    static constexpr int kSchemaVersion = 1;

    std::string dataset;
    std::uint64_t seed = 42;
    double test_fraction = 0.2;
    bool stratified = false;
    data::ImputeStrategy impute = data::ImputeStrategy::Mean;
    double threshold = 0.5;
    logistic::LogRegConfig logistic;
    NetworkSection dense{nn::NetworkSpec::dense_default(), {}};
    NetworkSection conv{nn::NetworkSpec::conv_default(), {}};
    BootstrapSettings bootstrap;
    CascadeThresholds cascade;
    std::string output_dir = "results";
    /// Train the three models concurrently; results are identical either way.
    bool parallel = false;

    void validate() const {
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("config", "test_fraction must lie in (0, 1)");
        if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("config", "threshold must lie in (0, 1)");
        if (bootstrap.iterations == 0) throw UsageError("config", "bootstrap.iterations must be positive");
        if (!(bootstrap.level > 0.0 && bootstrap.level < 1.0)) throw UsageError("config", "bootstrap.level must lie in (0, 1)");
        logistic.validate();
        for (const auto* section : {&dense, &conv}) {
            section->spec.validate_reproduction();
            section->train.validate();
        }
        if (dense.spec.variant != nn::Variant::Dense) throw UsageError("config", "dense.spec must be a dense network");
        if (conv.spec.variant != nn::Variant::Conv) throw UsageError("config", "conv.spec must be a conv network");
        cascade.check();
    }

    data::PipelineOptions pipeline() const { return {impute, test_fraction, seed, stratified}; }

    /// Train settings with the shared seed and threshold applied.
    nn::TrainConfig train_config(const NetworkSection& section) const {
        auto t = section.train;
        t.seed = seed;
        t.threshold = threshold;
        return t;
    }

    /// `with_paths` false drops dataset and output paths, for the echo in
    /// report.json, which must not depend on where the run writes.
    json to_json(bool with_paths = true) const {
        auto section = [](const NetworkSection& s) {
            json train{{"learning_rate", s.train.learning_rate},
                       {"epochs", s.train.epochs},
                       {"batch_size", s.train.batch_size}};
            train["class_weights"] = s.train.class_weights ? s.train.class_weights->to_json() : json(nullptr);
            return json{{"spec", s.spec.to_json()}, {"train", train}};
        };
        json lr{{"l2_strength", logistic.l2_strength},
                {"max_iterations", logistic.max_iterations},
                {"learning_rate", logistic.learning_rate},
                {"gradient_tolerance", logistic.gradient_tolerance}};
        lr["class_weights"] = logistic.class_weights ? logistic.class_weights->to_json() : json(nullptr);
        json j{{"schema_version", kSchemaVersion},
               {"seed", seed},
               {"test_fraction", test_fraction},
               {"stratified", stratified},
               {"impute", data::to_string(impute)},
               {"threshold", threshold},
               {"logistic", lr},
               {"dense", section(dense)},
               {"conv", section(conv)},
               {"bootstrap", {{"iterations", bootstrap.iterations}, {"level", bootstrap.level}}},
               {"cascade", cascade.to_json()}};
        if (with_paths) {
            j["dataset"] = dataset;
            j["output_dir"] = output_dir;
            j["parallel"] = parallel;
        }
        return j;
    }

    /// Missing keys keep their defaults; unknown keys are rejected.
    static ExperimentConfig from_json(const json& j) {
        using detail::get;
        detail::check_keys(j,
                           {"schema_version", "dataset", "seed", "test_fraction", "stratified", "impute", "threshold",
                            "logistic", "dense", "conv", "bootstrap", "cascade", "output_dir", "parallel"},
                           "config");
        if (!j.contains("schema_version")) throw UsageError("config", "missing schema_version");
        if (get<int>(j, "schema_version", "config") != kSchemaVersion) {
            throw UsageError("config", "unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
        }
        ExperimentConfig c;
        if (j.contains("dataset")) c.dataset = get<std::string>(j, "dataset", "config");
        if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", "config");
        if (j.contains("test_fraction")) c.test_fraction = get<double>(j, "test_fraction", "config");
        if (j.contains("stratified")) c.stratified = get<bool>(j, "stratified", "config");
        if (j.contains("impute")) c.impute = data::parse_impute(get<std::string>(j, "impute", "config"));
        if (j.contains("threshold")) c.threshold = get<double>(j, "threshold", "config");
        if (j.contains("output_dir")) c.output_dir = get<std::string>(j, "output_dir", "config");
        if (j.contains("parallel")) c.parallel = get<bool>(j, "parallel", "config");
        if (j.contains("logistic")) {
            const auto& l = j.at("logistic");
            detail::check_keys(l, {"l2_strength", "max_iterations", "learning_rate", "gradient_tolerance", "class_weights"},
                               "logistic");
            if (l.contains("l2_strength")) c.logistic.l2_strength = get<double>(l, "l2_strength", "logistic");
            if (l.contains("max_iterations")) c.logistic.max_iterations = get<std::size_t>(l, "max_iterations", "logistic");
            if (l.contains("learning_rate")) c.logistic.learning_rate = get<double>(l, "learning_rate", "logistic");
            if (l.contains("gradient_tolerance")) {
                c.logistic.gradient_tolerance = get<double>(l, "gradient_tolerance", "logistic");
            }
            if (l.contains("class_weights") && !l.at("class_weights").is_null()) {
                c.logistic.class_weights = data::ClassWeights::from_json(l.at("class_weights"));
            }
        }
        auto read_section = [](const json& s, NetworkSection& out, const std::string& where) {
            detail::check_keys(s, {"spec", "train"}, where);
            if (s.contains("spec")) {
                detail::check_keys(s.at("spec"),
                                   {"variant", "input_size", "conv_blocks", "dense_widths", "dropout_rate", "batch_norm",
                                    "output_size"},
                                   where + ".spec");
                json merged = out.spec.to_json();
                merged.update(s.at("spec"));
                try {
                    out.spec = nn::NetworkSpec::from_json(merged);
                } catch (const json::exception& e) {
                    throw UsageError("config", where + ".spec: " + e.what());
                }
            }
            if (s.contains("train")) {
                detail::check_keys(s.at("train"), {"learning_rate", "epochs", "batch_size", "class_weights"},
                                   where + ".train");
                try {
                    out.train = nn::TrainConfig::from_json(s.at("train"), out.train);
                } catch (const json::exception& e) {
                    throw UsageError("config", where + ".train: " + e.what());
                }
            }
        };
        if (j.contains("dense")) read_section(j.at("dense"), c.dense, "dense");
        if (j.contains("conv")) read_section(j.at("conv"), c.conv, "conv");
        if (j.contains("bootstrap")) {
            const auto& b = j.at("bootstrap");
            detail::check_keys(b, {"iterations", "level"}, "bootstrap");
            if (b.contains("iterations")) c.bootstrap.iterations = get<std::size_t>(b, "iterations", "bootstrap");
            if (b.contains("level")) c.bootstrap.level = get<double>(b, "level", "bootstrap");
        }
        if (j.contains("cascade")) c.cascade = CascadeThresholds::from_json(j.at("cascade"));
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("config", "cannot read config file '" + path.string() + "'");
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw UsageError("config", path.string() + ": " + e.what());
        }
        return from_json(j);
    }
};

// ---------------------------------------------------------------------------
// dataset summary

struct NumericSummary {
    std::string column;
    std::size_t count = 0;
    std::size_t missing = 0;
    double min = 0, max = 0, mean = 0, std = 0, q1 = 0, median = 0, q3 = 0;
    /// 20 equal-width bins over [min, max]; the last bin is closed.
    std::vector<std::size_t> histogram;

    double bin_width() const {
        return histogram.empty() ? 0.0 : (max - min) / static_cast<double>(histogram.size());
    }
    friend bool operator==(const NumericSummary&, const NumericSummary&) = default;
};

struct CategoricalSummary {
    std::string column;
    /// Level -> count, levels in lexicographic order.
    std::map<std::string, std::size_t> counts;
    friend bool operator==(const CategoricalSummary&, const CategoricalSummary&) = default;
};

struct DatasetSummary {
    std::size_t rows = 0;
    std::size_t positives = 0;
    double positive_fraction = 0.0;
    std::vector<NumericSummary> numeric;
    std::vector<CategoricalSummary> categorical;

    json to_json() const {
        json num = json::array();
        for (const auto& s : numeric) {
            num.push_back({{"column", s.column}, {"count", s.count}, {"missing", s.missing}, {"min", s.min},
                           {"max", s.max},       {"mean", s.mean},   {"std", s.std},         {"q1", s.q1},
                           {"median", s.median}, {"q3", s.q3},       {"histogram", s.histogram}});
        }
        json cat = json::array();
        for (const auto& s : categorical) cat.push_back({{"column", s.column}, {"counts", s.counts}});
        return json{{"rows", rows},
                    {"positives", positives},
                    {"positive_fraction", positive_fraction},
                    {"numeric", num},
                    {"categorical", cat}};
    }

    static DatasetSummary from_json(const json& j) {
        DatasetSummary d;
        d.rows = j.at("rows").get<std::size_t>();
        d.positives = j.at("positives").get<std::size_t>();
        d.positive_fraction = j.at("positive_fraction").get<double>();
        for (const auto& s : j.at("numeric")) {
            NumericSummary n;
            n.column = s.at("column").get<std::string>();
            n.count = s.at("count").get<std::size_t>();
            n.missing = s.at("missing").get<std::size_t>();
            n.min = s.at("min").get<double>();
            n.max = s.at("max").get<double>();
            n.mean = s.at("mean").get<double>();
            n.std = s.at("std").get<double>();
            n.q1 = s.at("q1").get<double>();
            n.median = s.at("median").get<double>();
            n.q3 = s.at("q3").get<double>();
            n.histogram = s.at("histogram").get<std::vector<std::size_t>>();
            d.numeric.push_back(std::move(n));
        }
        for (const auto& s : j.at("categorical")) {
            d.categorical.push_back({s.at("column").get<std::string>(),
                                     s.at("counts").get<std::map<std::string, std::size_t>>()});
        }
        return d;
    }

    /// One row per histogram bin: column,bin,lower,upper,count.
    std::string histogram_csv() const {
        std::string out = "column,bin,lower,upper,count\n";
        for (const auto& s : numeric) {
            for (std::size_t b = 0; b < s.histogram.size(); ++b) {
                const double lo = s.min + s.bin_width() * static_cast<double>(b);
                const double hi = b + 1 == s.histogram.size() ? s.max : s.min + s.bin_width() * static_cast<double>(b + 1);
                out += s.column + "," + std::to_string(b) + "," + detail::fmt(lo) + "," + detail::fmt(hi) + "," +
                       std::to_string(s.histogram[b]) + "\n";
            }
        }
        return out;
    }

    friend bool operator==(const DatasetSummary&, const DatasetSummary&) = default;
};

inline NumericSummary summarize_column(std::string column, std::vector<double> values, std::size_t missing,
                                       std::size_t bins = 20) {
    NumericSummary s;
    s.column = std::move(column);
    s.count = values.size();
    s.missing = missing;
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    s.min = values.front();
    s.max = values.back();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size()));
    s.q1 = metrics::quantile_sorted(values, 0.25);
    s.median = metrics::quantile_sorted(values, 0.5);
    s.q3 = metrics::quantile_sorted(values, 0.75);
    s.histogram.assign(bins, 0);
    const double width = (s.max - s.min) / static_cast<double>(bins);
    for (double v : values) {
        auto b = width > 0.0 ? static_cast<std::size_t>((v - s.min) / width) : 0;
        ++s.histogram[std::min(b, bins - 1)];
    }
    return s;
}

/// Numeric statistics for age, glucose and BMI; level counts for every
/// categorical and binary column; class balance.
inline DatasetSummary dataset_summary(const data::RawTable& table) {
    if (table.empty()) throw DataError("summarize", "table has no rows");
    DatasetSummary d;
    d.rows = table.size();
    for (const auto& r : table.rows) d.positives += static_cast<std::size_t>(r.stroke == 1);
    d.positive_fraction = static_cast<double>(d.positives) / static_cast<double>(d.rows);

    std::vector<double> age, glucose, bmi;
    for (const auto& r : table.rows) {
        age.push_back(r.age);
        glucose.push_back(r.avg_glucose_level);
        if (r.bmi) bmi.push_back(*r.bmi);
    }
    d.numeric.push_back(summarize_column("age", std::move(age), 0));
    d.numeric.push_back(summarize_column("avg_glucose_level", std::move(glucose), 0));
    const std::size_t missing = table.missing_bmi();
    d.numeric.push_back(summarize_column("bmi", std::move(bmi), missing));

    for (auto column : data::kCategoricalColumns) {
        CategoricalSummary c{std::string(column), {}};
        for (const auto& r : table.rows) ++c.counts[r.categorical(column)];
        d.categorical.push_back(std::move(c));
    }
    CategoricalSummary hyper{"hypertension", {}}, heart{"heart_disease", {}}, stroke{"stroke", {}};
    for (const auto& r : table.rows) {
        ++hyper.counts[std::to_string(r.hypertension)];
        ++heart.counts[std::to_string(r.heart_disease)];
        ++stroke.counts[std::to_string(r.stroke)];
    }
    d.categorical.push_back(std::move(hyper));
    d.categorical.push_back(std::move(heart));
    d.categorical.push_back(std::move(stroke));
    return d;
}

// ---------------------------------------------------------------------------
// evaluation

struct IntervalSummary {
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::size_t n_degenerate = 0;
    friend bool operator==(const IntervalSummary&, const IntervalSummary&) = default;
};

/// Test-split evaluation of one model. `ci_lower`/`ci_upper` in the JSON
/// refer to accuracy; `intervals` carries every metric.
struct EvalReport {
    std::string model;
    double threshold = 0.5;
    metrics::ConfusionMatrix confusion;
    metrics::SummaryMetrics summary;
    double auc = 0.0;
    std::map<std::string, IntervalSummary> intervals;
    BootstrapSettings bootstrap;
    std::uint64_t bootstrap_seed = 0;
    metrics::RocCurve roc;
    std::vector<std::int64_t> test_row_ids;

    const IntervalSummary& accuracy_interval() const { return intervals.at("accuracy"); }

    json to_json() const {
        json ints = json::object();
        for (const auto& [name, i] : intervals) {
            ints[name] = {{"estimate", i.estimate},
                          {"ci_lower", i.lower},
                          {"ci_upper", i.upper},
                          {"n_degenerate_resamples", i.n_degenerate}};
        }
        json roc_points = json::array();
        for (const auto& p : roc.points) {
            roc_points.push_back({std::isinf(p.threshold) ? json(nullptr) : json(p.threshold), p.fpr, p.tpr});
        }
        const auto& acc = intervals.count("accuracy") ? intervals.at("accuracy") : IntervalSummary{};
        return json{{"model", model},
                    {"threshold", threshold},
                    {"accuracy", summary.accuracy},
                    {"precision", summary.precision},
                    {"recall", summary.recall},
                    {"f1", summary.f1},
                    {"auc", auc},
                    {"ci_lower", acc.lower},
                    {"ci_upper", acc.upper},
                    {"n_degenerate_resamples", acc.n_degenerate},
                    {"undefined",
                     {{"precision", summary.precision_undefined},
                      {"recall", summary.recall_undefined},
                      {"f1", summary.f1_undefined}}},
                    {"confusion", {{"tp", confusion.tp}, {"fp", confusion.fp}, {"tn", confusion.tn}, {"fn", confusion.fn}}},
                    {"intervals", ints},
                    {"bootstrap",
                     {{"iterations", bootstrap.iterations}, {"level", bootstrap.level}, {"seed", bootstrap_seed}}},
                    {"roc", roc_points},
                    {"test_row_ids", test_row_ids}};
    }

    static EvalReport from_json(const json& j) {
        EvalReport e;
        e.model = j.at("model").get<std::string>();
        e.threshold = j.at("threshold").get<double>();
        e.summary.accuracy = j.at("accuracy").get<double>();
        e.summary.precision = j.at("precision").get<double>();
        e.summary.recall = j.at("recall").get<double>();
        e.summary.f1 = j.at("f1").get<double>();
        e.summary.precision_undefined = j.at("undefined").at("precision").get<bool>();
        e.summary.recall_undefined = j.at("undefined").at("recall").get<bool>();
        e.summary.f1_undefined = j.at("undefined").at("f1").get<bool>();
        e.auc = j.at("auc").get<double>();
        const auto& c = j.at("confusion");
        e.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                       c.at("fn").get<std::size_t>()};
        for (const auto& [name, i] : j.at("intervals").items()) {
            e.intervals[name] = {i.at("estimate").get<double>(), i.at("ci_lower").get<double>(),
                                 i.at("ci_upper").get<double>(), i.at("n_degenerate_resamples").get<std::size_t>()};
        }
        const auto& b = j.at("bootstrap");
        e.bootstrap = {b.at("iterations").get<std::size_t>(), b.at("level").get<double>()};
        e.bootstrap_seed = b.at("seed").get<std::uint64_t>();
        for (const auto& p : j.at("roc")) {
            const double t = p.at(0).is_null() ? std::numeric_limits<double>::infinity() : p.at(0).get<double>();
            e.roc.points.push_back({t, p.at(1).get<double>(), p.at(2).get<double>()});
        }
        e.test_row_ids = j.at("test_row_ids").get<std::vector<std::int64_t>>();
        return e;
    }

    std::string roc_csv() const {
        std::string out = "threshold,fpr,tpr\n";
        for (const auto& p : roc.points) out += detail::fmt(p.threshold) + "," + detail::fmt(p.fpr) + "," + detail::fmt(p.tpr) + "\n";
        return out;
    }

    std::string confusion_csv() const {
        return "actual,predicted_0,predicted_1\n0," + std::to_string(confusion.tn) + "," + std::to_string(confusion.fp) +
               "\n1," + std::to_string(confusion.fn) + "," + std::to_string(confusion.tp) + "\n";
    }

    friend bool operator==(const EvalReport& a, const EvalReport& b) {
        return a.to_json() == b.to_json();
    }
};

/// Metrics, ROC and bootstrap intervals for one model's test scores.
inline EvalReport evaluate_scores(std::string model, std::span<const double> scores, const data::Dataset& test,
                                  double threshold, const BootstrapSettings& bootstrap, std::uint64_t seed) {
    EvalReport e;
    e.model = std::move(model);
    e.threshold = threshold;
    e.confusion = metrics::confusion_matrix(metrics::classify_all(scores, threshold), test.labels);
    e.summary = metrics::summary_metrics(e.confusion);
    e.roc = metrics::roc_curve(scores, test.labels);
    e.auc = metrics::auc(e.roc);
    e.bootstrap = bootstrap;
    e.bootstrap_seed = seed;
    for (auto m : {metrics::Metric::Accuracy, metrics::Metric::Precision, metrics::Metric::Recall, metrics::Metric::F1,
                   metrics::Metric::Auc}) {
        try {
            const auto r = metrics::bootstrap_ci(scores, test.labels, m, bootstrap.iterations, bootstrap.level, seed,
                                                 threshold);
            e.intervals[std::string(metrics::to_string(m))] = {r.estimate, r.interval.lower, r.interval.upper,
                                                               r.n_degenerate};
        } catch (const DataError&) {
            // every resample degenerate (e.g. a model that never predicts
            // positive has no precision); the interval is left out
        }
    }
    e.test_row_ids = test.row_ids;
    return e;
}

// ---------------------------------------------------------------------------
// comparison

struct LogisticFitSummary {
    std::size_t iterations = 0;
    bool converged = false;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    friend bool operator==(const LogisticFitSummary&, const LogisticFitSummary&) = default;
};

/// Wall-clock training seconds, rounded to 0.01 s. Kept out of report.json.
struct Timing {
    double logistic = 0.0;
    double dense = 0.0;
    double conv = 0.0;
    json to_json() const {
        return json{{"clock", "steady"}, {"unit", "seconds"},
                    {"logistic", logistic}, {"dense", dense}, {"conv", conv}};
    }
};

inline double round_centi(double seconds) { return std::round(seconds * 100.0) / 100.0; }

struct ComparisonReport {
    static constexpr int kSchemaVersion = 1;

    json config;  // echo without paths
    std::string dataset_source;
    DatasetSummary summary;
    std::string preprocessing_fingerprint;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    data::ClassWeights class_weights;
    EvalReport logistic;
    EvalReport dense;
    EvalReport conv;
    LogisticFitSummary logistic_fit;
    nn::TrainingHistory dense_history;
    nn::TrainingHistory conv_history;
    std::vector<logistic::FeatureWeight> importance;
    Timing timing;

    json to_json() const {
        json imp = json::array();
        for (const auto& f : importance) {
            imp.push_back({{"feature", f.name}, {"abs_coefficient", f.magnitude}, {"coefficient", f.coefficient}});
        }
        return json{{"schema_version", kSchemaVersion},
                    {"config", config},
                    {"dataset_source", dataset_source},
                    {"dataset_summary", summary.to_json()},
                    {"preprocessing_fingerprint", preprocessing_fingerprint},
                    {"split", {{"train_rows", train_rows}, {"test_rows", test_rows}}},
                    {"class_weights", class_weights.to_json()},
                    {"models",
                     {{"logistic", logistic.to_json()}, {"dense", dense.to_json()}, {"conv", conv.to_json()}}},
                    {"logistic_fit",
                     {{"iterations", logistic_fit.iterations},
                      {"converged", logistic_fit.converged},
                      {"initial_objective", logistic_fit.initial_objective},
                      {"final_objective", logistic_fit.final_objective}}},
                    {"histories", {{"dense", dense_history.to_json()}, {"conv", conv_history.to_json()}}},
                    {"feature_importance", imp}};
    }

    static ComparisonReport from_json(const json& j) {
        if (j.at("schema_version").get<int>() != kSchemaVersion) throw DataError("report", "unsupported report schema");
        ComparisonReport r;
        r.config = j.at("config");
        r.dataset_source = j.at("dataset_source").get<std::string>();
        r.summary = DatasetSummary::from_json(j.at("dataset_summary"));
        r.preprocessing_fingerprint = j.at("preprocessing_fingerprint").get<std::string>();
        r.train_rows = j.at("split").at("train_rows").get<std::size_t>();
        r.test_rows = j.at("split").at("test_rows").get<std::size_t>();
        r.class_weights = data::ClassWeights::from_json(j.at("class_weights"));
        r.logistic = EvalReport::from_json(j.at("models").at("logistic"));
        r.dense = EvalReport::from_json(j.at("models").at("dense"));
        r.conv = EvalReport::from_json(j.at("models").at("conv"));
        const auto& f = j.at("logistic_fit");
        r.logistic_fit = {f.at("iterations").get<std::size_t>(), f.at("converged").get<bool>(),
                          f.at("initial_objective").get<double>(), f.at("final_objective").get<double>()};
        r.dense_history = nn::TrainingHistory::from_json(j.at("histories").at("dense"));
        r.conv_history = nn::TrainingHistory::from_json(j.at("histories").at("conv"));
        for (const auto& i : j.at("feature_importance")) {
            r.importance.push_back({i.at("feature").get<std::string>(), i.at("abs_coefficient").get<double>(),
                                    i.at("coefficient").get<double>()});
        }
        return r;
    }

    std::string importance_csv() const {
        std::string out = "rank,feature,abs_coefficient,coefficient\n";
        for (std::size_t i = 0; i < importance.size(); ++i) {
            out += std::to_string(i + 1) + "," + importance[i].name + "," + detail::fmt(importance[i].magnitude) + "," +
                   detail::fmt(importance[i].coefficient) + "\n";
        }
        return out;
    }

    /// Equality ignores timing.
    friend bool operator==(const ComparisonReport& a, const ComparisonReport& b) { return a.to_json() == b.to_json(); }
};

/// Fitted models plus the data they were evaluated on.
struct ComparisonRun {
    ComparisonReport report;
    logistic::LogisticModel logistic;
    nn::NetworkModel<double> dense;
    nn::NetworkModel<double> conv;
    data::PreparedData data;
};

namespace detail {

template <typename F>
auto timed(F&& f) {
    const auto start = std::chrono::steady_clock::now();
    auto result = f();
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::make_pair(std::move(result), seconds);
}

/// Re-raises anything that is not already a library error under `stage`.
template <typename F>
auto in_stage(const std::string& stage, F&& f) {
    try {
        return f();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(stage, e.what());
    }
}

struct NetworkFit {
    nn::Network<double> network;
    nn::TrainingHistory history;
};

}  // namespace detail

/// Shared preprocessing and split, then all three models trained and
/// evaluated on the identical test rows.
inline ComparisonRun run_comparison(const ExperimentConfig& config, const data::RawTable& table) {
    config.validate();
    auto prepared = detail::in_stage("preprocess", [&] { return data::prepare(table, config.pipeline()); });
    const auto& train = prepared.train;
    const auto& test = prepared.test;
    const auto weights = data::class_weights(train.labels);

    auto fit_logistic = [&] {
        return detail::timed([&] { return detail::in_stage("train_logreg", [&] { return logistic::train_logreg(train, config.logistic); }); });
    };
    auto fit_network = [&](const NetworkSection& section, const char* stage) {
        return detail::timed([&] {
            return detail::in_stage(stage, [&] {
                detail::NetworkFit fit{nn::build_network<double>(section.spec, config.seed), {}};
                fit.history = nn::train_network(fit.network, train, test, config.train_config(section));
                return fit;
            });
        });
    };

    std::optional<std::pair<logistic::FitResult, double>> lr_slot;
    std::optional<std::pair<detail::NetworkFit, double>> dense_slot, conv_slot;
    if (config.parallel) {
        auto f_lr = std::async(std::launch::async, fit_logistic);
        auto f_dense = std::async(std::launch::async, [&] { return fit_network(config.dense, "train_dense"); });
        auto f_conv = std::async(std::launch::async, [&] { return fit_network(config.conv, "train_conv"); });
        lr_slot.emplace(f_lr.get());
        dense_slot.emplace(f_dense.get());
        conv_slot.emplace(f_conv.get());
    } else {
        lr_slot.emplace(fit_logistic());
        dense_slot.emplace(fit_network(config.dense, "train_dense"));
        conv_slot.emplace(fit_network(config.conv, "train_conv"));
    }
    auto& lr = *lr_slot;
    auto& dense = *dense_slot;
    auto& conv = *conv_slot;

    ComparisonRun run{{},
                      std::move(lr.first.model),
                      {std::move(dense.first.network), config.train_config(config.dense), weights, prepared.artifacts},
                      {std::move(conv.first.network), config.train_config(config.conv), weights, prepared.artifacts},
                      {}};
    run.logistic.threshold = config.threshold;
    run.logistic.preprocessing = prepared.artifacts;
    if (config.dense.train.class_weights) run.dense.class_weights = *config.dense.train.class_weights;
    if (config.conv.train.class_weights) run.conv.class_weights = *config.conv.train.class_weights;

    auto& rep = run.report;
    rep.config = config.to_json(false);
    rep.dataset_source = std::filesystem::path(table.source).filename().string();
    rep.summary = dataset_summary(table);
    rep.preprocessing_fingerprint = prepared.artifacts.fingerprint();
    rep.train_rows = train.size();
    rep.test_rows = test.size();
    rep.class_weights = weights;
    detail::in_stage("evaluate", [&] {
        rep.logistic = evaluate_scores("logistic", run.logistic.predict_proba(test.features), test, config.threshold,
                                       config.bootstrap, config.seed);
        rep.dense = evaluate_scores("dense", nn::predict_dataset(run.dense.network, test), test, config.threshold,
                                    config.bootstrap, config.seed);
        rep.conv = evaluate_scores("conv", nn::predict_dataset(run.conv.network, test), test, config.threshold,
                                   config.bootstrap, config.seed);
        return 0;
    });
    rep.logistic_fit = {lr.first.iterations, lr.first.converged, lr.first.initial_objective, lr.first.final_objective};
    rep.dense_history = std::move(dense.first.history);
    rep.conv_history = std::move(conv.first.history);
    rep.importance = logistic::feature_importance(run.logistic, train.columns);
    rep.timing = {round_centi(lr.second), round_centi(dense.second), round_centi(conv.second)};
    run.data = std::move(prepared);
    return run;
}

inline ComparisonRun run_comparison(const ExperimentConfig& config) {
    if (config.dataset.empty()) throw UsageError("config", "no dataset path given");
    return run_comparison(config, data::load_dataset(config.dataset));
}

// ---------------------------------------------------------------------------
// report files

struct ManifestEntry {
    std::string file;
    std::size_t bytes = 0;
    std::string hash;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
    static constexpr const char* kAlgorithm = "fnv1a-64";
    std::vector<ManifestEntry> files;

    json to_json() const {
        json list = json::array();
        for (const auto& f : files) list.push_back({{"file", f.file}, {"bytes", f.bytes}, {"hash", f.hash}});
        return json{{"hash_algorithm", kAlgorithm}, {"files", list}};
    }
    static Manifest from_json(const json& j) {
        if (j.at("hash_algorithm").get<std::string>() != kAlgorithm) throw DataError("report", "unknown manifest hash");
        Manifest m;
        for (const auto& f : j.at("files")) {
            m.files.push_back({f.at("file").get<std::string>(), f.at("bytes").get<std::size_t>(),
                               f.at("hash").get<std::string>()});
        }
        return m;
    }
    friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("report", "cannot write '" + path.string() + "'");
    out << text;
    out.close();
    if (!out) throw DataError("report", "write failed for '" + path.string() + "'");
}

/// Writes report.json, ROC/confusion CSVs per model, history CSVs per
/// network and importance.csv, then manifest.json over those ten files and
/// timing.json (outside the manifest, since wall-clock times vary).
inline Manifest emit_report(const ComparisonReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw DataError("report", "cannot create output directory '" + dir.string() + "'" +
                                      (ec ? ": " + ec.message() : std::string()));
    }
    const std::vector<std::pair<std::string, std::string>> files{
        {"report.json", report.to_json().dump(2) + "\n"},
        {"roc_logistic.csv", report.logistic.roc_csv()},
        {"roc_dense.csv", report.dense.roc_csv()},
        {"roc_conv.csv", report.conv.roc_csv()},
        {"history_dense.csv", report.dense_history.to_csv()},
        {"history_conv.csv", report.conv_history.to_csv()},
        {"confusion_logistic.csv", report.logistic.confusion_csv()},
        {"confusion_dense.csv", report.dense.confusion_csv()},
        {"confusion_conv.csv", report.conv.confusion_csv()},
        {"importance.csv", report.importance_csv()},
    };
    Manifest manifest;
    for (const auto& [name, text] : files) {
        write_text(dir / name, text);
        manifest.files.push_back({name, text.size(), to_hex(fnv1a64(text))});
    }
    write_text(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
    write_text(dir / "timing.json", report.timing.to_json().dump(2) + "\n");
    return manifest;
}

// ---------------------------------------------------------------------------
// cascade

enum class RiskLevel { Low, HighConfirmed, HighFlagged };

inline std::string to_string(RiskLevel r) {
    switch (r) {
        case RiskLevel::Low: return "low-risk";
        case RiskLevel::HighConfirmed: return "high-risk-confirmed";
        case RiskLevel::HighFlagged: return "high-risk-flagged";
    }
    return "?";
}

struct StageOutcome {
    std::string stage;
    std::string model;
    double threshold = 0.5;
    bool reached = false;
    std::optional<double> probability;
    std::optional<int> label;
};

struct CascadeDecision {
    std::array<StageOutcome, 3> stages;
    RiskLevel level = RiskLevel::Low;
    /// The dense and conv stages disagreed.
    bool disagreement = false;
    std::vector<std::string> trace;

    json to_json() const {
        json st = json::array();
        for (const auto& s : stages) {
            json e{{"stage", s.stage}, {"model", s.model}, {"threshold", s.threshold}, {"reached", s.reached}};
            e["probability"] = s.probability ? json(*s.probability) : json(nullptr);
            e["label"] = s.label ? json(*s.label) : json(nullptr);
            st.push_back(e);
        }
        return json{{"decision", to_string(level)}, {"disagreement", disagreement}, {"stages", st}, {"trace", trace}};
    }
};

/// The decision rule. `dense` and `conv` are only called when screening
/// passes, so unreached stages never run.
inline CascadeDecision cascade_decide(double p_logistic, const std::function<double()>& dense,
                                      const std::function<double()>& conv, const CascadeThresholds& t) {
    CascadeDecision d;
    d.stages[0].stage = "screen";
    d.stages[0].model = "logistic";
    d.stages[0].threshold = t.screen;
    d.stages[1].stage = "assess";
    d.stages[1].model = "dense";
    d.stages[1].threshold = t.assess;
    d.stages[2].stage = "validate";
    d.stages[2].model = "conv";
    d.stages[2].threshold = t.validate;
    auto run = [](StageOutcome& s, double p) {
        s.reached = true;
        s.probability = p;
        s.label = metrics::classify(p, s.threshold);
        return *s.label == 1;
    };
    auto note = [&](const StageOutcome& s) {
        d.trace.push_back(s.stage + ": " + s.model + " p=" + detail::fmt(*s.probability) + (*s.label ? " >= " : " < ") +
                          detail::fmt(s.threshold));
    };

    const bool screened = run(d.stages[0], p_logistic);
    note(d.stages[0]);
    if (!screened) {
        d.level = RiskLevel::Low;
        d.trace.push_back("assess: not reached");
        d.trace.push_back("validate: not reached");
        return d;
    }
    const bool assessed = run(d.stages[1], dense());
    note(d.stages[1]);
    const bool validated = run(d.stages[2], conv());
    note(d.stages[2]);
    d.disagreement = assessed != validated;
    if (assessed && validated) d.level = RiskLevel::HighConfirmed;
    else if (assessed) d.level = RiskLevel::HighFlagged;
    else d.level = RiskLevel::Low;
    if (d.disagreement) d.trace.push_back("dense and conv disagree");
    return d;
}

struct CascadeModels {
    const logistic::LogisticModel& logistic;
    const nn::NetworkModel<double>& dense;
    const nn::NetworkModel<double>& conv;

    /// All three models must share one preprocessing transform.
    void check() const {
        const auto fp = logistic.preprocessing.fingerprint();
        if (dense.preprocessing.fingerprint() != fp || conv.preprocessing.fingerprint() != fp) {
            throw DataError("cascade", "models were fitted with different preprocessing artifacts");
        }
    }
};

/// Cascade on an already encoded and standardized feature vector.
inline CascadeDecision cascade_predict_features(const CascadeModels& models, std::span<const double> x,
                                                const CascadeThresholds& thresholds = {}) {
    thresholds.check();
    auto network_p = [&](const nn::NetworkModel<double>& m) {
        Matrix<double> row(1, x.size());
        std::copy(x.begin(), x.end(), row.data().begin());
        return m.network.predict_proba(row).front();
    };
    return cascade_decide(
        models.logistic.predict_proba(x), [&] { return network_p(models.dense); },
        [&] { return network_p(models.conv); }, thresholds);
}

inline CascadeDecision cascade_predict(const CascadeModels& models, const data::PatientRecord& record,
                                       const CascadeThresholds& thresholds = {}) {
    models.check();
    return cascade_predict_features(models, models.logistic.preprocessing.transform(record), thresholds);
}

}  // namespace strokelab::experiments
