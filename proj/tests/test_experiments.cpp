#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "strokelab/experiments.hpp"
#include "strokelab/synthetic.hpp"
#include "support/dataset_path.hpp"

using namespace strokelab;
using namespace strokelab::experiments;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("strokelab_exp_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig smoke_config() {
    ExperimentConfig c;
    c.dense.train.epochs = 2;
    c.conv.train.epochs = 2;
    c.bootstrap.iterations = 100;
    return c;
}

const data::RawTable& tiny_table() {
    static const auto table = data::load_dataset(testdata::fixture("tiny_stroke.csv"));
    return table;
}

const ComparisonRun& tiny_run() {
    static const auto run = run_comparison(smoke_config(), tiny_table());
    return run;
}

}  // namespace

// ---------------------------------------------------------------------------
// config

TEST(Config, DefaultsAreValidAndRoundTrip) {
    ExperimentConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.test_fraction, 0.2);
    EXPECT_EQ(c.dense.train.learning_rate, 0.01);
    EXPECT_EQ(c.dense.train.epochs, 400u);
    EXPECT_EQ(c.dense.train.batch_size, 32u);
    EXPECT_EQ(c.dense.spec.dropout_rate, 0.3);
    c.dataset = "x.csv";
    c.seed = 9;
    c.conv.train.epochs = 7;
    c.logistic.class_weights = data::ClassWeights{1.0, 3.0};
    const auto back = ExperimentConfig::from_json(json::parse(c.to_json().dump()));
    EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Config, PartialSectionsMergeOntoDefaults) {
    const auto c = ExperimentConfig::from_json(
        json::parse(R"({"schema_version": 1, "dense": {"train": {"epochs": 5}}, "conv": {"spec": {"dropout_rate": 0.1}}})"));
    EXPECT_EQ(c.dense.train.epochs, 5u);
    EXPECT_EQ(c.dense.train.batch_size, 32u);
    EXPECT_EQ(c.dense.spec, nn::NetworkSpec::dense_default());
    EXPECT_EQ(c.conv.spec.dropout_rate, 0.1);
    EXPECT_EQ(c.conv.spec.conv_blocks.size(), 2u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    auto reject = [](const char* text) {
        EXPECT_THROW(ExperimentConfig::from_json(json::parse(text)), UsageError) << text;
    };
    reject(R"({"schema_version": 1, "sead": 4})");
    reject(R"({"schema_version": 1, "dense": {"train": {"epoch": 4}}})");
    reject(R"({"seed": 4})");
    reject(R"({"schema_version": 2})");
    reject(R"({"schema_version": 1, "threshold": 1.5})");
    reject(R"({"schema_version": 1, "test_fraction": 0})");
    reject(R"({"schema_version": 1, "dense": {"spec": {"dense_widths": [8, 4]}}})");
    reject(R"({"schema_version": 1, "conv": {"spec": {"variant": "dense", "conv_blocks": [], "dense_widths": [4, 4, 4]}}})");
    reject(R"({"schema_version": 1, "cascade": {"screen": 0}})");
    reject(R"({"schema_version": 1, "seed": "forty-two"})");
}

TEST(Config, ShippedDefaultFileMatchesBuiltInDefaults) {
    const auto c = ExperimentConfig::load(fs::path(STROKELAB_SOURCE_DIR) / "configs" / "default.json");
    EXPECT_EQ(c.to_json(false), ExperimentConfig{}.to_json(false));
    EXPECT_FALSE(c.dataset.empty());
}

TEST(Config, SharedSeedAndThresholdReachNetworks) {
    ExperimentConfig c;
    c.seed = 77;
    c.threshold = 0.4;
    const auto t = c.train_config(c.conv);
    EXPECT_EQ(t.seed, 77u);
    EXPECT_EQ(t.threshold, 0.4);
    EXPECT_EQ(c.pipeline().seed, 77u);
}

// ---------------------------------------------------------------------------
// dataset summary

TEST(Summary, SingleRowHasZeroSpread) {
    data::RawTable t;
    t.rows.push_back(synthetic::make_cohort({1, 3}).rows.front());
    t.rows[0].bmi = 27.5;
    const auto s = dataset_summary(t);
    ASSERT_EQ(s.numeric.size(), 3u);
    EXPECT_EQ(s.numeric[0].mean, t.rows[0].age);
    EXPECT_EQ(s.numeric[1].mean, t.rows[0].avg_glucose_level);
    EXPECT_EQ(s.numeric[2].mean, 27.5);
    for (const auto& n : s.numeric) {
        EXPECT_EQ(n.std, 0.0) << n.column;
        EXPECT_EQ(n.min, n.max);
        EXPECT_EQ(n.median, n.mean);
    }
}

TEST(Summary, CountsAndBoundsOnCohort) {
    const auto table = synthetic::make_cohort({3000, 5});
    const auto s = dataset_summary(table);
    EXPECT_EQ(s.rows, 3000u);
    EXPECT_DOUBLE_EQ(s.positive_fraction, static_cast<double>(s.positives) / 3000.0);
    for (const auto& n : s.numeric) {
        EXPECT_EQ(n.count + n.missing, 3000u) << n.column;
        std::size_t binned = 0;
        for (auto b : n.histogram) binned += b;
        EXPECT_EQ(binned, n.count) << n.column;
        EXPECT_EQ(n.histogram.size(), 20u);
        EXPECT_LE(n.min, n.q1);
        EXPECT_LE(n.q1, n.median);
        EXPECT_LE(n.median, n.q3);
        EXPECT_LE(n.q3, n.max);
    }
    EXPECT_GE(s.numeric[0].min, 0.0);
    EXPECT_LE(s.numeric[0].max, 130.0);
    EXPECT_EQ(s.numeric[2].missing, table.missing_bmi());
    for (const auto& c : s.categorical) {
        std::size_t total = 0;
        for (const auto& [level, count] : c.counts) total += count;
        EXPECT_EQ(total, 3000u) << c.column;
    }
    EXPECT_EQ(s.categorical.size(), 8u);
}

TEST(Summary, PopulationStdMatchesDirectComputation) {
    data::RawTable t;
    const double ages[] = {10, 20, 30, 40};
    for (double a : ages) {
        auto r = synthetic::make_cohort({1, 1}).rows.front();
        r.age = a;
        t.rows.push_back(r);
    }
    const auto s = dataset_summary(t);
    EXPECT_DOUBLE_EQ(s.numeric[0].mean, 25.0);
    EXPECT_DOUBLE_EQ(s.numeric[0].std, std::sqrt(125.0));
    EXPECT_DOUBLE_EQ(s.numeric[0].q1, 17.5);
}

TEST(Summary, EmptyTableAndJsonRoundTrip) {
    EXPECT_THROW(dataset_summary(data::RawTable{}), DataError);
    const auto s = dataset_summary(synthetic::make_cohort({400, 2}));
    EXPECT_EQ(DatasetSummary::from_json(json::parse(s.to_json().dump())), s);
    const auto csv = s.histogram_csv();
    EXPECT_EQ(csv.rfind("column,bin,lower,upper,count\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 20);
}

TEST(Summary, RealTablePositiveFraction) {
    const auto path = testdata::stroke_csv();
    if (!path) GTEST_SKIP() << "stroke CSV not available";
    const auto s = dataset_summary(data::load_dataset(*path));
    EXPECT_NEAR(s.positive_fraction, 0.05, 0.01);
}

// ---------------------------------------------------------------------------
// comparison

TEST(Comparison, TinyFixtureRunsEndToEnd) {
    const auto& run = tiny_run();
    const auto& r = run.report;
    EXPECT_EQ(r.train_rows + r.test_rows, 50u);
    EXPECT_EQ(r.test_rows, 10u);
    EXPECT_EQ(r.dense_history.test_accuracy.size(), 2u);
    EXPECT_EQ(r.conv_history.test_accuracy.size(), 2u);
    EXPECT_EQ(r.importance.size(), 10u);
    for (const auto* e : {&r.logistic, &r.dense, &r.conv}) {
        EXPECT_EQ(e->confusion.total(), 10u) << e->model;
        EXPECT_TRUE(e->intervals.count("accuracy")) << e->model;
        EXPECT_GE(e->auc, 0.0);
        EXPECT_LE(e->auc, 1.0);
    }
    EXPECT_EQ(run.dense.preprocessing, run.logistic.preprocessing);
    EXPECT_EQ(run.conv.preprocessing, run.logistic.preprocessing);
    EXPECT_EQ(r.preprocessing_fingerprint, run.logistic.preprocessing.fingerprint());
}

TEST(Comparison, AllModelsShareTheTestRows) {
    const auto& r = tiny_run().report;
    EXPECT_EQ(r.logistic.test_row_ids, r.dense.test_row_ids);
    EXPECT_EQ(r.logistic.test_row_ids, r.conv.test_row_ids);
    EXPECT_EQ(r.logistic.test_row_ids, tiny_run().data.test.row_ids);
    std::set<std::int64_t> ids(r.logistic.test_row_ids.begin(), r.logistic.test_row_ids.end());
    EXPECT_EQ(ids.size(), r.test_rows);
}

TEST(Comparison, ReportJsonRoundTrip) {
    const auto& r = tiny_run().report;
    const auto back = ComparisonReport::from_json(json::parse(r.to_json().dump()));
    EXPECT_EQ(back, r);
    EXPECT_EQ(back.logistic.roc, r.logistic.roc);
    EXPECT_TRUE(std::isinf(back.conv.roc.points.front().threshold));
}

TEST(Comparison, ReportCarriesFixedMetricFields) {
    const auto j = tiny_run().report.to_json();
    for (const char* model : {"logistic", "dense", "conv"}) {
        const auto& m = j.at("models").at(model);
        for (const char* key :
             {"accuracy", "precision", "recall", "f1", "auc", "ci_lower", "ci_upper", "n_degenerate_resamples"}) {
            EXPECT_TRUE(m.contains(key)) << model << "." << key;
        }
        EXPECT_EQ(m.at("ci_lower"), m.at("intervals").at("accuracy").at("ci_lower"));
    }
    EXPECT_FALSE(j.at("config").contains("output_dir"));
    EXPECT_FALSE(j.contains("timing"));
}

TEST(Comparison, DeterministicAndIndependentOfParallelism) {
    auto c = smoke_config();
    c.bootstrap.iterations = 30;
    const auto a = run_comparison(c, tiny_table());
    const auto b = run_comparison(c, tiny_table());
    c.parallel = true;
    const auto p = run_comparison(c, tiny_table());
    EXPECT_EQ(a.report.to_json().dump(), b.report.to_json().dump());
    EXPECT_EQ(a.report.to_json().dump(), p.report.to_json().dump());
}

TEST(Comparison, ErrorsNameTheStage) {
    auto c = smoke_config();
    data::RawTable one_class = tiny_table();
    for (auto& r : one_class.rows) r.stroke = 0;
    try {
        run_comparison(c, one_class);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_FALSE(e.stage().empty());
    }
    c.dataset.clear();
    EXPECT_THROW(run_comparison(c), UsageError);
    c.dataset = "/nonexistent/stroke.csv";
    EXPECT_THROW(run_comparison(c), DataError);
}

// ---------------------------------------------------------------------------
// report files

TEST(EmitReport, WritesTenFilesWithMatchingManifest) {
    const auto dir = scratch_dir("emit");
    const auto manifest = emit_report(tiny_run().report, dir);
    ASSERT_EQ(manifest.files.size(), 10u);
    const std::set<std::string> expected{"report.json",        "roc_logistic.csv",     "roc_dense.csv",
                                         "roc_conv.csv",       "history_dense.csv",    "history_conv.csv",
                                         "confusion_logistic.csv", "confusion_dense.csv", "confusion_conv.csv",
                                         "importance.csv"};
    std::set<std::string> names;
    for (const auto& f : manifest.files) {
        names.insert(f.file);
        const auto text = slurp(dir / f.file);
        EXPECT_EQ(text.size(), f.bytes) << f.file;
        EXPECT_EQ(to_hex(fnv1a64(text)), f.hash) << f.file;
    }
    EXPECT_EQ(names, expected);
    EXPECT_EQ(Manifest::from_json(json::parse(slurp(dir / "manifest.json"))), manifest);
    EXPECT_TRUE(fs::exists(dir / "timing.json"));
    EXPECT_EQ(ComparisonReport::from_json(json::parse(slurp(dir / "report.json"))), tiny_run().report);
}

TEST(EmitReport, HashIsStandardFnv1a64) {
    // published FNV-1a test vectors
    EXPECT_EQ(to_hex(fnv1a64("")), "cbf29ce484222325");
    EXPECT_EQ(to_hex(fnv1a64("a")), "af63dc4c8601ec8c");
    EXPECT_EQ(to_hex(fnv1a64("foobar")), "85944171f73967e8");
}

TEST(EmitReport, CsvLayouts) {
    const auto dir = scratch_dir("csv");
    emit_report(tiny_run().report, dir);
    const auto roc = slurp(dir / "roc_logistic.csv");
    EXPECT_EQ(roc.rfind("threshold,fpr,tpr\ninf,0,0\n", 0), 0u) << roc;
    EXPECT_NE(roc.find(",1,1\n"), std::string::npos);
    const auto& cm = tiny_run().report.dense.confusion;
    EXPECT_EQ(slurp(dir / "confusion_dense.csv"), "actual,predicted_0,predicted_1\n0," + std::to_string(cm.tn) + "," +
                                                      std::to_string(cm.fp) + "\n1," + std::to_string(cm.fn) + "," +
                                                      std::to_string(cm.tp) + "\n");
    const auto imp = slurp(dir / "importance.csv");
    EXPECT_EQ(imp.rfind("rank,feature,abs_coefficient,coefficient\n1,", 0), 0u);
    EXPECT_EQ(std::count(imp.begin(), imp.end(), '\n'), 11);
}

TEST(EmitReport, RerunGivesIdenticalHashes) {
    auto c = smoke_config();
    c.bootstrap.iterations = 30;
    const auto a = emit_report(run_comparison(c, tiny_table()).report, scratch_dir("rerun_a"));
    const auto b = emit_report(run_comparison(c, tiny_table()).report, scratch_dir("rerun_b"));
    EXPECT_EQ(a, b);
}

TEST(EmitReport, UnwritableDirectoryNamesThePath) {
    const auto dir = scratch_dir("blocked");
    std::ofstream(dir / "plain_file") << "x";
    const auto target = dir / "plain_file" / "out";
    try {
        emit_report(tiny_run().report, target);
        FAIL() << "expected an I/O error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find(target.string()), std::string::npos) << e.what();
    }
}

// ---------------------------------------------------------------------------
// cascade

namespace {

CascadeDecision decide(double lr, double dense, double conv, CascadeThresholds t = {}, int* calls = nullptr) {
    return cascade_decide(
        lr,
        [&] {
            if (calls) ++*calls;
            return dense;
        },
        [&] {
            if (calls) ++*calls;
            return conv;
        },
        t);
}

}  // namespace

TEST(Cascade, LowScreenStopsAtStageOne) {
    int calls = 0;
    const auto d = decide(0.05, 0.9, 0.9, {}, &calls);
    EXPECT_EQ(d.level, RiskLevel::Low);
    EXPECT_EQ(calls, 0);
    EXPECT_TRUE(d.stages[0].reached);
    EXPECT_FALSE(d.stages[1].reached);
    EXPECT_FALSE(d.stages[2].reached);
    EXPECT_FALSE(d.stages[1].probability);
    EXPECT_FALSE(d.disagreement);
    const auto j = d.to_json();
    EXPECT_EQ(j.at("decision"), "low-risk");
    EXPECT_TRUE(j.at("stages").at(1).at("probability").is_null());
}

TEST(Cascade, DecisionTable) {
    struct Case {
        double lr, dense, conv;
        RiskLevel level;
        bool disagreement;
    };
    const Case cases[] = {
        {0.9, 0.8, 0.7, RiskLevel::HighConfirmed, false},
        {0.9, 0.8, 0.2, RiskLevel::HighFlagged, true},
        {0.9, 0.2, 0.8, RiskLevel::Low, true},
        {0.9, 0.2, 0.2, RiskLevel::Low, false},
        {0.3, 0.5, 0.5, RiskLevel::HighConfirmed, false},  // thresholds are inclusive
        {0.2999, 0.9, 0.9, RiskLevel::Low, false},
    };
    for (const auto& c : cases) {
        const auto d = decide(c.lr, c.dense, c.conv);
        EXPECT_EQ(d.level, c.level) << c.lr << " " << c.dense << " " << c.conv;
        EXPECT_EQ(d.disagreement, c.disagreement) << c.lr << " " << c.dense << " " << c.conv;
    }
    const auto flagged = decide(0.9, 0.8, 0.2);
    EXPECT_EQ(to_string(flagged.level), "high-risk-flagged");
    EXPECT_NE(flagged.trace.back().find("disagree"), std::string::npos);
    EXPECT_EQ(flagged.trace.size(), 4u);
    EXPECT_EQ(to_string(RiskLevel::HighConfirmed), "high-risk-confirmed");
}

TEST(Cascade, LoweringScreenThresholdNeverDemotes) {
    Rng rng(12);
    const double grid[] = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9};
    for (int trial = 0; trial < 500; ++trial) {
        const double lr = rng.uniform(), dense = rng.uniform(), conv = rng.uniform();
        for (double hi : grid) {
            for (double lo : grid) {
                if (lo > hi) continue;
                const auto a = decide(lr, dense, conv, {hi, 0.5, 0.5});
                const auto b = decide(lr, dense, conv, {lo, 0.5, 0.5});
                if (a.level != RiskLevel::Low) {
                    EXPECT_NE(b.level, RiskLevel::Low) << lr << " " << hi << "->" << lo;
                }
            }
        }
    }
}

TEST(Cascade, ScreenPositivesContainLogisticPositives) {
    const auto& run = tiny_run();
    const CascadeModels models{run.logistic, run.dense, run.conv};
    const auto& test = run.data.test;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto x = test.features.row(i);
        const auto d = cascade_predict_features(models, x);
        if (run.logistic.predict(x) == 1) {
            EXPECT_TRUE(d.stages[1].reached) << i;
        }
        EXPECT_EQ(*d.stages[0].probability, run.logistic.predict_proba(x));
    }
    // and on a larger synthetic cohort, where positives are plentiful
    auto c = smoke_config();
    c.dense.train.epochs = 1;
    c.conv.train.epochs = 1;
    c.bootstrap.iterations = 10;
    const auto big = run_comparison(c, synthetic::make_cohort({1500, 3}));
    const CascadeModels bm{big.logistic, big.dense, big.conv};
    std::size_t lr_pos = 0, screened = 0;
    for (std::size_t i = 0; i < big.data.test.size(); ++i) {
        const auto x = big.data.test.features.row(i);
        const bool lr = big.logistic.predict_proba(x) >= 0.5;
        const bool s = cascade_predict_features(bm, x).stages[1].reached;
        if (lr) {
            EXPECT_TRUE(s);
        }
        lr_pos += lr;
        screened += s;
    }
    EXPECT_GT(lr_pos, 0u);
    EXPECT_GE(screened, lr_pos);
}

TEST(Cascade, RecordPathMatchesFeaturePath) {
    const auto& run = tiny_run();
    const CascadeModels models{run.logistic, run.dense, run.conv};
    for (const auto& r : tiny_table().rows) {
        const auto a = cascade_predict(models, r);
        const auto b = cascade_predict_features(models, run.logistic.preprocessing.transform(r));
        EXPECT_EQ(a.to_json(), b.to_json());
    }
}

TEST(Cascade, MismatchedPreprocessingIsRejected) {
    const auto& run = tiny_run();
    auto other = run.conv;
    other.preprocessing.imputation_value += 1.0;
    const CascadeModels models{run.logistic, run.dense, other};
    try {
        cascade_predict(models, tiny_table().rows.front());
        FAIL() << "expected a cascade error";
    } catch (const DataError& e) {
        EXPECT_EQ(e.stage(), "cascade");
    }
    EXPECT_THROW(cascade_predict(CascadeModels{run.logistic, run.dense, run.conv}, tiny_table().rows.front(),
                                 CascadeThresholds{0.0, 0.5, 0.5}),
                 UsageError);
}
