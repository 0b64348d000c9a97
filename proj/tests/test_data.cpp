#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "strokelab/data.hpp"
#include "strokelab/synthetic.hpp"
#include "support/dataset_path.hpp"

using namespace strokelab;
using namespace strokelab::data;

namespace {

const char* kHeader = "id,gender,age,hypertension,heart_disease,ever_married,work_type,Residence_type,"
                      "avg_glucose_level,bmi,smoking_status,stroke\n";

RawTable parse(const std::string& text) {
    std::istringstream in(text);
    return parse_csv(in, "inline.csv");
}

std::string sample_csv() {
    return std::string(kHeader) +
           "9046,Male,67,0,1,Yes,Private,Urban,228.69,36.6,formerly smoked,1\n"
           "51676,Female,61,0,0,Yes,Self-employed,Rural,202.21,N/A,never smoked,1\n"
           "31112,Male,80,0,1,Yes,Private,Rural,105.92,32.5,never smoked,1\n"
           "60182,Female,49,0,0,Yes,Private,Urban,171.23,34.4,smokes,0\n"
           "1665,Female,79,1,0,Yes,Self-employed,Rural,174.12,24,never smoked,0\n"
           "56669,Male,81,0,0,Yes,Private,Urban,186.21,29,formerly smoked,0\n"
           "53882,Other,74,1,1,Yes,Private,Rural,70.09,27.4,never smoked,0\n"
           "10434,Female,69,0,0,No,Private,Urban,94.39,22.8,never smoked,0\n";
}

}  // namespace

TEST(LoadDataset, ParsesRowsAndMarksMissingBmi) {
    const auto t = parse(sample_csv());
    ASSERT_EQ(t.size(), 8u);
    EXPECT_EQ(t.missing_bmi(), 1u);
    EXPECT_FALSE(t.rows[1].bmi.has_value());
    EXPECT_EQ(t.rows[0].id, 9046);
    EXPECT_DOUBLE_EQ(t.rows[0].avg_glucose_level, 228.69);
    EXPECT_EQ(t.rows[0].smoking_status, "formerly smoked");
    EXPECT_EQ(t.rows[0].stroke, 1);
}

TEST(LoadDataset, AcceptsAnyColumnOrder) {
    const std::string text =
        "stroke,bmi,id,gender,age,hypertension,heart_disease,ever_married,work_type,Residence_type,"
        "avg_glucose_level,smoking_status\n"
        "1,36.6,9046,Male,67,0,1,Yes,Private,Urban,228.69,formerly smoked\n";
    const auto t = parse(text);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t.rows[0], parse(sample_csv()).rows[0]);
}

TEST(LoadDataset, HeaderOnlyFileGivesEmptyTable) {
    const auto t = parse(kHeader);
    EXPECT_TRUE(t.empty());
}

TEST(LoadDataset, UnparseableCellNamesRowAndColumn) {
    const std::string text = std::string(kHeader) + "1,Male,67,0,1,Yes,Private,Urban,228.69,36.6,smokes,1\n" +
                             "2,Male,67,0,1,Yes,Private,Urban,228.69,abc,smokes,1\n";
    try {
        parse(text);
        FAIL() << "expected a parse error";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("'bmi'"), std::string::npos) << msg;
        EXPECT_EQ(e.stage(), "load");
    }
}

TEST(LoadDataset, RejectsUnknownAndMissingColumns) {
    EXPECT_THROW(parse("id,gender,age\n"), DataError);
    const std::string extra = std::string(kHeader).substr(0, std::string(kHeader).size() - 1) + ",extra\n";
    EXPECT_THROW(parse(extra), DataError);
    EXPECT_THROW(load_dataset("/nonexistent/stroke.csv"), DataError);
}

TEST(LoadDataset, RejectsOutOfDomainValues) {
    EXPECT_THROW(parse(std::string(kHeader) + "1,Male,140,0,1,Yes,Private,Urban,100,30,smokes,1\n"), DataError);
    EXPECT_THROW(parse(std::string(kHeader) + "1,Male,40,2,1,Yes,Private,Urban,100,30,smokes,1\n"), DataError);
    EXPECT_THROW(parse(std::string(kHeader) + "1,Male,40,0,1,Yes,Private,Urban,100,3,smokes,1\n"), DataError);
}

TEST(LoadDataset, CsvWriterRoundTrips) {
    const auto table = synthetic::make_cohort({300, 11});
    std::ostringstream out;
    write_csv(out, table);
    const auto back = parse(out.str());
    ASSERT_EQ(back.size(), table.size());
    for (std::size_t i = 0; i < table.size(); ++i) EXPECT_EQ(back.rows[i], table.rows[i]) << i;
}

TEST(LoadDataset, PublicStrokeTableCounts) {
    const auto path = testdata::stroke_csv();
    if (!path) GTEST_SKIP() << "stroke CSV not available (set STROKELAB_DATA)";
    const auto t = load_dataset(*path);
    EXPECT_EQ(t.size(), 5110u);
    EXPECT_EQ(t.missing_bmi(), 201u);
}

TEST(Preprocess, LexicographicCodes) {
    const auto pre = preprocess(parse(sample_csv()));
    EXPECT_EQ(pre.encoders.encode("gender", "Female"), 0);
    EXPECT_EQ(pre.encoders.encode("gender", "Male"), 1);
    EXPECT_EQ(pre.encoders.encode("gender", "Other"), 2);
    EXPECT_EQ(pre.encoders.encode("ever_married", "No"), 0);
    EXPECT_EQ(pre.encoders.encode("ever_married", "Yes"), 1);
    EXPECT_EQ(pre.dataset.features(0, 0), 1.0);  // Male
    EXPECT_EQ(pre.dataset.row_ids[0], 9046);
    EXPECT_EQ(pre.dataset.labels[0], 1);
}

TEST(Preprocess, EncodingRoundTripCoversAllCodes) {
    const auto table = synthetic::make_cohort({2000, 5});
    const auto enc = EncoderMap::fit(table);
    for (auto column : kCategoricalColumns) {
        std::set<int> seen;
        for (const auto& r : table.rows) {
            const int code = enc.encode(column, r.categorical(column));
            EXPECT_EQ(enc.decode(column, code), r.categorical(column));
            seen.insert(code);
        }
        const auto k = static_cast<int>(enc.levels(column).size());
        EXPECT_EQ(seen.size(), static_cast<std::size_t>(k)) << column;
        EXPECT_EQ(*seen.begin(), 0);
        EXPECT_EQ(*seen.rbegin(), k - 1);
    }
}

TEST(Preprocess, UnseenCategoryIsReported) {
    const auto table = parse(sample_csv());
    const auto enc = EncoderMap::fit(table);
    auto other = table;
    other.rows[0].work_type = "Astronaut";
    try {
        preprocess(other, {}, &enc);
        FAIL() << "expected unseen-category error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("Astronaut"), std::string::npos);
    }
}

TEST(Preprocess, NoMissingBmiMeansNoImputationEffect) {
    auto table = parse(sample_csv());
    table.rows.erase(table.rows.begin() + 1);
    const auto pre = preprocess(table);
    for (std::size_t i = 0; i < table.size(); ++i) {
        EXPECT_EQ(pre.dataset.features(i, 1), table.rows[i].age);
        EXPECT_EQ(pre.dataset.features(i, 7), table.rows[i].avg_glucose_level);
        EXPECT_EQ(pre.dataset.features(i, 8), *table.rows[i].bmi);
    }
}

TEST(Preprocess, MeanImputationUsesFitRowsOnly) {
    const auto table = parse(sample_csv());
    PreprocessConfig config;
    config.fit_rows = {0, 1, 2};  // observed BMI 36.6 and 32.5
    const auto pre = preprocess(table, config);
    EXPECT_DOUBLE_EQ(pre.imputation_value, (36.6 + 32.5) / 2.0);
    EXPECT_DOUBLE_EQ(pre.dataset.features(1, 8), (36.6 + 32.5) / 2.0);
}

TEST(Preprocess, DropStrategyRemovesRows) {
    const auto pre = preprocess(parse(sample_csv()), {ImputeStrategy::Drop, {}});
    EXPECT_EQ(pre.rows_dropped, 1u);
    EXPECT_EQ(pre.dataset.size(), 7u);
    EXPECT_EQ(pre.dataset.row_ids[1], 31112);
}

namespace {
Dataset cohort_dataset(std::size_t rows, std::uint64_t seed = 9) {
    return preprocess(synthetic::make_cohort({rows, seed})).dataset;
}
}  // namespace

TEST(Split, SizesFollowRoundHalfUp) {
    const auto ds = cohort_dataset(5110);
    const auto [train, test] = split(ds, 0.2, 42);
    EXPECT_EQ(test.size(), 1022u);
    EXPECT_EQ(train.size(), 4088u);
    // 0.5 * 5 = 2.5 rounds up
    const auto small = cohort_dataset(5);
    EXPECT_EQ(split_indices(small.labels, 0.5, 1, false).test.size(), 3u);
}

TEST(Split, DisjointExhaustiveAndDeterministic) {
    const auto ds = cohort_dataset(1000);
    for (bool stratified : {false, true}) {
        const auto a = split_indices(ds.labels, 0.2, 7, stratified);
        const auto b = split_indices(ds.labels, 0.2, 7, stratified);
        EXPECT_EQ(a, b);
        std::set<std::size_t> all(a.train.begin(), a.train.end());
        for (auto i : a.test) EXPECT_TRUE(all.insert(i).second);
        EXPECT_EQ(all.size(), ds.size());
        EXPECT_NE(a, split_indices(ds.labels, 0.2, 8, stratified));
    }
}

TEST(Split, StratifiedPreservesClassProportions) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ds = cohort_dataset(997, seed);
        const auto p = split_indices(ds.labels, 0.2, seed, true);
        EXPECT_EQ(p.test.size(), round_half_up(0.2 * 997));
        std::size_t test_pos = 0;
        for (auto i : p.test) test_pos += static_cast<std::size_t>(ds.labels[i]);
        const double expected = 0.2 * static_cast<double>(ds.positives());
        EXPECT_LE(std::abs(static_cast<double>(test_pos) - expected), 1.0);
    }
}

TEST(Split, Errors) {
    const auto ds = cohort_dataset(100);
    EXPECT_THROW(split(ds, 0.0, 1), UsageError);
    EXPECT_THROW(split(ds, 1.0, 1), UsageError);
    std::vector<int> one_class(50, 0);
    EXPECT_THROW(split_indices(one_class, 0.2, 1, true), DataError);
    EXPECT_NO_THROW(split_indices(one_class, 0.2, 1, false));
}

TEST(Standardize, KnownColumn) {
    Dataset train;
    train.columns = {"a"};
    train.features = Matrix<double>(3, 1);
    train.features(0, 0) = 1;
    train.features(1, 0) = 2;
    train.features(2, 0) = 3;
    train.labels = {0, 1, 0};
    train.row_ids = {1, 2, 3};
    Dataset test = train.subset(std::vector<std::size_t>{1}, "test");
    const auto out = standardize(train, test);
    EXPECT_DOUBLE_EQ(out.params.mean[0], 2.0);
    EXPECT_NEAR(out.params.std[0], std::sqrt(2.0 / 3.0), 1e-15);
    EXPECT_NEAR(out.train.features(0, 0), -1.2247448713915890, 1e-12);
    EXPECT_NEAR(out.train.features(1, 0), 0.0, 1e-15);
    EXPECT_NEAR(out.train.features(2, 0), 1.2247448713915890, 1e-12);
    EXPECT_EQ(out.test.features(0, 0), 0.0);  // equals the train mean
}

TEST(Standardize, ConstantColumnBecomesZeros) {
    Dataset train;
    train.columns = {"a"};
    train.features = Matrix<double>(4, 1, 7.5);
    train.labels = {0, 1, 0, 1};
    train.row_ids = {1, 2, 3, 4};
    const auto out = standardize(train, train);
    EXPECT_EQ(out.params.std[0], 1.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out.train.features(i, 0), 0.0);
}

TEST(Standardize, TrainingColumnsHaveZeroMeanUnitStd) {
    const auto ds = cohort_dataset(3000, 4);
    const auto [train, test] = split(ds, 0.2, 3);
    const auto out = standardize(train, test);
    const auto& x = out.train.features;
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, c);
        mean /= static_cast<double>(x.rows());
        double var = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
        const double sd = std::sqrt(var / static_cast<double>(x.rows()));
        EXPECT_LT(std::abs(mean), 1e-9) << c;
        EXPECT_NEAR(sd, 1.0, 1e-9) << c;
    }
}

TEST(ClassWeights, BalancedFormula) {
    std::vector<int> labels(100, 0);
    std::fill(labels.begin(), labels.begin() + 10, 1);
    const auto w = class_weights(labels);
    EXPECT_DOUBLE_EQ(w.positive, 5.0);
    EXPECT_NEAR(w.negative, 0.5555555555555556, 1e-15);

    const std::vector<int> balanced{0, 1, 0, 1, 1, 0};
    const auto b = class_weights(balanced);
    EXPECT_DOUBLE_EQ(b.positive, 1.0);
    EXPECT_DOUBLE_EQ(b.negative, 1.0);

    EXPECT_THROW(class_weights(std::vector<int>(5, 1)), DataError);
}

TEST(ClassWeights, WeightedMassEqualsRowCount) {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(300);
        std::vector<int> labels(n);
        for (auto& y : labels) y = rng.bernoulli(0.1) ? 1 : 0;
        labels[0] = 1;
        labels[1] = 0;
        const auto w = class_weights(labels);
        const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
        const double mass = w.positive * pos + w.negative * (static_cast<double>(n) - pos);
        EXPECT_NEAR(mass, static_cast<double>(n), 1e-9 * static_cast<double>(n));
        if (pos / static_cast<double>(n) < 0.5) {
            EXPECT_GT(w.positive, w.negative);
        }
    }
}

TEST(ClassWeights, PublicStrokeTable) {
    const auto path = testdata::stroke_csv();
    if (!path) GTEST_SKIP() << "stroke CSV not available (set STROKELAB_DATA)";
    const auto w = class_weights(load_dataset(*path).labels());
    // 249 positives of 5110
    EXPECT_NEAR(w.positive, 5110.0 / (2.0 * 249.0), 1e-12);
    EXPECT_NEAR(w.negative, 5110.0 / (2.0 * 4861.0), 1e-12);
}

TEST(Prepare, ProducesCompleteStandardizedSplits) {
    const auto raw = synthetic::make_cohort({1500, 21});
    const auto prepared = prepare(raw, {ImputeStrategy::Mean, 0.2, 5, false});
    EXPECT_EQ(prepared.test.size(), 300u);
    EXPECT_EQ(prepared.train.size(), 1200u);
    for (double v : prepared.train.features.data()) EXPECT_TRUE(std::isfinite(v));
    for (double v : prepared.test.features.data()) EXPECT_TRUE(std::isfinite(v));

    // the artifacts reproduce the transform of any raw row
    std::map<std::int64_t, const PatientRecord*> by_id;
    for (const auto& r : raw.rows) by_id[r.id] = &r;
    for (std::size_t i = 0; i < prepared.test.size(); i += 17) {
        const auto x = prepared.artifacts.transform(*by_id.at(prepared.test.row_ids[i]));
        for (std::size_t c = 0; c < x.size(); ++c) EXPECT_NEAR(x[c], prepared.test.features(i, c), 1e-12);
    }
    // imputation mean comes from the training rows
    std::set<std::int64_t> train_ids(prepared.train.row_ids.begin(), prepared.train.row_ids.end());
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : raw.rows)
        if (r.bmi && train_ids.count(r.id)) sum += *r.bmi, ++count;
    EXPECT_NEAR(prepared.artifacts.imputation_value, sum / static_cast<double>(count), 1e-12);
}

TEST(Prepare, ArtifactsJsonRoundTrip) {
    const auto prepared = prepare(synthetic::make_cohort({800, 2}), {});
    const auto back = PreprocessArtifacts::from_json(json::parse(prepared.artifacts.to_json().dump()));
    EXPECT_EQ(back, prepared.artifacts);
    EXPECT_EQ(back.fingerprint(), prepared.artifacts.fingerprint());
}

TEST(Prepare, DropStrategyKeepsOnlyObservedBmi) {
    const auto raw = synthetic::make_cohort({1000, 8});
    const auto prepared = prepare(raw, {ImputeStrategy::Drop, 0.2, 1, true});
    EXPECT_EQ(prepared.train.size() + prepared.test.size(), raw.size() - raw.missing_bmi());
}

TEST(PatientJson, RoundTripAndValidation) {
    const auto table = parse(sample_csv());
    for (const auto& r : table.rows) EXPECT_EQ(record_from_json(record_to_json(r)), r);
    auto j = record_to_json(table.rows[0]);
    j.erase("stroke");
    j["bmi"] = "N/A";
    const auto r = record_from_json(j);
    EXPECT_FALSE(r.bmi.has_value());
    j.erase("age");
    EXPECT_THROW(record_from_json(j), DataError);
}
