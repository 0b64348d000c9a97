/*
 * data.hpp
 *
 * Stroke CSV loading and preprocessing: label encoding, BMI imputation,
 * train/test split, standardization and class weights.
 */
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace strokelab::data {

using json = nlohmann::json;

/// Feature columns in model order. The order is part of every serialized
/// artifact and must not change.
inline constexpr std::array<std::string_view, 10> kFeatureColumns = {
    "gender",         "age",       "hypertension",      "heart_disease", "ever_married",
    "work_type",      "Residence_type", "avg_glucose_level", "bmi",      "smoking_status"};

inline constexpr std::array<std::string_view, 5> kCategoricalColumns = {
    "gender", "ever_married", "work_type", "Residence_type", "smoking_status"};

inline constexpr std::string_view kIdColumn = "id";
inline constexpr std::string_view kLabelColumn = "stroke";
inline constexpr std::string_view kMissingToken = "N/A";

inline std::vector<std::string> feature_names() {
    return {kFeatureColumns.begin(), kFeatureColumns.end()};
}

inline bool is_categorical(std::string_view column) {
    return std::find(kCategoricalColumns.begin(), kCategoricalColumns.end(), column) !=
           kCategoricalColumns.end();
}

/// One parsed row of the stroke table.
struct PatientRecord {
    std::int64_t id = 0;
    std::string gender;
    double age = 0.0;
    int hypertension = 0;
    int heart_disease = 0;
    std::string ever_married;
    std::string work_type;
    std::string residence_type;
    double avg_glucose_level = 0.0;
    std::optional<double> bmi;
    std::string smoking_status;
    int stroke = 0;

    const std::string& categorical(std::string_view column) const {
        if (column == "gender") return gender;
        if (column == "ever_married") return ever_married;
        if (column == "work_type") return work_type;
        if (column == "Residence_type") return residence_type;
        if (column == "smoking_status") return smoking_status;
        throw UsageError("data", "not a categorical column: " + std::string(column));
    }

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

/// Checks the domain invariants of a record; `where` prefixes the message.
inline void validate_record(const PatientRecord& r, const std::string& where) {
    auto fail = [&](std::string_view column, const std::string& why) {
        throw DataError("load", where + ", column '" + std::string(column) + "': " + why);
    };
    if (!(r.age >= 0.0 && r.age <= 130.0)) fail("age", "outside [0, 130]");
    if (r.hypertension != 0 && r.hypertension != 1) fail("hypertension", "not binary");
    if (r.heart_disease != 0 && r.heart_disease != 1) fail("heart_disease", "not binary");
    if (r.stroke != 0 && r.stroke != 1) fail("stroke", "not binary");
    if (!(r.avg_glucose_level > 0.0 && r.avg_glucose_level < 500.0))
        fail("avg_glucose_level", "outside (0, 500)");
    if (r.bmi && !(*r.bmi > 5.0 && *r.bmi < 120.0)) fail("bmi", "outside (5, 120)");
    for (auto column : kCategoricalColumns) {
        if (r.categorical(column).empty()) fail(column, "empty category");
    }
}

/// Parsed stroke table. The id column is kept for auditing only.
struct RawTable {
    std::string source;
    std::vector<PatientRecord> rows;

    std::size_t size() const noexcept { return rows.size(); }
    bool empty() const noexcept { return rows.empty(); }
    std::size_t missing_bmi() const {
        return static_cast<std::size_t>(
            std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.bmi; }));
    }
    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r.stroke);
        return out;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view text) {
    text = trim(text);
    if (text.empty()) return std::nullopt;
    if (text.front() == '+') text.remove_prefix(1);
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(value)) return std::nullopt;
    }
    return value;
}

}  // namespace detail

/// Parses a stroke CSV from a stream. The header must name exactly the
/// twelve canonical columns, in any order.
inline RawTable parse_csv(std::istream& in, const std::string& source) {
    RawTable table;
    table.source = source;

    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("load", source + ": missing header row");
    }
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
        static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
        line.erase(0, 3);
    }

    std::vector<std::string> expected{std::string(kIdColumn)};
    for (auto c : kFeatureColumns) expected.emplace_back(c);
    expected.emplace_back(kLabelColumn);

    std::map<std::string, std::size_t> position;
    const auto header = detail::split_csv_line(line);
    for (std::size_t i = 0; i < header.size(); ++i) {
        std::string name(detail::trim(header[i]));
        if (std::find(expected.begin(), expected.end(), name) == expected.end()) {
            throw DataError("load", source + ": unknown column '" + name + "'");
        }
        if (!position.emplace(name, i).second) {
            throw DataError("load", source + ": duplicate column '" + name + "'");
        }
    }
    for (const auto& name : expected) {
        if (!position.count(name)) throw DataError("load", source + ": missing column '" + name + "'");
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        const std::size_t row_index = table.rows.size() + 1;
        const std::string where = source + ": row " + std::to_string(row_index) + " (line " +
                                  std::to_string(line_no) + ")";
        if (cells.size() != header.size()) {
            throw DataError("load", where + ": expected " + std::to_string(header.size()) +
                                        " cells, found " + std::to_string(cells.size()));
        }
        auto cell = [&](std::string_view column) -> std::string_view {
            return detail::trim(cells[position.at(std::string(column))]);
        };
        auto bad = [&](std::string_view column) -> DataError {
            return DataError("load", where + ", column '" + std::string(column) + "': cannot parse '" +
                                         std::string(cell(column)) + "'");
        };
        auto real = [&](std::string_view column) {
            auto v = detail::parse_number<double>(cell(column));
            if (!v) throw bad(column);
            return *v;
        };
        auto binary = [&](std::string_view column) {
            // some exports write binary flags as 0.0/1.0
            auto v = detail::parse_number<double>(cell(column));
            if (!v || (*v != 0.0 && *v != 1.0)) throw bad(column);
            return static_cast<int>(*v);
        };

        PatientRecord r;
        auto id = detail::parse_number<std::int64_t>(cell(kIdColumn));
        if (!id) throw bad(kIdColumn);
        r.id = *id;
        r.gender = std::string(cell("gender"));
        r.age = real("age");
        r.hypertension = binary("hypertension");
        r.heart_disease = binary("heart_disease");
        r.ever_married = std::string(cell("ever_married"));
        r.work_type = std::string(cell("work_type"));
        r.residence_type = std::string(cell("Residence_type"));
        r.avg_glucose_level = real("avg_glucose_level");
        if (cell("bmi") != kMissingToken) r.bmi = real("bmi");
        r.smoking_status = std::string(cell("smoking_status"));
        r.stroke = binary(kLabelColumn);
        validate_record(r, where);
        table.rows.push_back(std::move(r));
    }
    return table;
}

inline RawTable load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load", "cannot open dataset file '" + path.string() + "'");
    return parse_csv(in, path.string());
}

inline void write_csv(std::ostream& out, const RawTable& table) {
    out << kIdColumn;
    for (auto c : kFeatureColumns) out << ',' << c;
    out << ',' << kLabelColumn << '\n';
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    for (const auto& r : table.rows) {
        out << r.id << ',' << r.gender << ',' << num(r.age) << ',' << r.hypertension << ','
            << r.heart_disease << ',' << r.ever_married << ',' << r.work_type << ','
            << r.residence_type << ',' << num(r.avg_glucose_level) << ','
            << (r.bmi ? num(*r.bmi) : std::string(kMissingToken)) << ',' << r.smoking_status << ','
            << r.stroke << '\n';
    }
}

/// Raw patient JSON uses the CSV column names; `stroke` and `id` are optional
/// and `bmi` may be null or "N/A".
inline PatientRecord record_from_json(const json& j) {
    auto need = [&](std::string_view key) -> const json& {
        auto it = j.find(std::string(key));
        if (it == j.end()) throw DataError("input", "patient record lacks field '" + std::string(key) + "'");
        return *it;
    };
    auto text = [&](std::string_view key) {
        const auto& v = need(key);
        if (!v.is_string()) throw DataError("input", "field '" + std::string(key) + "' must be a string");
        return v.get<std::string>();
    };
    auto number = [&](std::string_view key) {
        const auto& v = need(key);
        if (!v.is_number()) throw DataError("input", "field '" + std::string(key) + "' must be a number");
        return v.get<double>();
    };
    auto flag = [&](std::string_view key) {
        const double v = number(key);
        if (v != 0.0 && v != 1.0) throw DataError("input", "field '" + std::string(key) + "' must be 0 or 1");
        return static_cast<int>(v);
    };
    PatientRecord r;
    if (j.contains("id")) r.id = j.at("id").get<std::int64_t>();
    r.gender = text("gender");
    r.age = number("age");
    r.hypertension = flag("hypertension");
    r.heart_disease = flag("heart_disease");
    r.ever_married = text("ever_married");
    r.work_type = text("work_type");
    r.residence_type = text("Residence_type");
    r.avg_glucose_level = number("avg_glucose_level");
    const auto& bmi = need("bmi");
    if (bmi.is_number()) {
        r.bmi = bmi.get<double>();
    } else if (!(bmi.is_null() || (bmi.is_string() && bmi.get<std::string>() == kMissingToken))) {
        throw DataError("input", "field 'bmi' must be a number, null or \"N/A\"");
    }
    r.smoking_status = text("smoking_status");
    if (j.contains("stroke")) r.stroke = flag("stroke");
    validate_record(r, "patient record");
    return r;
}

inline json record_to_json(const PatientRecord& r) {
    return json{{"id", r.id},
                {"gender", r.gender},
                {"age", r.age},
                {"hypertension", r.hypertension},
                {"heart_disease", r.heart_disease},
                {"ever_married", r.ever_married},
                {"work_type", r.work_type},
                {"Residence_type", r.residence_type},
                {"avg_glucose_level", r.avg_glucose_level},
                {"bmi", r.bmi ? json(*r.bmi) : json(nullptr)},
                {"smoking_status", r.smoking_status},
                {"stroke", r.stroke}};
}

/// Lexicographic label encoding per categorical column: codes 0..k-1.
class EncoderMap {
public:
    EncoderMap() = default;

    /// Fits on every row of `table`.
    static EncoderMap fit(const RawTable& table) {
        EncoderMap map;
        for (auto column : kCategoricalColumns) {
            std::vector<std::string> levels;
            for (const auto& r : table.rows) levels.push_back(r.categorical(column));
            std::sort(levels.begin(), levels.end());
            levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
            map.levels_[std::string(column)] = std::move(levels);
        }
        return map;
    }

    int encode(std::string_view column, std::string_view value) const {
        const auto& lv = levels(column);
        auto it = std::lower_bound(lv.begin(), lv.end(), value);
        if (it == lv.end() || *it != value) {
            throw DataError("preprocess", "unseen category '" + std::string(value) + "' in column '" +
                                              std::string(column) + "'");
        }
        return static_cast<int>(it - lv.begin());
    }

    const std::string& decode(std::string_view column, int code) const {
        const auto& lv = levels(column);
        if (code < 0 || static_cast<std::size_t>(code) >= lv.size()) {
            throw DataError("preprocess", "code " + std::to_string(code) + " out of range for column '" +
                                              std::string(column) + "'");
        }
        return lv[static_cast<std::size_t>(code)];
    }

    const std::vector<std::string>& levels(std::string_view column) const {
        auto it = levels_.find(std::string(column));
        if (it == levels_.end()) {
            throw UsageError("preprocess", "no encoder for column '" + std::string(column) + "'");
        }
        return it->second;
    }

    json to_json() const {
        json j = json::object();
        for (const auto& [column, lv] : levels_) j[column] = lv;
        return j;
    }

    static EncoderMap from_json(const json& j) {
        EncoderMap map;
        for (auto column : kCategoricalColumns) {
            auto lv = j.at(std::string(column)).get<std::vector<std::string>>();
            if (!std::is_sorted(lv.begin(), lv.end()) ||
                std::adjacent_find(lv.begin(), lv.end()) != lv.end()) {
                throw DataError("preprocess", "encoder levels for '" + std::string(column) +
                                                  "' are not strictly sorted");
            }
            map.levels_[std::string(column)] = std::move(lv);
        }
        return map;
    }

    friend bool operator==(const EncoderMap&, const EncoderMap&) = default;

private:
    std::map<std::string, std::vector<std::string>> levels_;
};

enum class ImputeStrategy { Mean, Drop };

inline std::string to_string(ImputeStrategy s) { return s == ImputeStrategy::Mean ? "mean" : "drop"; }

inline ImputeStrategy parse_impute(std::string_view s) {
    if (s == "mean") return ImputeStrategy::Mean;
    if (s == "drop") return ImputeStrategy::Drop;
    throw UsageError("config", "impute must be 'mean' or 'drop', got '" + std::string(s) + "'");
}

struct Provenance {
    std::string source;
    std::string split = "all";
    std::uint64_t seed = 0;
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Encoded feature matrix plus labels. Never contains missing values.
struct Dataset {
    Matrix<double> features;
    std::vector<int> labels;
    std::vector<std::string> columns;
    std::vector<std::int64_t> row_ids;
    Provenance provenance;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t width() const noexcept { return features.cols(); }
    std::size_t positives() const {
        return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    }

    Dataset subset(std::span<const std::size_t> indices, std::string split_tag) const {
        Dataset out;
        out.features = features.select_rows(indices);
        out.columns = columns;
        out.labels.reserve(indices.size());
        out.row_ids.reserve(indices.size());
        for (auto i : indices) {
            out.labels.push_back(labels[i]);
            out.row_ids.push_back(row_ids[i]);
        }
        out.provenance = provenance;
        out.provenance.split = std::move(split_tag);
        return out;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct PreprocessConfig {
    ImputeStrategy impute = ImputeStrategy::Mean;
    /// Rows whose observed BMI defines the imputation mean. Empty means all
    /// rows; pipelines pass the training rows here.
    std::vector<std::size_t> fit_rows;
};

struct PreprocessResult {
    Dataset dataset;
    EncoderMap encoders;
    double imputation_value = 0.0;
    std::size_t rows_dropped = 0;
};

/// Mean of the observed BMI values over `rows` (all rows when empty).
inline double observed_bmi_mean(const RawTable& raw, std::span<const std::size_t> rows) {
    double sum = 0.0;
    std::size_t count = 0;
    auto visit = [&](const PatientRecord& r) {
        if (r.bmi) {
            sum += *r.bmi;
            ++count;
        }
    };
    if (rows.empty()) {
        for (const auto& r : raw.rows) visit(r);
    } else {
        for (auto i : rows) visit(raw.rows.at(i));
    }
    if (count == 0) throw DataError("preprocess", "no observed BMI values to impute from");
    return sum / static_cast<double>(count);
}

/// Writes the ten encoded (unscaled) features of one record into `out`.
inline void encode_record(const PatientRecord& r, const EncoderMap& encoders, double bmi_fill,
                          std::span<double> out) {
    out[0] = encoders.encode("gender", r.gender);
    out[1] = r.age;
    out[2] = r.hypertension;
    out[3] = r.heart_disease;
    out[4] = encoders.encode("ever_married", r.ever_married);
    out[5] = encoders.encode("work_type", r.work_type);
    out[6] = encoders.encode("Residence_type", r.residence_type);
    out[7] = r.avg_glucose_level;
    out[8] = r.bmi.value_or(bmi_fill);
    out[9] = encoders.encode("smoking_status", r.smoking_status);
}

/// Encodes categoricals and fills or drops missing BMI. When `fitted` is
/// given it is applied instead of fitting a new encoder, and unseen
/// categories are reported.
inline PreprocessResult preprocess(const RawTable& raw, const PreprocessConfig& config = {},
                                   const EncoderMap* fitted = nullptr) {
    if (raw.empty()) throw DataError("preprocess", "table has no rows");
    PreprocessResult result;
    result.encoders = fitted ? *fitted : EncoderMap::fit(raw);

    std::vector<std::size_t> kept;
    kept.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (config.impute == ImputeStrategy::Drop && !raw.rows[i].bmi) continue;
        kept.push_back(i);
    }
    result.rows_dropped = raw.size() - kept.size();
    if (kept.empty()) throw DataError("preprocess", "every row was dropped for missing BMI");

    // also recorded under Drop: single-record prediction falls back to it
    result.imputation_value = observed_bmi_mean(raw, config.fit_rows);

    Dataset& ds = result.dataset;
    ds.columns = feature_names();
    ds.features = Matrix<double>(kept.size(), kFeatureColumns.size());
    ds.labels.reserve(kept.size());
    ds.row_ids.reserve(kept.size());
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const auto& r = raw.rows[kept[k]];
        encode_record(r, result.encoders, result.imputation_value, ds.features.row(k));
        ds.labels.push_back(r.stroke);
        ds.row_ids.push_back(r.id);
    }
    ds.provenance.source = raw.source;
    return result;
}

/// Disjoint, exhaustive row partition; both index lists ascending.
struct Partition {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    friend bool operator==(const Partition&, const Partition&) = default;
};

/// Seeded partition of `labels.size()` rows. |test| = round(fraction * n).
/// Stratified mode allocates the test rows per class by largest remainder.
inline Partition split_indices(std::span<const int> labels, double test_fraction, std::uint64_t seed,
                               bool stratified) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw UsageError("split", "test fraction must lie in (0, 1)");
    }
    const std::size_t n = labels.size();
    const std::size_t n_test = round_half_up(test_fraction * static_cast<double>(n));
    if (n_test == 0 || n_test >= n) {
        throw DataError("split", "fraction " + std::to_string(test_fraction) + " of " + std::to_string(n) +
                                     " rows leaves an empty partition");
    }

    Rng rng(derive_seed(seed, 0x53504C4954ULL));
    std::vector<bool> in_test(n, false);
    if (!stratified) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        for (std::size_t k = 0; k < n_test; ++k) in_test[order[k]] = true;
    } else {
        std::array<std::vector<std::size_t>, 2> members;
        for (std::size_t i = 0; i < n; ++i) members.at(labels[i] == 1 ? 1 : 0).push_back(i);
        for (const auto& m : members) {
            if (m.empty()) throw DataError("split", "stratified split needs both classes present");
        }
        std::array<std::size_t, 2> take{};
        std::array<double, 2> remainder{};
        std::size_t allocated = 0;
        for (std::size_t c = 0; c < 2; ++c) {
            const double exact = test_fraction * static_cast<double>(members[c].size());
            take[c] = static_cast<std::size_t>(std::floor(exact));
            remainder[c] = exact - std::floor(exact);
            allocated += take[c];
        }
        while (allocated < n_test) {
            const std::size_t c = remainder[1] > remainder[0] ? 1 : 0;
            ++take[c];
            remainder[c] = -1.0;
            ++allocated;
        }
        for (std::size_t c = 0; c < 2; ++c) {
            auto order = members[c];
            rng.shuffle(order);
            for (std::size_t k = 0; k < take[c]; ++k) in_test[order[k]] = true;
        }
    }

    Partition p;
    p.test.reserve(n_test);
    p.train.reserve(n - n_test);
    for (std::size_t i = 0; i < n; ++i) (in_test[i] ? p.test : p.train).push_back(i);
    return p;
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed,
                                         bool stratified = false) {
    const auto p = split_indices(ds.labels, test_fraction, seed, stratified);
    auto train = ds.subset(p.train, "train");
    auto test = ds.subset(p.test, "test");
    train.provenance.seed = test.provenance.seed = seed;
    return {std::move(train), std::move(test)};
}

/// Per-column mean and population standard deviation from the training split.
struct ScalerParams {
    std::vector<double> mean;
    std::vector<double> std;

    static constexpr double kDegenerateStd = 1e-12;

    static ScalerParams fit(const Matrix<double>& x) {
        if (x.rows() == 0) throw DataError("standardize", "cannot fit a scaler on zero rows");
        ScalerParams p;
        p.mean.assign(x.cols(), 0.0);
        p.std.assign(x.cols(), 0.0);
        const double n = static_cast<double>(x.rows());
        for (std::size_t c = 0; c < x.cols(); ++c) {
            double sum = 0.0;
            for (std::size_t r = 0; r < x.rows(); ++r) sum += x(r, c);
            const double mu = sum / n;
            double ss = 0.0;
            for (std::size_t r = 0; r < x.rows(); ++r) ss += (x(r, c) - mu) * (x(r, c) - mu);
            const double sd = std::sqrt(ss / n);
            p.mean[c] = mu;
            p.std[c] = sd < kDegenerateStd ? 1.0 : sd;
        }
        return p;
    }

    void apply(std::span<double> row) const {
        if (row.size() != mean.size()) throw UsageError("standardize", "feature width mismatch");
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean[c]) / std[c];
    }

    void apply(Matrix<double>& x) const {
        for (std::size_t r = 0; r < x.rows(); ++r) apply(x.row(r));
    }

    json to_json() const { return json{{"mean", mean}, {"std", std}}; }
    static ScalerParams from_json(const json& j) {
        ScalerParams p{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
        if (p.mean.size() != p.std.size()) throw DataError("standardize", "scaler mean/std length mismatch");
        return p;
    }
    friend bool operator==(const ScalerParams&, const ScalerParams&) = default;
};

struct StandardizeResult {
    Dataset train;
    Dataset test;
    ScalerParams params;
};

inline StandardizeResult standardize(const Dataset& train, const Dataset& test) {
    if (train.size() == 0) throw DataError("standardize", "training split is empty");
    if (train.columns != test.columns) throw UsageError("standardize", "splits disagree on column order");
    StandardizeResult out{train, test, ScalerParams::fit(train.features)};
    out.params.apply(out.train.features);
    out.params.apply(out.test.features);
    return out;
}

/// Balanced inverse-frequency weights w_c = n / (2 n_c).
struct ClassWeights {
    double negative = 1.0;
    double positive = 1.0;
    double of(int label) const noexcept { return label == 1 ? positive : negative; }
    json to_json() const { return json{{"negative", negative}, {"positive", positive}}; }
    static ClassWeights from_json(const json& j) {
        return {j.at("negative").get<double>(), j.at("positive").get<double>()};
    }
    friend bool operator==(const ClassWeights&, const ClassWeights&) = default;
};

inline ClassWeights class_weights(std::span<const int> labels) {
    const auto n = labels.size();
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const auto n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DataError("class_weights", "labels contain a single class");
    const double dn = static_cast<double>(n);
    return {dn / (2.0 * static_cast<double>(n_neg)), dn / (2.0 * static_cast<double>(n_pos))};
}

/// Everything needed to reproduce the feature transform for a new record.
struct PreprocessArtifacts {
    EncoderMap encoders;
    ImputeStrategy impute = ImputeStrategy::Mean;
    double imputation_value = 0.0;
    ScalerParams scaler;
    std::vector<std::string> columns = feature_names();
    std::uint64_t seed = 0;
    double test_fraction = 0.2;
    bool stratified = false;

    /// Encoded and standardized feature vector for one record. With the drop
    /// strategy a record without BMI still gets the training mean, so single
    /// predictions never fail on a missing measurement.
    std::vector<double> transform(const PatientRecord& r) const {
        std::vector<double> x(columns.size());
        encode_record(r, encoders, imputation_value, x);
        scaler.apply(x);
        return x;
    }

    json to_json() const {
        return json{{"schema_version", 1},
                    {"columns", columns},
                    {"encoders", encoders.to_json()},
                    {"impute", to_string(impute)},
                    {"imputation_value", imputation_value},
                    {"scaler", scaler.to_json()},
                    {"seed", seed},
                    {"test_fraction", test_fraction},
                    {"stratified", stratified}};
    }

    static PreprocessArtifacts from_json(const json& j) {
        PreprocessArtifacts a;
        if (j.at("schema_version").get<int>() != 1) {
            throw DataError("preprocess", "unsupported preprocessing schema version");
        }
        a.columns = j.at("columns").get<std::vector<std::string>>();
        if (a.columns != feature_names()) throw DataError("preprocess", "unexpected feature column list");
        a.encoders = EncoderMap::from_json(j.at("encoders"));
        a.impute = parse_impute(j.at("impute").get<std::string>());
        a.imputation_value = j.at("imputation_value").get<double>();
        a.scaler = ScalerParams::from_json(j.at("scaler"));
        if (a.scaler.mean.size() != a.columns.size()) throw DataError("preprocess", "scaler width mismatch");
        a.seed = j.at("seed").get<std::uint64_t>();
        a.test_fraction = j.at("test_fraction").get<double>();
        a.stratified = j.at("stratified").get<bool>();
        return a;
    }

    /// Stable identity of the transform; models fitted on the same
    /// preprocessing share it.
    std::string fingerprint() const { return to_hex(fnv1a64(to_json().dump())); }

    friend bool operator==(const PreprocessArtifacts&, const PreprocessArtifacts&) = default;
};

struct PipelineOptions {
    ImputeStrategy impute = ImputeStrategy::Mean;
    double test_fraction = 0.2;
    std::uint64_t seed = 42;
    bool stratified = false;
};

/// Standardized train/test splits and the artifacts that produced them.
struct PreparedData {
    Dataset train;
    Dataset test;
    PreprocessArtifacts artifacts;
};

/// Full preprocessing pipeline: drop (if asked), split rows, impute BMI from
/// the training rows, encode, then standardize with training statistics.
inline PreparedData prepare(const RawTable& raw, const PipelineOptions& options) {
    if (raw.empty()) throw DataError("preprocess", "table has no rows");
    RawTable kept;
    kept.source = raw.source;
    for (const auto& r : raw.rows) {
        if (options.impute == ImputeStrategy::Drop && !r.bmi) continue;
        kept.rows.push_back(r);
    }
    if (kept.empty()) throw DataError("preprocess", "every row was dropped for missing BMI");

    const auto labels = kept.labels();
    const auto partition = split_indices(labels, options.test_fraction, options.seed, options.stratified);

    PreprocessConfig config{options.impute, partition.train};
    // encoder levels come from every kept row so rare categories seen only
    // in the test rows still encode
    auto pre = preprocess(kept, config, nullptr);
    pre.dataset.provenance.seed = options.seed;

    auto std_result = standardize(pre.dataset.subset(partition.train, "train"),
                                  pre.dataset.subset(partition.test, "test"));

    PreparedData out;
    out.train = std::move(std_result.train);
    out.test = std::move(std_result.test);
    out.artifacts.encoders = std::move(pre.encoders);
    out.artifacts.impute = options.impute;
    out.artifacts.imputation_value = pre.imputation_value;
    out.artifacts.scaler = std::move(std_result.params);
    out.artifacts.seed = options.seed;
    out.artifacts.test_fraction = options.test_fraction;
    out.artifacts.stratified = options.stratified;
    return out;
}

}  // namespace strokelab::data
