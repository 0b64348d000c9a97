/*
 * synthetic.hpp
 *
 * Seeded generator for tables with the stroke CSV schema. The marginals
 * loosely follow the public stroke table (about 5% positives, risk driven
 * mostly by age); it exists for tests, demos and smoke runs, not as a
 * substitute for real data.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "core.hpp"
#include "data.hpp"

namespace strokelab::synthetic {

struct CohortOptions {
    std::size_t rows = 5110;
    std::uint64_t seed = 7;
    double missing_bmi_rate = 0.04;
    /// Added to the logit of every row; shifts the positive rate.
    double logit_shift = 0.0;
};

namespace detail {
template <std::size_t N>
const char* pick(Rng& rng, const char* const (&names)[N], const double (&probs)[N]) {
    double u = rng.uniform();
    for (std::size_t i = 0; i + 1 < N; ++i) {
        if (u < probs[i]) return names[i];
        u -= probs[i];
    }
    return names[N - 1];
}
}  // namespace detail

inline data::RawTable make_cohort(const CohortOptions& options = {}) {
    Rng rng(derive_seed(options.seed, 0xC0407));
    data::RawTable table;
    table.source = "synthetic(seed=" + std::to_string(options.seed) + ")";
    table.rows.reserve(options.rows);
    for (std::size_t i = 0; i < options.rows; ++i) {
        data::PatientRecord r;
        r.id = static_cast<std::int64_t>(10000 + i);
        r.age = std::round(rng.uniform(0.08, 82.0) * 100.0) / 100.0;
        if (r.age > 2.0) r.age = std::round(r.age);
        r.gender = rng.bernoulli(0.586) ? "Female" : "Male";
        if (i == 3116 % std::max<std::size_t>(options.rows, 1) && options.rows >= 1000) r.gender = "Other";

        const double age_risk = (r.age - 45.0) / 20.0;
        r.hypertension = rng.bernoulli(sigmoid(-2.6 + 1.1 * age_risk)) ? 1 : 0;
        r.heart_disease = rng.bernoulli(sigmoid(-3.4 + 1.2 * age_risk)) ? 1 : 0;
        r.ever_married = r.age < 18.0 ? "No" : (rng.bernoulli(0.82) ? "Yes" : "No");
        if (r.age < 16.0) {
            r.work_type = rng.bernoulli(0.9) ? "children" : "Never_worked";
        } else {
            static const char* const kinds[] = {"Private", "Self-employed", "Govt_job", "Never_worked"};
            static const double probs[] = {0.66, 0.19, 0.145, 0.005};
            r.work_type = detail::pick(rng, kinds, probs);
        }
        r.residence_type = rng.bernoulli(0.508) ? "Urban" : "Rural";
        r.avg_glucose_level = std::clamp(55.0 + std::exp(3.6 + 0.6 * rng.normal()) + 0.2 * r.age, 55.12, 271.74);
        r.avg_glucose_level = std::round(r.avg_glucose_level * 100.0) / 100.0;
        const double bmi = std::clamp(19.0 + 0.2 * std::min(r.age, 50.0) + 7.0 * rng.normal(), 10.3, 97.6);
        if (!rng.bernoulli(options.missing_bmi_rate)) r.bmi = std::round(bmi * 10.0) / 10.0;
        if (r.age < 13.0) {
            r.smoking_status = "Unknown";
        } else {
            static const char* const kinds[] = {"never smoked", "Unknown", "formerly smoked", "smokes"};
            static const double probs[] = {0.42, 0.22, 0.19, 0.17};
            r.smoking_status = detail::pick(rng, kinds, probs);
        }

        const double logit = -7.6 + 0.072 * r.age + 0.45 * r.hypertension + 0.4 * r.heart_disease +
                             0.004 * (r.avg_glucose_level - 100.0) + 0.01 * (bmi - 28.0) +
                             (r.smoking_status == "smokes" ? 0.25 : 0.0) + options.logit_shift;
        r.stroke = rng.bernoulli(sigmoid(logit)) ? 1 : 0;
        table.rows.push_back(std::move(r));
    }
    return table;
}

/// Linearly separable two-class toy set: the label is the sign of a fixed
/// direction with a margin, features are standard-normal-ish.
inline data::Dataset separable_toy(std::size_t rows = 200, std::size_t width = 10, std::uint64_t seed = 3) {
    Rng rng(derive_seed(seed, 0x70));
    data::Dataset ds;
    ds.features = Matrix<double>(rows, width);
    for (std::size_t c = 0; c < width; ++c) ds.columns.push_back("x" + std::to_string(c));
    for (std::size_t r = 0; r < rows; ++r) {
        const int y = r % 2 == 0 ? 1 : 0;
        double proj = 0.0;
        for (std::size_t c = 0; c < width; ++c) {
            ds.features(r, c) = rng.normal();
            proj += ds.features(r, c) * (c % 2 == 0 ? 1.0 : -0.5);
        }
        // push the sample to the correct side with a margin of 1
        const double shift = (y == 1 ? 1.0 : -1.0) * (1.0 + std::abs(proj)) - proj;
        ds.features(r, 0) += shift;
        ds.labels.push_back(y);
        ds.row_ids.push_back(static_cast<std::int64_t>(r));
    }
    ds.provenance = {"separable-toy", "all", seed};
    return ds;
}

}  // namespace strokelab::synthetic
