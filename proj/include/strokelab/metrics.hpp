/*
 * metrics.hpp
 *
 * Binary classification metrics with the stroke class (label 1) as positive:
 * confusion matrix, summary rates, ROC/AUC and percentile bootstrap intervals.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace strokelab::metrics {

/// label = 1 iff probability >= threshold. Ties go to the positive class so
/// that borderline cases are never silently screened out.
inline int classify(double probability, double threshold) noexcept {
    return probability >= threshold ? 1 : 0;
}

inline std::vector<int> classify_all(std::span<const double> probabilities, double threshold) {
    std::vector<int> out(probabilities.size());
    std::transform(probabilities.begin(), probabilities.end(), out.begin(),
                   [threshold](double p) { return classify(p, threshold); });
    return out;
}

struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) {
        throw UsageError("metrics", "prediction and label lengths differ");
    }
    if (labels.empty()) throw UsageError("metrics", "cannot evaluate an empty prediction set");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = predictions[i] == 1;
        const bool truth = labels[i] == 1;
        if (pred && truth) ++cm.tp;
        else if (pred) ++cm.fp;
        else if (truth) ++cm.fn;
        else ++cm.tn;
    }
    return cm;
}

/// Scalar rates. A zero denominator yields 0 and sets the matching flag.
struct SummaryMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
};

inline SummaryMetrics summary_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw UsageError("metrics", "confusion matrix is empty");
    SummaryMetrics m;
    const auto ratio = [](std::size_t num, std::size_t den) {
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.accuracy = ratio(cm.tp + cm.tn, cm.total());
    if (cm.tp + cm.fp == 0) m.precision_undefined = true;
    else m.precision = ratio(cm.tp, cm.tp + cm.fp);
    if (cm.tp + cm.fn == 0) m.recall_undefined = true;
    else m.recall = ratio(cm.tp, cm.tp + cm.fn);
    // 2PR/(P+R) == 2tp/(2tp+fp+fn); the count form avoids rounding twice
    if (cm.tp + cm.fp + cm.fn == 0) m.f1_undefined = true;
    else m.f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn);
    return m;
}

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
    friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Starts at (0, 0) with threshold +inf and ends at exactly (1, 1).
struct RocCurve {
    std::vector<RocPoint> points;
    friend bool operator==(const RocCurve&, const RocCurve&) = default;
};

/// One point per distinct score, swept in descending order. Tied scores move
/// along a single diagonal segment.
inline RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw UsageError("metrics", "score and label lengths differ");
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw DataError("metrics", "ROC needs both classes present");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        while (k < order.size() && scores[order[k]] == s) {
            if (labels[order[k]] == 1) ++tp;
            else ++fp;
            ++k;
        }
        curve.points.push_back({s, static_cast<double>(fp) / static_cast<double>(negatives),
                                static_cast<double>(tp) / static_cast<double>(positives)});
    }
    return curve;
}

/// Trapezoid area under the curve.
inline double auc(const RocCurve& curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto& a = curve.points[i - 1];
        const auto& b = curve.points[i];
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    }
    return area;
}

enum class Metric { Accuracy, Precision, Recall, F1, Auc };

inline std::string_view to_string(Metric m) {
    switch (m) {
        case Metric::Accuracy: return "accuracy";
        case Metric::Precision: return "precision";
        case Metric::Recall: return "recall";
        case Metric::F1: return "f1";
        case Metric::Auc: return "auc";
    }
    return "?";
}

inline Metric parse_metric(std::string_view s) {
    for (auto m : {Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1, Metric::Auc}) {
        if (to_string(m) == s) return m;
    }
    throw UsageError("metrics", "unknown metric '" + std::string(s) + "'");
}

/// Metric value on one sample, or nullopt when it is undefined there.
inline std::optional<double> evaluate_metric(Metric metric, std::span<const double> scores,
                                             std::span<const int> labels, double threshold) {
    if (metric == Metric::Auc) {
        const auto pos = std::count(labels.begin(), labels.end(), 1);
        if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) return std::nullopt;
        return auc(roc_curve(scores, labels));
    }
    const auto preds = classify_all(scores, threshold);
    const auto m = summary_metrics(confusion_matrix(preds, labels));
    switch (metric) {
        case Metric::Accuracy: return m.accuracy;
        case Metric::Precision: return m.precision_undefined ? std::nullopt : std::optional(m.precision);
        // F1 over a resample without positive labels says nothing about
        // detection, so it is treated like recall
        case Metric::Recall:
        case Metric::F1:
            if (m.recall_undefined) return std::nullopt;
            return metric == Metric::Recall ? m.recall : m.f1;
        case Metric::Auc: break;
    }
    return std::nullopt;
}

/// Linear-interpolation quantile of an ascending sequence.
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw UsageError("metrics", "quantile of an empty sequence");
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct ConfidenceInterval {
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.95;
    std::size_t iterations = 1000;
    std::uint64_t seed = 0;
    friend bool operator==(const ConfidenceInterval&, const ConfidenceInterval&) = default;
};

struct BootstrapResult {
    ConfidenceInterval interval;
    double estimate = 0.0;
    std::size_t n_degenerate = 0;
    /// Sorted metric values of the non-degenerate resamples.
    std::vector<double> distribution;
};

/// Interval from an already sorted bootstrap distribution.
inline ConfidenceInterval percentile_interval(std::span<const double> sorted, double level) {
    const double alpha = (1.0 - level) / 2.0;
    ConfidenceInterval ci;
    ci.level = level;
    ci.lower = quantile_sorted(sorted, alpha);
    ci.upper = quantile_sorted(sorted, 1.0 - alpha);
    return ci;
}

/// Percentile bootstrap over (score, label) pairs. Resample i draws from its
/// own stream seeded by (seed, i), so the result is independent of the order
/// or thread on which resamples are evaluated.
inline BootstrapResult bootstrap_ci(std::span<const double> scores, std::span<const int> labels, Metric metric,
                                    std::size_t iterations = 1000, double level = 0.95, std::uint64_t seed = 0,
                                    double threshold = 0.5) {
    if (scores.size() != labels.size()) throw UsageError("bootstrap", "score and label lengths differ");
    if (scores.empty()) throw UsageError("bootstrap", "cannot resample an empty sample");
    if (!(level > 0.0 && level < 1.0)) throw UsageError("bootstrap", "level must lie in (0, 1)");
    if (iterations == 0) throw UsageError("bootstrap", "iterations must be positive");

    const std::size_t n = scores.size();
    BootstrapResult result;
    const auto point = evaluate_metric(metric, scores, labels, threshold);
    result.estimate = point.value_or(0.0);

    std::vector<double> s(n);
    std::vector<int> y(n);
    result.distribution.reserve(iterations);
    for (std::size_t it = 0; it < iterations; ++it) {
        Rng rng(derive_seed(seed, it));
        for (std::size_t k = 0; k < n; ++k) {
            const auto j = static_cast<std::size_t>(rng.below(n));
            s[k] = scores[j];
            y[k] = labels[j];
        }
        if (auto v = evaluate_metric(metric, s, y, threshold)) result.distribution.push_back(*v);
        else ++result.n_degenerate;
    }
    if (result.distribution.empty()) {
        throw DataError("bootstrap", "every resample was degenerate for " + std::string(to_string(metric)));
    }
    std::sort(result.distribution.begin(), result.distribution.end());
    result.interval = percentile_interval(result.distribution, level);
    result.interval.iterations = iterations;
    result.interval.seed = seed;
    return result;
}

}  // namespace strokelab::metrics
