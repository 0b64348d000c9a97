/*
 * logistic.hpp
 *
 * Class-weighted, L2-regularized logistic regression fitted by full-batch
 * gradient descent with step halving.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "data.hpp"
#include "metrics.hpp"

namespace strokelab::logistic {

using json = nlohmann::json;
using data::ClassWeights;
using metrics::classify;

struct LogRegConfig {
    double l2_strength = 1.0;
    std::size_t max_iterations = 10000;
    double learning_rate = 0.1;
    double gradient_tolerance = 1e-6;
    /// Balanced weights from the training labels when unset.
    std::optional<ClassWeights> class_weights;

    void validate() const {
        if (!(l2_strength >= 0.0) || !std::isfinite(l2_strength)) throw UsageError("logistic", "l2_strength must be >= 0");
        if (max_iterations < 1) throw UsageError("logistic", "max_iterations must be >= 1");
        if (!(learning_rate > 0.0)) throw UsageError("logistic", "learning_rate must be > 0");
        if (!(gradient_tolerance > 0.0)) throw UsageError("logistic", "gradient_tolerance must be > 0");
        if (class_weights && !(class_weights->negative > 0.0 && class_weights->positive > 0.0)) {
            throw UsageError("logistic", "class weights must be positive");
        }
    }
};

/// The weighted objective
///   J(w, b) = -(1/n) sum_i c_i [y_i log p_i + (1 - y_i) log(1 - p_i)] + lambda/(2n) |w|^2
/// with p_i = sigmoid(w.x_i + b). The bias is not penalized.
class WeightedLogLoss {
public:
    WeightedLogLoss(const Matrix<double>& x, std::span<const int> labels, ClassWeights weights, double lambda)
        : x_(x), labels_(labels), weights_(weights), lambda_(lambda) {
        if (x.rows() != labels.size()) throw UsageError("logistic", "feature and label counts differ");
    }

    std::size_t dimension() const noexcept { return x_.cols(); }

    /// Objective value; fills the gradient when the spans are non-empty.
    double evaluate(std::span<const double> w, double b, std::span<double> grad_w = {},
                    double* grad_b = nullptr) const {
        const std::size_t n = x_.rows();
        const std::size_t d = x_.cols();
        const bool want_grad = !grad_w.empty();
        if (want_grad) std::fill(grad_w.begin(), grad_w.end(), 0.0);
        double gb = 0.0;
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto xi = x_.row(i);
            double z = b;
            for (std::size_t j = 0; j < d; ++j) z += w[j] * xi[j];
            const double c = weights_.of(labels_[i]);
            const double y = labels_[i] == 1 ? 1.0 : 0.0;
            // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
            loss += c * (softplus(z) - y * z);
            if (want_grad) {
                const double r = c * (sigmoid(z) - y);
                for (std::size_t j = 0; j < d; ++j) grad_w[j] += r * xi[j];
                gb += r;
            }
        }
        const double dn = static_cast<double>(n);
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += w[j] * w[j];
        if (want_grad) {
            for (std::size_t j = 0; j < d; ++j) grad_w[j] = grad_w[j] / dn + lambda_ / dn * w[j];
            if (grad_b) *grad_b = gb / dn;
        }
        return loss / dn + lambda_ / (2.0 * dn) * sq;
    }

private:
    const Matrix<double>& x_;
    std::span<const int> labels_;
    ClassWeights weights_;
    double lambda_;
};

struct LogisticModel {
    std::vector<double> weights;
    double bias = 0.0;
    double threshold = 0.5;
    double l2_strength = 1.0;
    std::size_t iterations = 0;
    ClassWeights class_weights;
    data::PreprocessArtifacts preprocessing;

    /// sigmoid(w.x + b) for an already encoded and standardized vector.
    double predict_proba(std::span<const double> features) const {
        if (features.size() != weights.size()) {
            throw UsageError("predict", "expected " + std::to_string(weights.size()) + " features, got " +
                                            std::to_string(features.size()));
        }
        double z = bias;
        for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * features[j];
        return sigmoid(z);
    }

    std::vector<double> predict_proba(const Matrix<double>& x) const {
        std::vector<double> out(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict_proba(x.row(i));
        return out;
    }

    int predict(std::span<const double> features) const { return classify(predict_proba(features), threshold); }

    json to_json() const {
        return json{{"schema_version", 1},
                    {"model", "logistic"},
                    {"weights", weights},
                    {"bias", bias},
                    {"threshold", threshold},
                    {"l2_strength", l2_strength},
                    {"iterations", iterations},
                    {"class_weights", class_weights.to_json()},
                    {"preprocessing_fingerprint", preprocessing.fingerprint()},
                    {"preprocessing", preprocessing.to_json()}};
    }

    static LogisticModel from_json(const json& j) {
        if (j.at("model").get<std::string>() != "logistic") throw DataError("model", "not a logistic model file");
        if (j.at("schema_version").get<int>() != 1) throw DataError("model", "unsupported logistic schema version");
        LogisticModel m;
        m.weights = j.at("weights").get<std::vector<double>>();
        m.bias = j.at("bias").get<double>();
        m.threshold = j.at("threshold").get<double>();
        m.l2_strength = j.at("l2_strength").get<double>();
        m.iterations = j.at("iterations").get<std::size_t>();
        m.class_weights = ClassWeights::from_json(j.at("class_weights"));
        m.preprocessing = data::PreprocessArtifacts::from_json(j.at("preprocessing"));
        if (m.preprocessing.fingerprint() != j.at("preprocessing_fingerprint").get<std::string>()) {
            throw DataError("model", "preprocessing fingerprint does not match its artifacts");
        }
        if (m.weights.size() != m.preprocessing.columns.size()) throw DataError("model", "weight count mismatch");
        if (!(m.threshold > 0.0 && m.threshold < 1.0)) throw DataError("model", "threshold outside (0, 1)");
        return m;
    }

    friend bool operator==(const LogisticModel&, const LogisticModel&) = default;
};

struct FitResult {
    LogisticModel model;
    std::size_t iterations = 0;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    bool converged = false;
    /// Objective after every accepted step, starting with the initial value.
    std::vector<double> objective_trace;
};

inline double inf_norm(std::span<const double> v, double extra = 0.0) {
    double m = std::abs(extra);
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

/// Gradient descent from w = 0, b = 0. A step that raises the objective is
/// rejected and the learning rate halved; a non-finite objective aborts.
inline FitResult train_logreg(const data::Dataset& train, const LogRegConfig& config) {
    config.validate();
    if (train.size() == 0) throw DataError("train_logreg", "training set is empty");
    const ClassWeights cw = config.class_weights ? *config.class_weights : data::class_weights(train.labels);
    const WeightedLogLoss objective(train.features, train.labels, cw, config.l2_strength);
    const std::size_t d = objective.dimension();

    std::vector<double> w(d, 0.0), gw(d, 0.0), cand(d, 0.0), cand_g(d, 0.0);
    double b = 0.0, gb = 0.0, cand_gb = 0.0;
    double value = objective.evaluate(w, b, gw, &gb);
    if (!std::isfinite(value)) throw ConvergenceError("train_logreg", "non-finite objective at iteration 0");

    FitResult fit;
    fit.initial_objective = value;
    fit.objective_trace.push_back(value);
    double lr = config.learning_rate;
    std::size_t it = 0;
    while (it < config.max_iterations) {
        if (inf_norm(gw, gb) < config.gradient_tolerance) {
            fit.converged = true;
            break;
        }
        ++it;
        for (std::size_t j = 0; j < d; ++j) cand[j] = w[j] - lr * gw[j];
        const double cand_b = b - lr * gb;
        const double cand_value = objective.evaluate(cand, cand_b, cand_g, &cand_gb);
        if (!std::isfinite(cand_value)) {
            throw ConvergenceError("train_logreg", "non-finite objective at iteration " + std::to_string(it));
        }
        if (cand_value > value) {
            lr *= 0.5;
            // the step no longer changes anything representable
            if (lr < 1e-30) break;
            continue;
        }
        w.swap(cand);
        gw.swap(cand_g);
        b = cand_b;
        gb = cand_gb;
        value = cand_value;
        fit.objective_trace.push_back(value);
    }
    if (!fit.converged && inf_norm(gw, gb) < config.gradient_tolerance) fit.converged = true;

    fit.iterations = it;
    fit.final_objective = value;
    fit.model.weights = std::move(w);
    fit.model.bias = b;
    fit.model.l2_strength = config.l2_strength;
    fit.model.iterations = it;
    fit.model.class_weights = cw;
    return fit;
}

struct FeatureWeight {
    std::string name;
    double magnitude = 0.0;
    double coefficient = 0.0;
    friend bool operator==(const FeatureWeight&, const FeatureWeight&) = default;
};

/// Features ranked by |coefficient|, descending; ties keep column order.
inline std::vector<FeatureWeight> feature_importance(const LogisticModel& model,
                                                     std::span<const std::string> names) {
    if (names.size() != model.weights.size()) {
        throw UsageError("feature_importance", "name count differs from weight count");
    }
    std::vector<FeatureWeight> ranked;
    ranked.reserve(names.size());
    for (std::size_t j = 0; j < names.size(); ++j) ranked.push_back({names[j], std::abs(model.weights[j]), model.weights[j]});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.magnitude > b.magnitude; });
    return ranked;
}

}  // namespace strokelab::logistic
