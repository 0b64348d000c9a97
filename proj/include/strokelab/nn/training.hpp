/*
 * training.hpp
 *
 * Mini-batch training loop with per-epoch train/test evaluation.
 */
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "../data.hpp"
#include "../metrics.hpp"
#include "network.hpp"

namespace strokelab::nn {

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t epochs = 400;
    std::size_t batch_size = 32;
    /// Balanced weights from the training labels when unset.
    std::optional<ClassWeights> class_weights;
    std::uint64_t seed = 42;
    double threshold = 0.5;

    void validate() const {
        if (!(learning_rate > 0.0)) throw UsageError("config", "learning_rate must be > 0");
        if (epochs == 0) throw UsageError("config", "epochs must be > 0");
        if (batch_size == 0) throw UsageError("config", "batch_size must be > 0");
        if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("config", "threshold must lie in (0, 1)");
    }

    json to_json() const {
        json j{{"learning_rate", learning_rate}, {"epochs", epochs},   {"batch_size", batch_size},
               {"seed", seed},                   {"threshold", threshold}};
        j["class_weights"] = class_weights ? class_weights->to_json() : json(nullptr);
        return j;
    }

    static TrainConfig from_json(const json& j) { return from_json(j, TrainConfig{}); }

    static TrainConfig from_json(const json& j, TrainConfig base) {
        if (j.contains("learning_rate")) base.learning_rate = j.at("learning_rate").get<double>();
        if (j.contains("epochs")) base.epochs = j.at("epochs").get<std::size_t>();
        if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<std::size_t>();
        if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("threshold")) base.threshold = j.at("threshold").get<double>();
        if (j.contains("class_weights") && !j.at("class_weights").is_null()) {
            base.class_weights = ClassWeights::from_json(j.at("class_weights"));
        }
        return base;
    }
};

/// Per-epoch series. Precision and recall are measured on the test split.
struct TrainingHistory {
    std::vector<double> train_accuracy;
    std::vector<double> test_accuracy;
    std::vector<double> train_f1;
    std::vector<double> test_f1;
    std::vector<double> loss;
    std::vector<double> precision;
    std::vector<double> recall;
    double seconds = 0.0;

    std::size_t epochs() const noexcept { return loss.size(); }

    void write_csv(std::ostream& out) const {
        out << "epoch,train_acc,test_acc,train_f1,test_f1,loss,precision,recall\n";
        char line[512];
        for (std::size_t e = 0; e < epochs(); ++e) {
            std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e + 1,
                          train_accuracy[e], test_accuracy[e], train_f1[e], test_f1[e], loss[e], precision[e],
                          recall[e]);
            out << line;
        }
    }

    std::string to_csv() const {
        std::ostringstream out;
        write_csv(out);
        return out.str();
    }

    json to_json() const {
        return json{{"train_acc", train_accuracy}, {"test_acc", test_accuracy}, {"train_f1", train_f1},
                    {"test_f1", test_f1},           {"loss", loss},               {"precision", precision},
                    {"recall", recall}};
    }

    static TrainingHistory from_json(const json& j) {
        TrainingHistory h;
        h.train_accuracy = j.at("train_acc").get<std::vector<double>>();
        h.test_accuracy = j.at("test_acc").get<std::vector<double>>();
        h.train_f1 = j.at("train_f1").get<std::vector<double>>();
        h.test_f1 = j.at("test_f1").get<std::vector<double>>();
        h.loss = j.at("loss").get<std::vector<double>>();
        h.precision = j.at("precision").get<std::vector<double>>();
        h.recall = j.at("recall").get<std::vector<double>>();
        const auto n = h.loss.size();
        for (const auto* v : {&h.train_accuracy, &h.test_accuracy, &h.train_f1, &h.test_f1, &h.precision, &h.recall}) {
            if (v->size() != n) throw DataError("report", "training history series differ in length");
        }
        return h;
    }

    /// Equality ignores the wall-clock time.
    friend bool operator==(const TrainingHistory& a, const TrainingHistory& b) {
        return a.train_accuracy == b.train_accuracy && a.test_accuracy == b.test_accuracy &&
               a.train_f1 == b.train_f1 && a.test_f1 == b.test_f1 && a.loss == b.loss &&
               a.precision == b.precision && a.recall == b.recall;
    }
};

/// Positive-class probabilities for every row, eval mode.
template <typename Scalar>
std::vector<double> predict_dataset(const Network<Scalar>& net, const data::Dataset& ds) {
    return net.predict_proba(ds.features.template cast<Scalar>());
}

/// Shuffled batch boundaries for one epoch. With batch norm a trailing
/// single-sample batch is merged into the one before it.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, bool merge_singleton,
                                                           std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 1000 + epoch));
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (merge_singleton && batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

/// Runs `config.epochs` epochs of shuffled mini-batch Adam on the weighted
/// cross-entropy and records train/test metrics after every epoch.
template <typename Scalar>
TrainingHistory train_network(Network<Scalar>& net, const data::Dataset& train, const data::Dataset& test,
                              const TrainConfig& config) {
    config.validate();
    if (train.size() == 0 || test.size() == 0) throw DataError("train_network", "empty split");
    if (train.width() != net.spec().input_size || test.width() != net.spec().input_size) {
        throw UsageError("train_network", "dataset width does not match the network input size");
    }
    const ClassWeights cw = config.class_weights ? *config.class_weights : data::class_weights(train.labels);
    if (net.spec().batch_norm && train.size() < 2) {
        throw DataError("train_network", "batch norm needs at least two training rows");
    }

    const auto x_train = train.features.template cast<Scalar>();
    const auto x_test = test.features.template cast<Scalar>();
    const auto lr = static_cast<Scalar>(config.learning_rate);

    TrainingHistory history;
    const auto start = std::chrono::steady_clock::now();
    std::vector<int> batch_labels;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double weighted_loss = 0.0;
        double weight_total = 0.0;
        for (const auto& idx : epoch_batches(train.size(), config.batch_size, net.spec().batch_norm, config.seed, epoch)) {
            const auto xb = x_train.select_rows(idx);
            batch_labels.clear();
            for (auto i : idx) batch_labels.push_back(train.labels[i]);
            const auto logits = net.forward(xb, Mode::Train);
            const auto loss = weighted_cross_entropy(logits, batch_labels, cw);
            if (!std::isfinite(static_cast<double>(loss.loss))) {
                throw ConvergenceError("train_network", "non-finite loss in epoch " + std::to_string(epoch + 1));
            }
            net.adam_step(net.backward(loss.dlogits), lr);
            weighted_loss += static_cast<double>(loss.loss) * static_cast<double>(loss.weight_sum);
            weight_total += static_cast<double>(loss.weight_sum);
        }

        const auto train_pred = metrics::classify_all(net.predict_proba(x_train), config.threshold);
        const auto test_pred = metrics::classify_all(net.predict_proba(x_test), config.threshold);
        const auto tr = metrics::summary_metrics(metrics::confusion_matrix(train_pred, train.labels));
        const auto te = metrics::summary_metrics(metrics::confusion_matrix(test_pred, test.labels));
        history.train_accuracy.push_back(tr.accuracy);
        history.test_accuracy.push_back(te.accuracy);
        history.train_f1.push_back(tr.f1);
        history.test_f1.push_back(te.f1);
        history.loss.push_back(weighted_loss / weight_total);
        history.precision.push_back(te.precision);
        history.recall.push_back(te.recall);
    }
    history.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return history;
}

}  // namespace strokelab::nn
