/*
 * gradcheck.hpp
 *
 * Central-difference verification of the analytic gradients of the full
 * weighted loss with respect to every trainable parameter.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "network.hpp"

namespace strokelab::nn {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t checked = 0;
    /// Coordinates where every tried step crossed a ReLU or pooling kink.
    std::size_t skipped = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is zero (e.g. a bias feeding batch norm) from dividing noise by
/// noise.
inline double relative_error(double analytic, double numeric, double floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

/// Default relative-error floor. Backprop at single precision leaves
/// absolute noise near 1e-7 on gradients that are exactly zero (a bias in
/// front of batch norm), so float needs a larger floor than double.
template <typename Scalar>
constexpr double default_floor() {
    return sizeof(Scalar) >= sizeof(double) ? 1e-4 : 1e-2;
}

/// Compares backprop against finite differences, in train mode with every
/// dropout mask frozen at one draw. The analytic gradients come from a copy
/// of `net` at its own precision; the numeric ones are always taken on a
/// double-precision copy, since float loss differences are too coarse to
/// resolve a 1e-4 relative error. The numeric derivative uses the
/// fourth-order stencil (8[f(h) - f(-h)] - [f(2h) - f(-2h)]) / 12h. If any
/// of the four evaluations flips a ReLU sign or a pooling winner the step is
/// shrunk (up to three times by 4x) and the coordinate is skipped if it
/// still does.
template <typename Scalar>
GradCheckResult gradient_check(const Network<Scalar>& net, const Matrix<Scalar>& batch, std::span<const int> labels,
                               const ClassWeights& weights, double epsilon = 1e-4,
                               double floor = default_floor<Scalar>()) {
    Network<Scalar> probe = net;
    probe.freeze_dropout(false);
    const auto base_logits = probe.forward(batch, Mode::Train);
    probe.freeze_dropout(true);
    const auto grads = probe.backward(weighted_cross_entropy(base_logits, labels, weights).dlogits);

    Network<double> ref = convert_network<double>(probe);
    const auto ref_batch = batch.template cast<double>();
    ref.forward(ref_batch, Mode::Train);
    const auto pattern = ref.branch_pattern();

    auto loss_at = [&](std::vector<std::uint32_t>& seen) {
        const auto logits = ref.forward(ref_batch, Mode::Train);
        seen = ref.branch_pattern();
        return weighted_cross_entropy(logits, labels, weights).loss;
    };

    GradCheckResult result;
    auto params = ref.parameters(false);
    std::vector<std::uint32_t> plus_pattern, minus_pattern;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& values = params[p]->value.data();
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double original = values[k];
            bool smooth = false;
            double numeric = 0.0;
            double step = epsilon;
            for (int attempt = 0; attempt < 4 && !smooth; ++attempt, step /= 4.0) {
                smooth = true;
                double diff[2] = {0.0, 0.0};
                for (int m = 1; m <= 2 && smooth; ++m) {
                    values[k] = original + m * step;
                    const double plus = loss_at(plus_pattern);
                    values[k] = original - m * step;
                    const double minus = loss_at(minus_pattern);
                    values[k] = original;
                    diff[m - 1] = plus - minus;
                    smooth = plus_pattern == pattern && minus_pattern == pattern;
                }
                numeric = (8.0 * diff[0] - diff[1]) / (12.0 * step);
            }
            if (!smooth) {
                ++result.skipped;
                continue;
            }
            const double analytic = static_cast<double>(grads.values[p].data()[k]);
            const double err = relative_error(analytic, numeric, floor);
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_parameter = params[p]->name + "[" + std::to_string(k) + "]";
            }
        }
    }
    return result;
}

/// Small random architecture for gradient checks: 1-3 narrow dense layers,
/// or 1-2 conv blocks plus one dense layer; batch norm on a coin flip.
inline NetworkSpec random_small_spec(Rng& rng, Variant variant) {
    NetworkSpec spec;
    spec.variant = variant;
    spec.dropout_rate = 0.25;
    spec.batch_norm = rng.bernoulli(0.5);
    spec.dense_widths.clear();
    if (variant == Variant::Dense) {
        spec.input_size = 3 + rng.below(6);
        const std::size_t depth = 1 + rng.below(3);
        for (std::size_t i = 0; i < depth; ++i) spec.dense_widths.push_back(2 + rng.below(6));
    } else {
        spec.input_size = 6 + rng.below(5);
        const std::size_t blocks = 1 + rng.below(2);
        for (std::size_t i = 0; i < blocks; ++i) spec.conv_blocks.push_back({2 + rng.below(3), 3, 1, 2});
        spec.dense_widths.push_back(2 + rng.below(4));
    }
    return spec;
}

/// Full check of one random network, batch, label vector and class weights,
/// all derived from `seed`.
template <typename Scalar>
GradCheckResult check_random_network(std::uint64_t seed, Variant variant, double epsilon = 1e-4) {
    Rng rng(derive_seed(seed, 77));
    const auto spec = random_small_spec(rng, variant);
    const auto net = build_network<Scalar>(spec, seed);
    const std::size_t batch = 6;
    Matrix<Scalar> x(batch, spec.input_size);
    for (auto& v : x.data()) v = static_cast<Scalar>(rng.normal());
    std::vector<int> labels(batch);
    for (auto& y : labels) y = static_cast<int>(rng.below(2));
    labels[0] = 1;
    labels[1] = 0;
    const ClassWeights cw{rng.uniform(0.5, 1.5), rng.uniform(1.0, 6.0)};
    return gradient_check(net, x, labels, cw, epsilon);
}

}  // namespace strokelab::nn
