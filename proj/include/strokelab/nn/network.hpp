/*
 * network.hpp
 *
 * Network specification, construction, weighted cross-entropy, backward
 * pass and the Adam update.
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "../core.hpp"
#include "../data.hpp"
#include "layers.hpp"

namespace strokelab::nn {

using json = nlohmann::json;
using data::ClassWeights;

enum class Variant { Dense, Conv };

inline std::string to_string(Variant v) { return v == Variant::Dense ? "dense" : "conv"; }

/// Accepts the long and short model names used on the command line.
inline Variant parse_variant(std::string_view s) {
    if (s == "dense" || s == "dnn") return Variant::Dense;
    if (s == "conv" || s == "cnn") return Variant::Conv;
    throw UsageError("config", "unknown network variant '" + std::string(s) + "'");
}

/// conv -> [batch norm] -> relu -> maxpool -> dropout
struct ConvBlock {
    std::size_t channels = 16;
    std::size_t kernel = 3;
    std::size_t padding = 1;
    std::size_t pool = 2;
    friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

struct NetworkSpec {
    Variant variant = Variant::Dense;
    std::size_t input_size = 10;
    /// Conv blocks applied first (conv variant only); the input is read as
    /// one channel of length input_size.
    std::vector<ConvBlock> conv_blocks;
    /// Fully connected hidden widths, applied after any conv blocks.
    std::vector<std::size_t> dense_widths{64, 32, 16};
    double dropout_rate = 0.3;
    bool batch_norm = true;
    std::size_t output_size = 2;

    /// 10 -> 64 -> 32 -> 16 -> 2 with batch norm after each hidden layer.
    static NetworkSpec dense_default() { return {}; }

    /// Two conv blocks (16 and 32 channels, kernel 3, pool 2) and one dense
    /// hidden layer of 32, no batch norm.
    static NetworkSpec conv_default() {
        NetworkSpec s;
        s.variant = Variant::Conv;
        s.conv_blocks = {{16, 3, 1, 2}, {32, 3, 1, 2}};
        s.dense_widths = {32};
        s.batch_norm = false;
        return s;
    }

    std::size_t hidden_layers() const noexcept { return conv_blocks.size() + dense_widths.size(); }

    /// Spatial length after each conv block, starting with the input.
    std::vector<std::size_t> conv_lengths() const {
        std::vector<std::size_t> lengths{input_size};
        for (const auto& b : conv_blocks) {
            const std::size_t conv = Conv1d<double>::output_length(lengths.back(), b.kernel, b.padding);
            lengths.push_back(b.pool ? conv / b.pool : 0);
        }
        return lengths;
    }

    void validate() const {
        if (input_size == 0) throw UsageError("network", "input_size must be positive");
        if (output_size != 2) throw UsageError("network", "output_size must be 2 (two-class logits)");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("network", "dropout_rate must lie in [0, 1)");
        if (hidden_layers() == 0) throw UsageError("network", "at least one hidden layer is required");
        if (variant == Variant::Dense && !conv_blocks.empty()) {
            throw UsageError("network", "the dense variant takes no conv blocks");
        }
        if (variant == Variant::Conv && conv_blocks.empty()) {
            throw UsageError("network", "the conv variant needs at least one conv block");
        }
        for (auto w : dense_widths)
            if (w == 0) throw UsageError("network", "dense widths must be positive");
        const auto lengths = conv_lengths();
        for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
            const auto& b = conv_blocks[i];
            if (b.channels == 0 || b.kernel == 0) throw UsageError("network", "conv channels and kernel must be positive");
            if (b.pool != 2) throw UsageError("network", "conv pooling window must be 2");
            if (lengths[i + 1] < 1) {
                throw UsageError("network", "conv block " + std::to_string(i) + " reduces length below 1");
            }
        }
    }

    /// The three-hidden-layer shape used by the reproduction runs.
    void validate_reproduction() const {
        validate();
        if (hidden_layers() != 3) throw UsageError("network", "the reproduction architecture has exactly 3 hidden layers");
    }

    json to_json() const {
        json blocks = json::array();
        for (const auto& b : conv_blocks) {
            blocks.push_back({{"channels", b.channels}, {"kernel", b.kernel}, {"padding", b.padding}, {"pool", b.pool}});
        }
        return json{{"variant", to_string(variant)},   {"input_size", input_size},
                    {"conv_blocks", blocks},           {"dense_widths", dense_widths},
                    {"dropout_rate", dropout_rate},    {"batch_norm", batch_norm},
                    {"output_size", output_size}};
    }

    static NetworkSpec from_json(const json& j) {
        NetworkSpec s;
        s.variant = parse_variant(j.at("variant").get<std::string>());
        s.input_size = j.at("input_size").get<std::size_t>();
        s.conv_blocks.clear();
        for (const auto& b : j.at("conv_blocks")) {
            s.conv_blocks.push_back({b.at("channels").get<std::size_t>(), b.at("kernel").get<std::size_t>(),
                                     b.at("padding").get<std::size_t>(), b.at("pool").get<std::size_t>()});
        }
        s.dense_widths = j.at("dense_widths").get<std::vector<std::size_t>>();
        s.dropout_rate = j.at("dropout_rate").get<double>();
        s.batch_norm = j.at("batch_norm").get<bool>();
        s.output_size = j.at("output_size").get<std::size_t>();
        s.validate();
        return s;
    }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Analytic gradients, one entry per trainable parameter in layer order.
template <typename Scalar>
struct Gradients {
    std::vector<std::string> names;
    std::vector<Matrix<Scalar>> values;
};

template <typename Scalar>
class Network {
public:
    static constexpr Scalar kBeta1 = Scalar(0.9);
    static constexpr Scalar kBeta2 = Scalar(0.999);
    static constexpr Scalar kAdamEps = Scalar(1e-8);

    Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), dropout_rng_(derive_seed(seed, 2)) {
        spec_.validate();
        assemble();
        initialize(seed);
    }

    Network(const Network& other)
        : spec_(other.spec_),
          dropout_rng_(other.dropout_rng_),
          first_moment_(other.first_moment_),
          second_moment_(other.second_moment_),
          step_(other.step_),
          has_cache_(other.has_cache_) {
        for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    Network& operator=(const Network& other) {
        if (this != &other) {
            Network copy(other);
            *this = std::move(copy);
        }
        return *this;
    }
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::uint64_t adam_steps() const noexcept { return step_; }
    const std::vector<std::unique_ptr<Layer<Scalar>>>& layers() const noexcept { return layers_; }

    /// All parameters, trainable first within each layer, in layer order.
    std::vector<Param<Scalar>*> parameters(bool include_buffers = true) {
        std::vector<Param<Scalar>*> out;
        for (auto& l : layers_)
            for (auto* p : l->params())
                if (include_buffers || p->trainable) out.push_back(p);
        return out;
    }
    std::vector<const Param<Scalar>*> parameters(bool include_buffers = true) const {
        auto ps = const_cast<Network*>(this)->parameters(include_buffers);
        return {ps.begin(), ps.end()};
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* p : parameters(false)) n += p->value.size();
        return n;
    }

    Matrix<Scalar> forward(const Matrix<Scalar>& batch, Mode mode) {
        if (batch.cols() != spec_.input_size) {
            throw UsageError("forward", "batch width " + std::to_string(batch.cols()) + " != input size " +
                                            std::to_string(spec_.input_size));
        }
        if (batch.rows() == 0) throw UsageError("forward", "empty batch");
        ForwardContext ctx{mode, &dropout_rng_};
        Matrix<Scalar> x = batch;
        for (auto& l : layers_) x = l->forward(x, ctx);
        has_cache_ = mode == Mode::Train;
        return x;
    }

    /// Backpropagates `dlogits` through the cached train-mode pass.
    Gradients<Scalar> backward(const Matrix<Scalar>& dlogits) {
        if (!has_cache_) throw UsageError("backward", "no cached train-mode forward pass");
        Matrix<Scalar> g = dlogits;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        Gradients<Scalar> out;
        for (auto* p : parameters(false)) {
            out.names.push_back(p->name);
            out.values.push_back(p->grad);
        }
        return out;
    }

    /// Bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8).
    void adam_step(const Gradients<Scalar>& grads, Scalar lr) {
        auto params = parameters(false);
        if (grads.values.size() != params.size()) throw UsageError("adam_step", "gradient count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& g = grads.values[i];
            if (g.rows() != params[i]->value.rows() || g.cols() != params[i]->value.cols()) {
                throw UsageError("adam_step", "gradient shape mismatch for " + params[i]->name);
            }
            for (Scalar v : g.data())
                if (!std::isfinite(v)) throw ConvergenceError("adam_step", "non-finite gradient in " + params[i]->name);
        }
        if (first_moment_.empty()) {
            for (auto* p : params) {
                first_moment_.emplace_back(p->value.rows(), p->value.cols());
                second_moment_.emplace_back(p->value.rows(), p->value.cols());
            }
        }
        ++step_;
        const Scalar c1 = Scalar(1) - std::pow(kBeta1, static_cast<Scalar>(step_));
        const Scalar c2 = Scalar(1) - std::pow(kBeta2, static_cast<Scalar>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& w = params[i]->value.data();
            auto& m = first_moment_[i].data();
            auto& v = second_moment_[i].data();
            const auto& g = grads.values[i].data();
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[k] = kBeta1 * m[k] + (1 - kBeta1) * g[k];
                v[k] = kBeta2 * v[k] + (1 - kBeta2) * g[k] * g[k];
                const Scalar mhat = m[k] / c1;
                const Scalar vhat = v[k] / c2;
                w[k] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
            }
        }
    }

    /// Freezes (or releases) every dropout mask at its last draw.
    void freeze_dropout(bool frozen) {
        for (auto& l : layers_)
            if (auto* d = dynamic_cast<Dropout<Scalar>*>(l.get())) d->freeze(frozen);
    }

    std::vector<std::uint32_t> branch_pattern() const {
        std::vector<std::uint32_t> out;
        for (const auto& l : layers_) l->branch_pattern(out);
        return out;
    }

    /// Eval-mode logits through the cache-free path; safe to call
    /// concurrently on a network nobody is training.
    Matrix<Scalar> infer(const Matrix<Scalar>& batch) const {
        if (batch.cols() != spec_.input_size) {
            throw UsageError("forward", "batch width " + std::to_string(batch.cols()) + " != input size " +
                                            std::to_string(spec_.input_size));
        }
        Matrix<Scalar> x = batch;
        for (const auto& l : layers_) x = l->infer(x);
        return x;
    }

    /// Softmax probability of the positive class, eval mode.
    std::vector<double> predict_proba(const Matrix<Scalar>& x) const {
        const auto logits = infer(x);
        std::vector<double> out(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const double a = logits(r, 0), b = logits(r, 1);
            out[r] = sigmoid(b - a);
        }
        return out;
    }

    bool all_finite() const {
        for (const auto* p : parameters(true))
            for (Scalar v : p->value.data())
                if (!std::isfinite(v)) return false;
        return true;
    }

private:
    void assemble() {
        std::size_t width = spec_.input_size;
        std::size_t channels = 1;
        std::size_t length = spec_.input_size;
        auto name = [&](const char* kind) { return std::to_string(layers_.size()) + "." + kind; };
        for (const auto& b : spec_.conv_blocks) {
            auto conv = std::make_unique<Conv1d<Scalar>>(channels, b.channels, length, b.kernel, b.padding, name("conv1d"));
            length = conv->out_length();
            channels = b.channels;
            layers_.push_back(std::move(conv));
            if (spec_.batch_norm) layers_.push_back(std::make_unique<BatchNorm<Scalar>>(channels, length, name("batchnorm")));
            layers_.push_back(std::make_unique<ReLU<Scalar>>(channels * length));
            layers_.push_back(std::make_unique<MaxPool1d<Scalar>>(channels, length, b.pool));
            length /= b.pool;
            layers_.push_back(std::make_unique<Dropout<Scalar>>(channels * length, spec_.dropout_rate));
            width = channels * length;
        }
        for (auto w : spec_.dense_widths) {
            layers_.push_back(std::make_unique<Dense<Scalar>>(width, w, name("dense")));
            if (spec_.batch_norm) layers_.push_back(std::make_unique<BatchNorm<Scalar>>(w, 1, name("batchnorm")));
            layers_.push_back(std::make_unique<ReLU<Scalar>>(w));
            layers_.push_back(std::make_unique<Dropout<Scalar>>(w, spec_.dropout_rate));
            width = w;
        }
        layers_.push_back(std::make_unique<Dense<Scalar>>(width, spec_.output_size, name("dense")));
    }

    /// He-uniform weights (bound sqrt(6 / fan_in)), zero biases; batch norm
    /// starts at gamma 1, beta 0.
    void initialize(std::uint64_t seed) {
        Rng rng(derive_seed(seed, 1));
        for (auto& l : layers_) {
            const std::string kind = l->kind();
            if (kind != "dense" && kind != "conv1d") continue;
            auto* weight = l->params().front();
            const double bound = std::sqrt(6.0 / static_cast<double>(weight->value.cols()));
            for (auto& w : weight->value.data()) w = static_cast<Scalar>(rng.uniform(-bound, bound));
        }
    }

    NetworkSpec spec_;
    std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
    Rng dropout_rng_;
    std::vector<Matrix<Scalar>> first_moment_;
    std::vector<Matrix<Scalar>> second_moment_;
    std::uint64_t step_ = 0;
    bool has_cache_ = false;
};

template <typename Scalar = double>
Network<Scalar> build_network(const NetworkSpec& spec, std::uint64_t seed) {
    return Network<Scalar>(spec, seed);
}

/// Same network at another precision: parameters, running statistics and
/// frozen dropout masks are converted; optimizer state is not.
template <typename To, typename From>
Network<To> convert_network(const Network<From>& net) {
    Network<To> out(net.spec(), 0);
    const auto src = net.parameters(true);
    auto dst = out.parameters(true);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<To>();
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        if (const auto* d = dynamic_cast<const Dropout<From>*>(net.layers()[i].get())) {
            auto* target = static_cast<Dropout<To>*>(out.layers()[i].get());
            target->set_mask(std::vector<To>(d->mask().begin(), d->mask().end()));
        }
    }
    return out;
}

template <typename Scalar>
struct LossResult {
    Scalar loss = 0;
    Matrix<Scalar> dlogits;
    /// Sum of the sample weights in the batch (the normalizer).
    Scalar weight_sum = 0;
};

/// Weighted-mean softmax cross-entropy over two logits per row:
///   loss = sum_i w_{y_i} * (-log softmax(z_i)[y_i]) / sum_i w_{y_i}
/// and its exact gradient with respect to the logits.
template <typename Scalar>
LossResult<Scalar> weighted_cross_entropy(const Matrix<Scalar>& logits, std::span<const int> labels,
                                          const ClassWeights& weights) {
    if (logits.rows() == 0) throw UsageError("loss", "empty batch");
    if (logits.rows() != labels.size()) throw UsageError("loss", "logit and label counts differ");
    if (logits.cols() != 2) throw UsageError("loss", "expected two logits per row");
    LossResult<Scalar> out;
    out.dlogits = Matrix<Scalar>(logits.rows(), 2);
    for (std::size_t r = 0; r < logits.rows(); ++r) out.weight_sum += static_cast<Scalar>(weights.of(labels[r]));
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int y = labels[r] == 1 ? 1 : 0;
        const Scalar w = static_cast<Scalar>(weights.of(labels[r])) / out.weight_sum;
        const Scalar a = logits(r, 0), b = logits(r, 1);
        // -log softmax(z)[y] = softplus(z_other - z_y)
        out.loss += w * (y == 1 ? softplus(a - b) : softplus(b - a));
        const Scalar p1 = sigmoid(b - a);
        const Scalar p0 = sigmoid(a - b);
        out.dlogits(r, 0) = w * (p0 - (y == 0 ? 1 : 0));
        out.dlogits(r, 1) = w * (p1 - (y == 1 ? 1 : 0));
    }
    return out;
}

}  // namespace strokelab::nn
