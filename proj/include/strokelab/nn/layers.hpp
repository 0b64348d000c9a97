/*
 * layers.hpp
 *
 * Layer implementations with hand-written backward passes. Activations are
 * (batch x width) matrices; convolutional layers read each row as
 * channel-major (channels x length).
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "../core.hpp"

namespace strokelab::nn {

enum class Mode { Train, Eval };

/// Per-pass state shared by the layers: the mode and the dropout stream.
struct ForwardContext {
    Mode mode = Mode::Eval;
    Rng* rng = nullptr;
};

template <typename Scalar>
struct Param {
    std::string name;
    Matrix<Scalar> value;
    Matrix<Scalar> grad;
    bool trainable = true;

    Param() = default;
    Param(std::string n, std::size_t rows, std::size_t cols, bool train = true)
        : name(std::move(n)), value(rows, cols), grad(rows, cols), trainable(train) {}
};

template <typename Scalar>
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    virtual std::size_t input_width() const = 0;
    virtual std::size_t output_width() const = 0;

    virtual Matrix<Scalar> forward(const Matrix<Scalar>& x, ForwardContext& ctx) = 0;

    /// Eval-mode output without touching any cached state.
    virtual Matrix<Scalar> infer(const Matrix<Scalar>& x) const = 0;

    /// Gradient w.r.t. the layer input. Overwrites the parameter gradients
    /// using the activations cached by the last forward pass.
    virtual Matrix<Scalar> backward(const Matrix<Scalar>& dy) = 0;

    virtual std::vector<Param<Scalar>*> params() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;

    /// Appends the discrete branch choices (ReLU signs, pooling winners) of
    /// the last forward pass; finite differences are only valid while these
    /// do not change.
    virtual void branch_pattern(std::vector<std::uint32_t>&) const {}

    std::vector<const Param<Scalar>*> params() const {
        auto ps = const_cast<Layer*>(this)->params();
        return {ps.begin(), ps.end()};
    }

protected:
    void check_width(const Matrix<Scalar>& x) const {
        if (x.cols() != input_width()) {
            throw UsageError("forward", kind() + " expects width " + std::to_string(input_width()) + ", got " +
                                            std::to_string(x.cols()));
        }
    }
    void check_cached(bool cached) const {
        if (!cached) throw UsageError("backward", kind() + ": no cached forward pass");
    }
};

template <typename Scalar>
class Dense final : public Layer<Scalar> {
public:
    Dense(std::size_t in, std::size_t out, const std::string& prefix)
        : weight_(prefix + ".weight", out, in), bias_(prefix + ".bias", 1, out) {}

    std::string kind() const override { return "dense"; }
    std::size_t input_width() const override { return weight_.value.cols(); }
    std::size_t output_width() const override { return weight_.value.rows(); }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, ForwardContext&) override {
        input_ = x;
        return infer(x);
    }

    Matrix<Scalar> infer(const Matrix<Scalar>& x) const override {
        this->check_width(x);
        const std::size_t out = output_width(), in = input_width();
        Matrix<Scalar> y(x.rows(), out);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto xr = x.row(r);
            auto yr = y.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                const auto wo = weight_.value.row(o);
                Scalar acc = bias_.value(0, o);
                for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
                yr[o] = acc;
            }
        }
        return y;
    }

    Matrix<Scalar> backward(const Matrix<Scalar>& dy) override {
        this->check_cached(input_.rows() == dy.rows() && !input_.empty());
        const std::size_t out = output_width(), in = input_width();
        weight_.grad.fill(0);
        bias_.grad.fill(0);
        Matrix<Scalar> dx(dy.rows(), in);
        for (std::size_t r = 0; r < dy.rows(); ++r) {
            const auto xr = input_.row(r);
            const auto dyr = dy.row(r);
            auto dxr = dx.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                const Scalar g = dyr[o];
                bias_.grad(0, o) += g;
                auto gw = weight_.grad.row(o);
                const auto wo = weight_.value.row(o);
                for (std::size_t i = 0; i < in; ++i) {
                    gw[i] += g * xr[i];
                    dxr[i] += g * wo[i];
                }
            }
        }
        return dx;
    }

    std::vector<Param<Scalar>*> params() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Dense>(*this); }

private:
    Param<Scalar> weight_;
    Param<Scalar> bias_;
    Matrix<Scalar> input_;
};

/// Batch normalization over `channels`, pooling statistics across the batch
/// and the `length` positions of each channel (length 1 for dense features).
/// Running statistics use momentum 0.1 and the unbiased batch variance.
template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
public:
    static constexpr Scalar kEps = Scalar(1e-5);
    static constexpr Scalar kMomentum = Scalar(0.1);

    BatchNorm(std::size_t channels, std::size_t length, const std::string& prefix)
        : channels_(channels),
          length_(length),
          gamma_(prefix + ".gamma", 1, channels),
          beta_(prefix + ".beta", 1, channels),
          running_mean_(prefix + ".running_mean", 1, channels, false),
          running_var_(prefix + ".running_var", 1, channels, false) {
        gamma_.value.fill(1);
        running_var_.value.fill(1);
    }

    std::string kind() const override { return "batchnorm"; }
    std::size_t input_width() const override { return channels_ * length_; }
    std::size_t output_width() const override { return channels_ * length_; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, ForwardContext& ctx) override {
        this->check_width(x);
        const std::size_t batch = x.rows();
        mode_ = ctx.mode;
        inv_std_.assign(channels_, 0);
        xhat_ = Matrix<Scalar>(batch, input_width());
        Matrix<Scalar> y(batch, input_width());
        if (ctx.mode == Mode::Train) {
            if (batch < 2) throw UsageError("forward", "batch norm in train mode needs a batch of at least 2");
            const auto count = static_cast<Scalar>(batch * length_);
            for (std::size_t c = 0; c < channels_; ++c) {
                Scalar mean = 0;
                for (std::size_t r = 0; r < batch; ++r)
                    for (std::size_t t = 0; t < length_; ++t) mean += x(r, c * length_ + t);
                mean /= count;
                Scalar var = 0;
                for (std::size_t r = 0; r < batch; ++r)
                    for (std::size_t t = 0; t < length_; ++t) {
                        const Scalar d = x(r, c * length_ + t) - mean;
                        var += d * d;
                    }
                var /= count;
                inv_std_[c] = Scalar(1) / std::sqrt(var + kEps);
                running_mean_.value(0, c) = (1 - kMomentum) * running_mean_.value(0, c) + kMomentum * mean;
                running_var_.value(0, c) =
                    (1 - kMomentum) * running_var_.value(0, c) + kMomentum * var * count / (count - 1);
                normalize_channel(x, y, c, mean);
            }
        } else {
            for (std::size_t c = 0; c < channels_; ++c) {
                inv_std_[c] = Scalar(1) / std::sqrt(running_var_.value(0, c) + kEps);
                normalize_channel(x, y, c, running_mean_.value(0, c));
            }
        }
        return y;
    }

    Matrix<Scalar> infer(const Matrix<Scalar>& x) const override {
        this->check_width(x);
        Matrix<Scalar> y(x.rows(), input_width());
        for (std::size_t c = 0; c < channels_; ++c) {
            const Scalar inv = Scalar(1) / std::sqrt(running_var_.value(0, c) + kEps);
            for (std::size_t r = 0; r < x.rows(); ++r)
                for (std::size_t t = 0; t < length_; ++t) {
                    const std::size_t k = c * length_ + t;
                    y(r, k) = gamma_.value(0, c) * (x(r, k) - running_mean_.value(0, c)) * inv + beta_.value(0, c);
                }
        }
        return y;
    }

    Matrix<Scalar> backward(const Matrix<Scalar>& dy) override {
        this->check_cached(xhat_.rows() == dy.rows() && !xhat_.empty());
        const std::size_t batch = dy.rows();
        gamma_.grad.fill(0);
        beta_.grad.fill(0);
        Matrix<Scalar> dx(batch, input_width());
        const auto count = static_cast<Scalar>(batch * length_);
        for (std::size_t c = 0; c < channels_; ++c) {
            Scalar sum_dy = 0, sum_dy_xhat = 0;
            for (std::size_t r = 0; r < batch; ++r)
                for (std::size_t t = 0; t < length_; ++t) {
                    const std::size_t k = c * length_ + t;
                    sum_dy += dy(r, k);
                    sum_dy_xhat += dy(r, k) * xhat_(r, k);
                }
            gamma_.grad(0, c) = sum_dy_xhat;
            beta_.grad(0, c) = sum_dy;
            const Scalar g = gamma_.value(0, c);
            for (std::size_t r = 0; r < batch; ++r)
                for (std::size_t t = 0; t < length_; ++t) {
                    const std::size_t k = c * length_ + t;
                    if (mode_ == Mode::Train) {
                        dx(r, k) = g * inv_std_[c] / count *
                                   (count * dy(r, k) - sum_dy - xhat_(r, k) * sum_dy_xhat);
                    } else {
                        dx(r, k) = g * inv_std_[c] * dy(r, k);
                    }
                }
        }
        return dx;
    }

    std::vector<Param<Scalar>*> params() override { return {&gamma_, &beta_, &running_mean_, &running_var_}; }
    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<BatchNorm>(*this); }

private:
    void normalize_channel(const Matrix<Scalar>& x, Matrix<Scalar>& y, std::size_t c, Scalar mean) {
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t t = 0; t < length_; ++t) {
                const std::size_t k = c * length_ + t;
                xhat_(r, k) = (x(r, k) - mean) * inv_std_[c];
                y(r, k) = gamma_.value(0, c) * xhat_(r, k) + beta_.value(0, c);
            }
    }

    std::size_t channels_;
    std::size_t length_;
    Param<Scalar> gamma_, beta_, running_mean_, running_var_;
    Mode mode_ = Mode::Eval;
    Matrix<Scalar> xhat_;
    std::vector<Scalar> inv_std_;
};

template <typename Scalar>
class ReLU final : public Layer<Scalar> {
public:
    explicit ReLU(std::size_t width) : width_(width) {}

    std::string kind() const override { return "relu"; }
    std::size_t input_width() const override { return width_; }
    std::size_t output_width() const override { return width_; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, ForwardContext&) override {
        auto y = infer(x);
        mask_.resize(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) mask_[k] = x.data()[k] > 0 ? 1 : 0;
        return y;
    }

    Matrix<Scalar> infer(const Matrix<Scalar>& x) const override {
        this->check_width(x);
        Matrix<Scalar> y = x;
        for (auto& v : y.data())
            if (!(v > 0)) v = 0;
        return y;
    }

    Matrix<Scalar> backward(const Matrix<Scalar>& dy) override {
        this->check_cached(mask_.size() == dy.size() && !mask_.empty());
        Matrix<Scalar> dx = dy;
        for (std::size_t k = 0; k < dx.size(); ++k)
            if (!mask_[k]) dx.data()[k] = 0;
        return dx;
    }

    void branch_pattern(std::vector<std::uint32_t>& out) const override {
        out.insert(out.end(), mask_.begin(), mask_.end());
    }

    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<ReLU>(*this); }

private:
    std::size_t width_;
    std::vector<std::uint8_t> mask_;
};

/// Inverted dropout: survivors are scaled by 1/(1-p) in training so that
/// evaluation is the identity. A frozen layer replays its last mask.
template <typename Scalar>
class Dropout final : public Layer<Scalar> {
public:
    Dropout(std::size_t width, double rate) : width_(width), rate_(rate) {}

    std::string kind() const override { return "dropout"; }
    std::size_t input_width() const override { return width_; }
    std::size_t output_width() const override { return width_; }
    double rate() const noexcept { return rate_; }

    void freeze(bool frozen) noexcept { frozen_ = frozen; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, ForwardContext& ctx) override {
        this->check_width(x);
        if (ctx.mode == Mode::Eval || rate_ == 0.0) {
            scale_.assign(x.size(), Scalar(1));
            return x;
        }
        if (!(frozen_ && scale_.size() == x.size())) {
            if (!ctx.rng) throw UsageError("forward", "dropout in train mode needs a random stream");
            const auto keep = static_cast<Scalar>(1.0 / (1.0 - rate_));
            scale_.resize(x.size());
            for (auto& s : scale_) s = ctx.rng->bernoulli(rate_) ? Scalar(0) : keep;
        }
        Matrix<Scalar> y = x;
        for (std::size_t k = 0; k < y.size(); ++k) y.data()[k] *= scale_[k];
        return y;
    }

    Matrix<Scalar> infer(const Matrix<Scalar>& x) const override {
        this->check_width(x);
        return x;
    }

    Matrix<Scalar> backward(const Matrix<Scalar>& dy) override {
        this->check_cached(scale_.size() == dy.size() && !scale_.empty());
        Matrix<Scalar> dx = dy;
        for (std::size_t k = 0; k < dx.size(); ++k) dx.data()[k] *= scale_[k];
        return dx;
    }

    const std::vector<Scalar>& mask() const noexcept { return scale_; }
    /// Installs a mask and freezes the layer on it.
    void set_mask(std::vector<Scalar> scale) {
        scale_ = std::move(scale);
        frozen_ = true;
    }
    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Dropout>(*this); }

private:
    std::size_t width_;
    double rate_;
    bool frozen_ = false;
    std::vector<Scalar> scale_;
};

/// 1-D convolution, stride 1, symmetric zero padding.
template <typename Scalar>
class Conv1d final : public Layer<Scalar> {
public:
    Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t length, std::size_t kernel,
           std::size_t padding, const std::string& prefix)
        : in_channels_(in_channels),
          out_channels_(out_channels),
          length_(length),
          kernel_(kernel),
          padding_(padding),
          weight_(prefix + ".weight", out_channels, in_channels * kernel),
          bias_(prefix + ".bias", 1, out_channels) {}

    static std::size_t output_length(std::size_t length, std::size_t kernel, std::size_t padding) {
        const std::size_t padded = length + 2 * padding;
        return padded >= kernel ? padded - kernel + 1 : 0;
    }

    std::string kind() const override { return "conv1d"; }
    std::size_t input_width() const override { return in_channels_ * length_; }
    std::size_t output_width() const override { return out_channels_ * out_length(); }
    std::size_t out_length() const { return output_length(length_, kernel_, padding_); }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, ForwardContext&) override {
        input_ = x;
        return infer(x);
    }

    Matrix<Scalar> infer(const Matrix<Scalar>& x) const override {
        this->check_width(x);
        const std::size_t lout = out_length();
        Matrix<Scalar> y(x.rows(), output_width());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto xr = x.row(r);
            auto yr = y.row(r);
            for (std::size_t o = 0; o < out_channels_; ++o) {
                const auto wo = weight_.value.row(o);
                for (std::size_t t = 0; t < lout; ++t) {
                    Scalar acc = bias_.value(0, o);
                    for (std::size_t c = 0; c < in_channels_; ++c)
                        for (std::size_t j = 0; j < kernel_; ++j) {
                            const auto pos = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(padding_);
                            if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length_)) continue;
                            acc += wo[c * kernel_ + j] * xr[c * length_ + static_cast<std::size_t>(pos)];
                        }
                    yr[o * lout + t] = acc;
                }
            }
        }
        return y;
    }

    Matrix<Scalar> backward(const Matrix<Scalar>& dy) override {
        this->check_cached(input_.rows() == dy.rows() && !input_.empty());
        const std::size_t lout = out_length();
        weight_.grad.fill(0);
        bias_.grad.fill(0);
        Matrix<Scalar> dx(dy.rows(), input_width());
        for (std::size_t r = 0; r < dy.rows(); ++r) {
            const auto xr = input_.row(r);
            const auto dyr = dy.row(r);
            auto dxr = dx.row(r);
            for (std::size_t o = 0; o < out_channels_; ++o) {
                const auto wo = weight_.value.row(o);
                auto gw = weight_.grad.row(o);
                for (std::size_t t = 0; t < lout; ++t) {
                    const Scalar g = dyr[o * lout + t];
                    bias_.grad(0, o) += g;
                    for (std::size_t c = 0; c < in_channels_; ++c)
                        for (std::size_t j = 0; j < kernel_; ++j) {
                            const auto pos = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(padding_);
                            if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length_)) continue;
                            const std::size_t xi = c * length_ + static_cast<std::size_t>(pos);
                            gw[c * kernel_ + j] += g * xr[xi];
                            dxr[xi] += g * wo[c * kernel_ + j];
                        }
                }
            }
        }
        return dx;
    }

    std::vector<Param<Scalar>*> params() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv1d>(*this); }

private:
    std::size_t in_channels_, out_channels_, length_, kernel_, padding_;
    Param<Scalar> weight_;
    Param<Scalar> bias_;
    Matrix<Scalar> input_;
};

/// Non-overlapping max pooling per channel; a trailing partial window is
/// dropped (floor). On ties the first position wins.
template <typename Scalar>
class MaxPool1d final : public Layer<Scalar> {
public:
    MaxPool1d(std::size_t channels, std::size_t length, std::size_t window)
        : channels_(channels), length_(length), window_(window) {}

    std::string kind() const override { return "maxpool1d"; }
    std::size_t input_width() const override { return channels_ * length_; }
    std::size_t output_width() const override { return channels_ * out_length(); }
    std::size_t out_length() const { return length_ / window_; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, ForwardContext&) override {
        rows_ = x.rows();
        argmax_.assign(x.rows() * output_width(), 0);
        return pool(x, &argmax_);
    }

    Matrix<Scalar> infer(const Matrix<Scalar>& x) const override { return pool(x, nullptr); }

    Matrix<Scalar> backward(const Matrix<Scalar>& dy) override {
        this->check_cached(rows_ == dy.rows() && !argmax_.empty());
        Matrix<Scalar> dx(dy.rows(), input_width());
        for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t k = 0; k < output_width(); ++k) dx(r, argmax_[r * output_width() + k]) += dy(r, k);
        return dx;
    }

    void branch_pattern(std::vector<std::uint32_t>& out) const override {
        out.insert(out.end(), argmax_.begin(), argmax_.end());
    }

    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<MaxPool1d>(*this); }

private:
    Matrix<Scalar> pool(const Matrix<Scalar>& x, std::vector<std::uint32_t>* argmax) const {
        this->check_width(x);
        const std::size_t lout = out_length();
        Matrix<Scalar> y(x.rows(), output_width());
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < channels_; ++c)
                for (std::size_t t = 0; t < lout; ++t) {
                    std::size_t best = c * length_ + t * window_;
                    for (std::size_t j = 1; j < window_; ++j) {
                        const std::size_t k = c * length_ + t * window_ + j;
                        if (x(r, k) > x(r, best)) best = k;
                    }
                    y(r, c * lout + t) = x(r, best);
                    if (argmax) (*argmax)[r * output_width() + c * lout + t] = static_cast<std::uint32_t>(best);
                }
        return y;
    }

    std::size_t channels_, length_, window_;
    std::size_t rows_ = 0;
    std::vector<std::uint32_t> argmax_;
};

}  // namespace strokelab::nn
