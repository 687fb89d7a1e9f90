#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/nn/activation.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/nn/layers.hpp"
#include "bcglm/rng.hpp"
#include "bcglm/tensor.hpp"

namespace bcglm::nn {

/// Weight and bias of one layer. Layers without parameters hold empty tensors.
/// Conv weights are [filters][kernel_h][kernel_w][in_channels]; dense weights
/// are [units][inputs].
struct LayerParams {
    Tensor weight;
    Tensor bias;
};

enum class DropoutMode { Off, Sample };

/// Intermediates of one single-sample forward pass, reused across samples.
struct ForwardCache {
    std::vector<std::vector<double>> act; // act[0] input, act[i + 1] output of layer i
    std::vector<std::vector<double>> pre; // pre-activations of parameterized layers
    std::vector<std::vector<double>> mask;
    std::vector<std::vector<std::size_t>> argmax;
};

class Network {
public:
    Network() = default;

    explicit Network(NetworkConfig cfg) : cfg_(std::move(cfg)), layout_(infer_layout(cfg_)) {
        params_.resize(cfg_.layers.size());
        for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
            const LayerSpec& l = cfg_.layers[i];
            const ActShape& in = layout_.shapes[i];
            if (l.kind == LayerKind::Conv2D || l.kind == LayerKind::Conv1D) {
                params_[i].weight = Tensor({l.units, l.kernel_h, l.kernel_w, in.channels});
                params_[i].bias = Tensor({l.units});
            } else if (l.kind == LayerKind::Dense) {
                params_[i].weight = Tensor({l.units, in.size()});
                params_[i].bias = Tensor({l.units});
            }
        }
    }

    const NetworkConfig& config() const { return cfg_; }
    const NetworkLayout& layout() const { return layout_; }
    std::vector<LayerParams>& params() { return params_; }
    const std::vector<LayerParams>& params() const { return params_; }

    std::size_t input_size() const { return layout_.shapes.front().size(); }
    std::size_t output_dim() const { return layout_.output_dim; }
    std::size_t feature_dim() const { return layout_.feature_dim(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (!p.weight.empty()) n += p.weight.size() + p.bias.size();
        return n;
    }

    /// Glorot-uniform weights, zero biases.
    void initialize(SeededRng& rng) {
        for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
            auto& p = params_[i];
            if (p.weight.empty()) continue;
            const LayerSpec& l = cfg_.layers[i];
            double fan_in = 0.0, fan_out = 0.0;
            if (l.kind == LayerKind::Dense) {
                fan_in = static_cast<double>(p.weight.extent(1));
                fan_out = static_cast<double>(l.units);
            } else {
                const double area = static_cast<double>(l.kernel_h * l.kernel_w);
                fan_in = area * static_cast<double>(p.weight.extent(3));
                fan_out = area * static_cast<double>(l.units);
            }
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (double& w : p.weight.data()) w = limit * (2.0 * rng.uniform() - 1.0);
            for (double& b : p.bias.data()) b = 0.0;
        }
    }

    /// Single-sample forward pass. `z` may be null when the network takes no
    /// covariates. Dropout masks are drawn from `rng` in layer order.
    void forward(const double* x, const double* z, DropoutMode mode, SeededRng& rng, ForwardCache& c) const {
        const std::size_t L = cfg_.layers.size();
        c.act.resize(L + 1);
        c.pre.resize(L);
        c.mask.resize(L);
        c.argmax.resize(L);
        c.act[0].assign(x, x + input_size());
        for (std::size_t i = 0; i < L; ++i) {
            const LayerSpec& l = cfg_.layers[i];
            const ActShape& in = layout_.shapes[i];
            const ActShape& out = layout_.shapes[i + 1];
            const std::vector<double>& a = c.act[i];
            std::vector<double>& o = c.act[i + 1];
            o.resize(out.size());
            switch (l.kind) {
            case LayerKind::Conv2D:
            case LayerKind::Conv1D: {
                const ConvGeometry g = conv_geometry(i);
                conv_forward_raw(g, a.data(), params_[i].weight.data().data(), params_[i].bias.data().data(), o.data());
                c.pre[i] = o;
                activate(l.activation, o, out.channels);
                break;
            }
            case LayerKind::Dense:
                dense_forward_raw(in.size(), out.size(), a.data(), params_[i].weight.data().data(),
                                  params_[i].bias.data().data(), o.data());
                c.pre[i] = o;
                activate(l.activation, o, out.channels);
                break;
            case LayerKind::MaxPool: {
                const PoolGeometry g{in.height, in.width, in.channels, l.pool_h, l.pool_w};
                c.argmax[i].resize(out.size());
                maxpool_forward_raw(g, a.data(), o.data(), c.argmax[i].data());
                break;
            }
            case LayerKind::Flatten: o = a; break;
            case LayerKind::Dropout: {
                auto& m = c.mask[i];
                m.resize(a.size());
                if (mode == DropoutMode::Off || l.rate == 0.0) {
                    std::fill(m.begin(), m.end(), 1.0);
                    o = a;
                    break;
                }
                const double keep = 1.0 - l.rate, scale = 1.0 / keep;
                for (std::size_t k = 0; k < a.size(); ++k) {
                    m[k] = rng.uniform() < keep ? 1.0 : 0.0;
                    o[k] = a[k] * m[k] * scale;
                }
                break;
            }
            case LayerKind::Concatenate:
                std::copy(a.begin(), a.end(), o.begin());
                std::copy(z, z + cfg_.covariates, o.begin() + static_cast<std::ptrdiff_t>(a.size()));
                break;
            }
        }
    }

    /// Reverse pass for the sample held in `c`. `grad_out` is dL/d(output) or,
    /// when `grad_is_pre_activation`, dL/d(pre-activation of the last layer).
    /// Gradients are accumulated into `grads`, which must mirror params().
    void backward(const ForwardCache& c, std::vector<double> grad_out, bool grad_is_pre_activation,
                  std::vector<LayerParams>& grads) const {
        std::vector<double> g = std::move(grad_out), din;
        for (std::size_t ii = cfg_.layers.size(); ii-- > 0;) {
            const LayerSpec& l = cfg_.layers[ii];
            const ActShape& in = layout_.shapes[ii];
            const ActShape& out = layout_.shapes[ii + 1];
            const bool need_input = ii > 0;
            switch (l.kind) {
            case LayerKind::Conv2D:
            case LayerKind::Conv1D:
            case LayerKind::Dense: {
                if (!(grad_is_pre_activation && ii + 1 == cfg_.layers.size()))
                    activation_backward(l.activation, c.pre[ii], c.act[ii + 1], g, out.channels);
                din.assign(need_input ? in.size() : 0, 0.0);
                double* dinp = need_input ? din.data() : nullptr;
                if (l.kind == LayerKind::Dense)
                    dense_backward_raw(in.size(), out.size(), c.act[ii].data(), params_[ii].weight.data().data(), g.data(),
                                       grads[ii].weight.data().data(), grads[ii].bias.data().data(), dinp);
                else
                    conv_backward_raw(conv_geometry(ii), c.act[ii].data(), params_[ii].weight.data().data(), g.data(),
                                      grads[ii].weight.data().data(), grads[ii].bias.data().data(), dinp);
                g.swap(din);
                break;
            }
            case LayerKind::MaxPool:
                din.assign(in.size(), 0.0);
                for (std::size_t o = 0; o < g.size(); ++o) din[c.argmax[ii][o]] += g[o];
                g.swap(din);
                break;
            case LayerKind::Flatten: break;
            case LayerKind::Dropout: {
                const double scale = 1.0 / (1.0 - l.rate);
                for (std::size_t k = 0; k < g.size(); ++k) g[k] *= c.mask[ii][k] * scale;
                break;
            }
            case LayerKind::Concatenate: g.resize(in.size()); break;
            }
            if (!need_input) break;
        }
    }

    /// Zero-filled gradient buffers shaped like params().
    std::vector<LayerParams> zero_grads() const {
        std::vector<LayerParams> g(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (!params_[i].weight.empty()) {
                g[i].weight = Tensor(params_[i].weight.shape());
                g[i].bias = Tensor(params_[i].bias.shape());
            }
        return g;
    }

    /// The output-layer weight columns that multiply the covariates, one row per
    /// output unit. Empty unless the output layer reads the concatenated vector.
    Tensor covariate_block() const {
        if (!layout_.concat_index) return {};
        for (std::size_t i = *layout_.concat_index + 1; i + 1 < cfg_.layers.size(); ++i)
            if (cfg_.layers[i].kind != LayerKind::Dropout) return {};
        const Tensor& w = params_.back().weight;
        const std::size_t k = feature_dim(), q = cfg_.covariates;
        Tensor block({w.rows(), q});
        for (std::size_t r = 0; r < w.rows(); ++r)
            for (std::size_t j = 0; j < q; ++j) block(r, j) = w(r, k + j);
        return block;
    }

private:
    ConvGeometry conv_geometry(std::size_t i) const {
        const LayerSpec& l = cfg_.layers[i];
        const ActShape& in = layout_.shapes[i];
        return {in.height, in.width, in.channels, l.kernel_h, l.kernel_w, l.units, l.stride_h, l.stride_w};
    }

    NetworkConfig cfg_;
    NetworkLayout layout_;
    std::vector<LayerParams> params_;
};

namespace detail {

inline void check_inputs(const Network& net, const Tensor& X, const Tensor* Z, const char* where) {
    if (X.empty() || X.row_stride() != net.input_size())
        throw Error(Errc::ShapeMismatch, where,
                    "input rows have " + std::to_string(X.empty() ? 0 : X.row_stride()) + " values, network expects " +
                        std::to_string(net.input_size()));
    const std::size_t q = net.config().covariates;
    if (q > 0) {
        if (!Z || Z->empty() || Z->rows() != X.rows() || Z->row_stride() != q)
            throw Error(Errc::ShapeMismatch, where, "covariates must be " + std::to_string(X.rows()) + " x " + std::to_string(q));
    }
}

inline const double* covariate_row(const Tensor* Z, std::size_t q, std::size_t r) {
    return q > 0 ? Z->data().data() + r * q : nullptr;
}

} // namespace detail

struct Prediction {
    Tensor output;   // N x output_dim
    Tensor features; // N x feature_dim
};

/// Forward pass over every row of X (and Z). With DropoutMode::Sample one
/// mask set is drawn per row from `rng`.
inline Prediction predict(const Network& net, const Tensor& X, const Tensor& Z, DropoutMode mode, SeededRng& rng) {
    const Tensor* zp = net.config().covariates > 0 ? &Z : nullptr;
    detail::check_inputs(net, X, zp, "predict");
    const std::size_t n = X.rows(), d = net.output_dim(), k = net.feature_dim(), q = net.config().covariates;
    const std::size_t fl = net.layout().feature_layer;
    Prediction p{Tensor({n, d}), Tensor({n, k})};
    ForwardCache c;
    for (std::size_t r = 0; r < n; ++r) {
        net.forward(X.data().data() + r * net.input_size(), detail::covariate_row(zp, q, r), mode, rng, c);
        std::copy(c.act.back().begin(), c.act.back().end(), p.output.data().begin() + static_cast<std::ptrdiff_t>(r * d));
        std::copy(c.act[fl].begin(), c.act[fl].end(), p.features.data().begin() + static_cast<std::ptrdiff_t>(r * k));
    }
    return p;
}

inline constexpr double kTrainingProbabilityClamp = 1e-7;

/// Gradient of the output-layer pre-activation for the loss pairs whose
/// derivative simplifies (sigmoid with BCE, exponential with Poisson).
inline bool fused_output(const NetworkConfig& cfg) {
    const Activation a = cfg.layers.back().activation;
    return (cfg.loss == LossKind::BCE && a == Activation::Sigmoid) || (cfg.loss == LossKind::Poisson && a == Activation::Exponential);
}

/// Loss term used during training; BCE predictions are clamped away from 0 and 1.
inline double training_loss_term(LossKind kind, double y, double yhat) {
    if (kind == LossKind::BCE) yhat = std::clamp(yhat, kTrainingProbabilityClamp, 1.0 - kTrainingProbabilityClamp);
    return loss_term(kind, y, yhat);
}

struct BatchResult {
    double loss = 0.0; // mean over rows and outputs
    std::vector<LayerParams> grads;
};

/// Mean loss and its exact gradient over the selected rows. Masks come from
/// `rng`, so calling twice with equal generator state reuses the same masks.
inline BatchResult batch_gradient(const Network& net, const Tensor& X, const Tensor& Z, const Tensor& Y,
                                  std::span<const std::size_t> rows, DropoutMode mode, SeededRng& rng) {
    const NetworkConfig& cfg = net.config();
    const std::size_t d = net.output_dim(), q = cfg.covariates;
    const Tensor* zp = q > 0 ? &Z : nullptr;
    const bool fused = fused_output(cfg);
    const double scale = 1.0 / static_cast<double>(rows.size() * d);
    BatchResult res{0.0, net.zero_grads()};
    ForwardCache c;
    std::vector<double> g(d);
    for (std::size_t r : rows) {
        net.forward(X.data().data() + r * net.input_size(), detail::covariate_row(zp, q, r), mode, rng, c);
        const auto& yhat = c.act.back();
        for (std::size_t j = 0; j < d; ++j) {
            const double y = Y[r * d + j], p = yhat[j];
            res.loss += training_loss_term(cfg.loss, y, p);
            if (fused && cfg.loss == LossKind::BCE) g[j] = (p - y) * scale;
            else if (fused) g[j] = (p - y * p / (p + kPoissonLossEpsilon)) * scale;
            else {
                const double pc = cfg.loss == LossKind::BCE
                                      ? std::clamp(p, kTrainingProbabilityClamp, 1.0 - kTrainingProbabilityClamp)
                                      : p;
                g[j] = loss_term_derivative(cfg.loss, y, pc) * scale;
            }
        }
        net.backward(c, g, fused, res.grads);
    }
    res.loss *= scale;
    return res;
}

/// Mean loss with dropout disabled.
inline double evaluate_loss(const Network& net, const Tensor& X, const Tensor& Z, const Tensor& Y,
                            std::span<const std::size_t> rows) {
    const std::size_t d = net.output_dim(), q = net.config().covariates;
    const Tensor* zp = q > 0 ? &Z : nullptr;
    SeededRng unused(0);
    ForwardCache c;
    double s = 0.0;
    for (std::size_t r : rows) {
        net.forward(X.data().data() + r * net.input_size(), detail::covariate_row(zp, q, r), DropoutMode::Off, unused, c);
        for (std::size_t j = 0; j < d; ++j) s += training_loss_term(net.config().loss, Y[r * d + j], c.act.back()[j]);
    }
    return s / static_cast<double>(rows.size() * d);
}

} // namespace bcglm::nn
