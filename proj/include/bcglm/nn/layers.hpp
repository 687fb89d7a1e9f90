#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/linalg.hpp"
#include "bcglm/nn/activation.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/tensor.hpp"

namespace bcglm::nn {

// ---------------------------------------------------------------------------
// Raw kernels over flat height x width x channels buffers. Kernel weights are
// stored [out_channels][kernel_h][kernel_w][in_channels] so that for a fixed
// kernel row the kernel_w * in_channels inputs are contiguous in memory.
// ---------------------------------------------------------------------------

struct ConvGeometry {
    std::size_t in_h, in_w, in_c;
    std::size_t k_h, k_w, out_c;
    std::size_t s_h, s_w;

    std::size_t out_h() const { return (in_h - k_h) / s_h + 1; }
    std::size_t out_w() const { return (in_w - k_w) / s_w + 1; }
    std::size_t patch() const { return k_h * k_w * in_c; }
};

/// Pre-activation valid-mode convolution.
inline void conv_forward_raw(const ConvGeometry& g, const double* in, const double* w, const double* b, double* out) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), row = g.k_w * g.in_c;
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            double* o = out + (oy * ow + ox) * g.out_c;
            for (std::size_t c = 0; c < g.out_c; ++c) {
                double acc = b[c];
                const double* wc = w + c * g.patch();
                for (std::size_t i = 0; i < g.k_h; ++i) {
                    const double* x = in + ((oy * g.s_h + i) * g.in_w + ox * g.s_w) * g.in_c;
                    const double* wk = wc + i * row;
                    for (std::size_t t = 0; t < row; ++t) acc += x[t] * wk[t];
                }
                o[c] = acc;
            }
        }
}

/// Accumulates dL/dW, dL/db and (when `din` is non-null) dL/dinput given dL/dpre.
inline void conv_backward_raw(const ConvGeometry& g, const double* in, const double* w, const double* gout, double* dw,
                              double* db, double* din) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), row = g.k_w * g.in_c;
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const double* go = gout + (oy * ow + ox) * g.out_c;
            for (std::size_t c = 0; c < g.out_c; ++c) {
                const double gc = go[c];
                if (gc == 0.0) continue;
                db[c] += gc;
                const std::size_t woff = c * g.patch();
                for (std::size_t i = 0; i < g.k_h; ++i) {
                    const std::size_t xoff = ((oy * g.s_h + i) * g.in_w + ox * g.s_w) * g.in_c;
                    const double* x = in + xoff;
                    double* dwk = dw + woff + i * row;
                    for (std::size_t t = 0; t < row; ++t) dwk[t] += gc * x[t];
                    if (din) {
                        const double* wk = w + woff + i * row;
                        double* dx = din + xoff;
                        for (std::size_t t = 0; t < row; ++t) dx[t] += gc * wk[t];
                    }
                }
            }
        }
}

struct PoolGeometry {
    std::size_t in_h, in_w, c, p_h, p_w;
    std::size_t out_h() const { return in_h / p_h; }
    std::size_t out_w() const { return in_w / p_w; }
};

/// Non-overlapping max pooling; remainders are dropped. `argmax` receives the
/// flat input index chosen for every output cell (first maximum on ties).
inline void maxpool_forward_raw(const PoolGeometry& g, const double* in, double* out, std::size_t* argmax) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t c = 0; c < g.c; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t i = 0; i < g.p_h; ++i)
                    for (std::size_t j = 0; j < g.p_w; ++j) {
                        const std::size_t idx = ((oy * g.p_h + i) * g.in_w + (ox * g.p_w + j)) * g.c + c;
                        if (in[idx] > best) {
                            best = in[idx];
                            best_idx = idx;
                        }
                    }
                const std::size_t o = (oy * ow + ox) * g.c + c;
                out[o] = best;
                argmax[o] = best_idx;
            }
}

inline void dense_forward_raw(std::size_t in_dim, std::size_t out_dim, const double* x, const double* w, const double* b,
                              double* out) {
    for (std::size_t i = 0; i < out_dim; ++i) {
        double acc = b[i];
        const double* wi = w + i * in_dim;
        for (std::size_t j = 0; j < in_dim; ++j) acc += wi[j] * x[j];
        out[i] = acc;
    }
}

inline void dense_backward_raw(std::size_t in_dim, std::size_t out_dim, const double* x, const double* w,
                               const double* gout, double* dw, double* db, double* din) {
    for (std::size_t i = 0; i < out_dim; ++i) {
        const double gi = gout[i];
        if (gi == 0.0) continue;
        db[i] += gi;
        double* dwi = dw + i * in_dim;
        const double* wi = w + i * in_dim;
        for (std::size_t j = 0; j < in_dim; ++j) dwi[j] += gi * x[j];
        if (din)
            for (std::size_t j = 0; j < in_dim; ++j) din[j] += gi * wi[j];
    }
}

// ---------------------------------------------------------------------------
// Tensor-level operations.
// ---------------------------------------------------------------------------

namespace detail {

inline ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride_h,
                                  std::size_t stride_w, const char* where) {
    if (input.rank() != 3) throw Error(Errc::ShapeMismatch, where, "input must be H x W x C, got " + shape_string(input.shape()));
    if (kernels.rank() != 4)
        throw Error(Errc::ShapeMismatch, where, "kernels must be Cout x H x D x Cin, got " + shape_string(kernels.shape()));
    if (kernels.extent(3) != input.extent(2))
        throw Error(Errc::ShapeMismatch, where,
                    "kernel channels " + std::to_string(kernels.extent(3)) + " != input channels " + std::to_string(input.extent(2)));
    if (kernels.extent(1) > input.extent(0) || kernels.extent(2) > input.extent(1))
        throw Error(Errc::ShapeMismatch, where, "kernel " + shape_string(kernels.shape()) + " exceeds input " + shape_string(input.shape()));
    if (bias.size() != kernels.extent(0)) throw Error(Errc::ShapeMismatch, where, "one bias per output channel required");
    if (stride_h == 0 || stride_w == 0) throw Error(Errc::ShapeMismatch, where, "strides must be positive");
    return {input.extent(0), input.extent(1), input.extent(2), kernels.extent(1), kernels.extent(2), kernels.extent(0), stride_h,
            stride_w};
}

} // namespace detail

/// Valid-mode 2-D convolution of an H x W x Cin input with Cout kernels
/// (Cout x kh x kw x Cin), followed by `activation`.
inline Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride_h,
                             std::size_t stride_w, Activation activation) {
    const ConvGeometry g = detail::conv_geometry(input, kernels, bias, stride_h, stride_w, "conv2d_forward");
    Tensor out({g.out_h(), g.out_w(), g.out_c});
    conv_forward_raw(g, input.data().data(), kernels.data().data(), bias.data().data(), out.data().data());
    activate(activation, out.data(), g.out_c);
    return out;
}

struct AffineConv {
    Tensor patches; // (out_h * out_w) x (kh * kw * Cin)
    Tensor weights; // (kh * kw * Cin) x Cout
    Tensor output;  // out_h x out_w x Cout, pre-activation
};

/// Convolution rewritten as one matrix product: every output position becomes
/// a row holding its receptive field, every kernel a column.
inline AffineConv conv_as_affine(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride_h = 1,
                                 std::size_t stride_w = 1) {
    const ConvGeometry g = detail::conv_geometry(input, kernels, bias, stride_h, stride_w, "conv_as_affine");
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.patch();
    Tensor patches({oh * ow, k});
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            std::size_t col = 0;
            for (std::size_t i = 0; i < g.k_h; ++i)
                for (std::size_t j = 0; j < g.k_w; ++j)
                    for (std::size_t c = 0; c < g.in_c; ++c) patches(oy * ow + ox, col++) = input(oy * g.s_h + i, ox * g.s_w + j, c);
        }
    Tensor weights({k, g.out_c});
    for (std::size_t c = 0; c < g.out_c; ++c)
        for (std::size_t r = 0; r < k; ++r) weights(r, c) = kernels[c * k + r];
    Tensor prod = matmul(patches, weights);
    for (std::size_t p = 0; p < oh * ow; ++p)
        for (std::size_t c = 0; c < g.out_c; ++c) prod(p, c) += bias[c];
    Tensor output = prod.reshaped({oh, ow, g.out_c});
    return {std::move(patches), std::move(weights), std::move(output)};
}

struct PoolResult {
    Tensor output;
    std::vector<std::size_t> argmax;
};

/// Max pooling over non-overlapping windows of an H x W x C (or H x W) tensor.
inline PoolResult maxpool_forward(const Tensor& input, std::size_t window_h, std::size_t window_w) {
    if (window_h == 0 || window_w == 0) throw Error(Errc::ShapeMismatch, "maxpool_forward", "zero-extent window");
    if (input.rank() != 2 && input.rank() != 3)
        throw Error(Errc::ShapeMismatch, "maxpool_forward", "input must be H x W or H x W x C");
    const std::size_t c = input.rank() == 3 ? input.extent(2) : 1;
    const PoolGeometry g{input.extent(0), input.extent(1), c, window_h, window_w};
    if (g.out_h() == 0 || g.out_w() == 0) throw Error(Errc::ShapeMismatch, "maxpool_forward", "window larger than input");
    Shape out_shape = input.rank() == 3 ? Shape{g.out_h(), g.out_w(), c} : Shape{g.out_h(), g.out_w()};
    PoolResult r{Tensor(out_shape), std::vector<std::size_t>(shape_size(out_shape))};
    maxpool_forward_raw(g, input.data().data(), r.output.data().data(), r.argmax.data());
    return r;
}

/// activation(W x + b).
inline Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, Activation activation) {
    if (weight.rank() != 2 || weight.cols() != input.size() || bias.size() != weight.rows())
        throw Error(Errc::ShapeMismatch, "dense_forward",
                    "W " + shape_string(weight.shape()) + ", x " + shape_string(input.shape()) + ", b " + shape_string(bias.shape()));
    Tensor out({weight.rows()});
    dense_forward_raw(input.size(), weight.rows(), input.data().data(), weight.data().data(), bias.data().data(),
                      out.data().data());
    activate(activation, out.data(), out.size());
    return out;
}

/// Inverted dropout: input * mask / (1 - rate). The same formula is used in
/// training and in Monte Carlo prediction.
inline Tensor apply_dropout(const Tensor& input, const Tensor& mask, double rate) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw Error(Errc::InvalidRate, "apply_dropout", "rate " + std::to_string(rate) + " outside [0, 1)");
    if (mask.size() != input.size()) throw Error(Errc::ShapeMismatch, "apply_dropout", "mask length differs from input");
    Tensor out = input;
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i] * scale;
    return out;
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

inline constexpr double kPoissonLossEpsilon = 1e-7;

namespace detail {

inline void check_loss_inputs(LossKind kind, std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.empty())
        throw Error(Errc::ShapeMismatch, "loss_eval", "response and prediction lengths differ or are empty");
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (kind == LossKind::BCE && !(yhat[i] > 0.0 && yhat[i] < 1.0))
            throw Error(Errc::DomainError, "loss_eval", "BCE prediction outside (0,1)");
        if (kind == LossKind::Poisson && (!(yhat[i] >= 0.0) || !(y[i] >= 0.0)))
            throw Error(Errc::DomainError, "loss_eval", "Poisson loss needs nonnegative response and prediction");
    }
}

} // namespace detail

/// Per-observation loss term.
inline double loss_term(LossKind kind, double y, double yhat) {
    switch (kind) {
    case LossKind::MSE: return (y - yhat) * (y - yhat);
    case LossKind::BCE: return -(y * std::log(yhat) + (1.0 - y) * std::log(1.0 - yhat));
    case LossKind::Poisson: return yhat - y * std::log(yhat + kPoissonLossEpsilon);
    }
    return 0.0;
}

/// d loss_term / d yhat.
inline double loss_term_derivative(LossKind kind, double y, double yhat) {
    switch (kind) {
    case LossKind::MSE: return 2.0 * (yhat - y);
    case LossKind::BCE: return -y / yhat + (1.0 - y) / (1.0 - yhat);
    case LossKind::Poisson: return 1.0 - y / (yhat + kPoissonLossEpsilon);
    }
    return 0.0;
}

/// Mean loss over all entries.
inline double loss_eval(LossKind kind, std::span<const double> y, std::span<const double> yhat) {
    detail::check_loss_inputs(kind, y, yhat);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += loss_term(kind, y[i], yhat[i]);
    return s / static_cast<double>(y.size());
}

/// Gradient of loss_eval with respect to yhat.
inline std::vector<double> loss_gradient(LossKind kind, std::span<const double> y, std::span<const double> yhat) {
    detail::check_loss_inputs(kind, y, yhat);
    std::vector<double> g(y.size());
    const double inv_n = 1.0 / static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = loss_term_derivative(kind, y[i], yhat[i]) * inv_n;
    return g;
}

} // namespace bcglm::nn
