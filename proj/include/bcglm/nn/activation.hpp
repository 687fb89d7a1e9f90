#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "bcglm/error.hpp"

namespace bcglm::nn {

enum class Activation { ReLU, TanH, Softmax, Softplus, Sigmoid, Linear, Exponential };

inline std::string_view activation_name(Activation a) {
    switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::TanH: return "tanh";
    case Activation::Softmax: return "softmax";
    case Activation::Softplus: return "softplus";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Linear: return "linear";
    case Activation::Exponential: return "exponential";
    }
    return "?";
}

inline Activation parse_activation(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (Activation a : {Activation::ReLU, Activation::TanH, Activation::Softmax, Activation::Softplus,
                         Activation::Sigmoid, Activation::Linear, Activation::Exponential})
        if (lower == activation_name(a)) return a;
    throw Error(Errc::ConfigError, "parse_activation", "unknown activation '" + std::string(name) + "'");
}

inline bool is_smooth(Activation a) { return a != Activation::ReLU; }

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

/// Applies `a` in place. Values are laid out as consecutive groups of
/// `channels` entries (one group per spatial position); softmax normalizes
/// within each group and every other activation is elementwise.
inline void activate(Activation a, std::span<double> values, std::size_t channels) {
    switch (a) {
    case Activation::Linear: return;
    case Activation::ReLU:
        for (double& v : values) v = v > 0.0 ? v : 0.0;
        return;
    case Activation::TanH:
        for (double& v : values) v = std::tanh(v);
        return;
    case Activation::Softplus:
        for (double& v : values) v = softplus(v);
        return;
    case Activation::Sigmoid:
        for (double& v : values) v = sigmoid(v);
        return;
    case Activation::Exponential:
        for (double& v : values) v = std::exp(v);
        return;
    case Activation::Softmax:
        for (std::size_t start = 0; start < values.size(); start += channels) {
            auto group = values.subspan(start, channels);
            const double mx = *std::max_element(group.begin(), group.end());
            double sum = 0.0;
            for (double& v : group) sum += (v = std::exp(v - mx));
            for (double& v : group) v /= sum;
        }
        return;
    }
}

/// Converts dL/da into dL/dz in place, given pre-activations z and outputs a.
inline void activation_backward(Activation a, std::span<const double> z, std::span<const double> out,
                                std::span<double> grad, std::size_t channels) {
    switch (a) {
    case Activation::Linear: return;
    case Activation::ReLU:
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = z[i] > 0.0 ? grad[i] : 0.0;
        return;
    case Activation::TanH:
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - out[i] * out[i];
        return;
    case Activation::Softplus:
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= sigmoid(z[i]);
        return;
    case Activation::Sigmoid:
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= out[i] * (1.0 - out[i]);
        return;
    case Activation::Exponential:
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= out[i];
        return;
    case Activation::Softmax:
        for (std::size_t start = 0; start < grad.size(); start += channels) {
            double s = 0.0;
            for (std::size_t k = 0; k < channels; ++k) s += out[start + k] * grad[start + k];
            for (std::size_t k = 0; k < channels; ++k) grad[start + k] = out[start + k] * (grad[start + k] - s);
        }
        return;
    }
}

} // namespace bcglm::nn
