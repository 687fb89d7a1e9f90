#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/nn/network.hpp"

namespace bcglm::nn {

/// One Adam update with bias correction. `t` is the 1-based step count.
inline void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
                      std::size_t t, const AdamHyper& h) {
    if (t == 0) throw Error(Errc::InvalidArgument, "adam_step", "step count starts at 1");
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
        throw Error(Errc::ShapeMismatch, "adam_step", "parameter, gradient and moment lengths differ");
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grads[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
        params[i] -= h.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.epsilon);
    }
}

/// Moment accumulators for every parameter tensor of a network.
struct AdamState {
    std::vector<LayerParams> m, v;
    std::size_t t = 0;

    explicit AdamState(const Network& net) : m(net.zero_grads()), v(net.zero_grads()) {}

    void step(Network& net, const std::vector<LayerParams>& grads, const AdamHyper& h) {
        ++t;
        auto& p = net.params();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i].weight.empty()) continue;
            adam_step(p[i].weight.data(), grads[i].weight.data(), m[i].weight.data(), v[i].weight.data(), t, h);
            adam_step(p[i].bias.data(), grads[i].bias.data(), m[i].bias.data(), v[i].bias.data(), t, h);
        }
    }
};

} // namespace bcglm::nn
