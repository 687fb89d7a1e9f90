#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/nn/network.hpp"
#include "bcglm/nn/train.hpp"
#include "bcglm/parallel.hpp"
#include "bcglm/rng.hpp"
#include "bcglm/tensor.hpp"
#include "bcglm/tensor_io.hpp"

namespace bcglm {

/// M stochastic forward passes: last-hidden-layer features (N x k) and
/// network outputs (N x d) for every draw.
struct FeatureDraws {
    std::vector<Tensor> features;
    std::vector<Tensor> outputs;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    std::size_t count() const { return features.size(); }
    std::size_t rows() const { return features.front().rows(); }
    std::size_t feature_dim() const { return features.front().cols(); }
};

/// Draw m uses substream ("mc", m) of `rng`, so the result does not depend on
/// the number of workers.
inline FeatureDraws mc_features(const nn::Network& net, const Tensor& X, const Tensor& Z, std::size_t M, const SeededRng& rng,
                                std::size_t workers = 1) {
    if (M == 0) throw Error(Errc::InvalidArgument, "mc_features", "at least one draw is required");
    nn::detail::check_inputs(net, X, net.config().covariates > 0 ? &Z : nullptr, "mc_features");
    FeatureDraws d;
    d.features.resize(M);
    d.outputs.resize(M);
    d.seed = rng.seed();
    d.stream = rng.stream();
    parallel_for(M, workers, [&](std::size_t m) {
        SeededRng masks = rng.substream("mc", m);
        nn::Prediction p = nn::predict(net, X, Z, nn::DropoutMode::Sample, masks);
        if (!p.features.all_finite() || !p.output.all_finite())
            throw Error(Errc::DomainError, "mc_features", "non-finite features in draw " + std::to_string(m));
        d.features[m] = std::move(p.features);
        d.outputs[m] = std::move(p.output);
    });
    return d;
}

inline FeatureDraws mc_features(const nn::TrainedNetwork& net, const Tensor& X, const Tensor& Z, std::size_t M,
                                const SeededRng& rng, std::size_t workers = 1) {
    return mc_features(net.network, X, Z, M, rng, workers);
}

inline void save_feature_draws(const FeatureDraws& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t m = 0; m < d.count(); ++m) {
        write_tensor(dir / ("features_" + std::to_string(m) + ".bct"), d.features[m]);
        write_tensor(dir / ("outputs_" + std::to_string(m) + ".bct"), d.outputs[m]);
    }
    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    out << "format bcglm-features-1\nseed " << d.seed << "\nstream " << d.stream << "\ndraws " << d.count() << "\nrows "
        << d.rows() << "\nfeature_dim " << d.feature_dim() << "\n";
    if (!out) throw Error(Errc::IoError, "save_feature_draws", "cannot write manifest in " + dir.string());
}

inline FeatureDraws load_feature_draws(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw Error(Errc::IoError, "load_feature_draws", "no manifest in " + dir.string());
    FeatureDraws d;
    std::string key, format;
    std::size_t M = 0;
    while (in >> key) {
        if (key == "format") in >> format;
        else if (key == "seed") in >> d.seed;
        else if (key == "stream") in >> d.stream;
        else if (key == "draws") in >> M;
        else {
            std::string ignored;
            in >> ignored;
        }
    }
    if (format != "bcglm-features-1" || M == 0)
        throw Error(Errc::IoError, "load_feature_draws", "bad manifest in " + dir.string());
    for (std::size_t m = 0; m < M; ++m) {
        d.features.push_back(read_tensor(dir / ("features_" + std::to_string(m) + ".bct")));
        d.outputs.push_back(read_tensor(dir / ("outputs_" + std::to_string(m) + ".bct")));
        if (d.features.back().shape() != d.features.front().shape())
            throw Error(Errc::ShapeMismatch, "load_feature_draws", "draw " + std::to_string(m) + " has a different shape");
    }
    return d;
}

// ---------------------------------------------------------------------------
// Dropout training as approximate variational inference (Gaussian response).
// ---------------------------------------------------------------------------

/// Weight decay that makes the L2-regularized dropout loss match the scaled
/// negative evidence lower bound: p / (2 tau N).
inline double effective_weight_decay(double inclusion, double tau, double n) {
    if (!(inclusion > 0.0) || !(tau > 0.0) || !(n > 0.0))
        throw Error(Errc::InvalidArgument, "effective_weight_decay", "arguments must be positive");
    return inclusion / (2.0 * tau * n);
}

struct VariationalLayer {
    double inclusion = 1.0; // probability that a weight is kept
    Tensor weight_mean;
    Tensor bias_mean;
};

/// Mixture-of-normals variational family; one entry per parameterized layer.
struct VariationalPrior {
    std::vector<VariationalLayer> layers;
    double sigma = 1e-2;
    double tau = 1.0;
    std::size_t n = 1;

    void validate() const {
        if (!(sigma > 0.0) || !(tau > 0.0) || n == 0)
            throw Error(Errc::InvalidArgument, "VariationalPrior", "sigma, tau and n must be positive");
        for (const auto& l : layers)
            if (!(l.inclusion > 0.0 && l.inclusion <= 1.0))
                throw Error(Errc::InvalidArgument, "VariationalPrior", "inclusion probability outside (0, 1]");
    }
};

/// Approximate KL between the mixture posterior of one layer and a standard
/// normal prior, with the additive constant dropped: weights and biases each
/// contribute (p/2)(mu^2 + sigma^2 - (1 + log 2 pi) - log sigma^2).
inline double kl_approx(const VariationalPrior& vp, std::size_t layer) {
    vp.validate();
    const VariationalLayer& l = vp.layers.at(layer);
    const double s2 = vp.sigma * vp.sigma;
    const double per_entry = s2 - (1.0 + std::log(2.0 * std::numbers::pi)) - std::log(s2);
    double sum = 0.0;
    for (const Tensor* t : {&l.weight_mean, &l.bias_mean})
        for (double mu : t->data()) sum += mu * mu + per_entry;
    return 0.5 * l.inclusion * sum;
}

/// Variational family centred on a network's current parameters. The keep
/// probability of a layer is 1 - rate of the dropout layer feeding it.
inline VariationalPrior variational_prior(const nn::Network& net, double sigma, double tau, std::size_t n) {
    VariationalPrior vp;
    vp.sigma = sigma;
    vp.tau = tau;
    vp.n = n;
    const auto& layers = net.config().layers;
    double keep = 1.0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == nn::LayerKind::Dropout) keep = 1.0 - layers[i].rate;
        if (!layers[i].has_parameters()) continue;
        vp.layers.push_back({keep, net.params()[i].weight, net.params()[i].bias});
        keep = 1.0;
    }
    vp.validate();
    return vp;
}

struct LossIdentity {
    double dropout_loss = 0.0;
    double scaled_neg_elbo = 0.0;
    double difference = 0.0;
};

/// Evaluates, on identical parameters (the variational means) and identical
/// dropout masks, the L2-regularized dropout loss
///   (1/2N) sum ||y - yhat||^2 + sum_l lambda_l (||W_l||^2 + ||b_l||^2)
/// and the negative Monte Carlo evidence lower bound scaled by 1/(tau N).
/// `decay` holds one lambda per variational layer. Masks come from
/// ("identity", m) substreams of `rng` for m < draws.
inline LossIdentity elbo_vs_dropout_loss(const VariationalPrior& vp, const nn::NetworkConfig& cfg, const Tensor& X,
                                         const Tensor& Z, const Tensor& Y, std::span<const double> decay, std::size_t draws,
                                         const SeededRng& rng) {
    vp.validate();
    if (cfg.loss != nn::LossKind::MSE)
        throw Error(Errc::InvalidArgument, "elbo_vs_dropout_loss", "the identity is stated for a Gaussian response");
    nn::Network net(cfg);
    std::size_t v = 0;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        if (!cfg.layers[i].has_parameters()) continue;
        if (v >= vp.layers.size()) throw Error(Errc::ShapeMismatch, "elbo_vs_dropout_loss", "too few variational layers");
        if (vp.layers[v].weight_mean.shape() != net.params()[i].weight.shape() ||
            vp.layers[v].bias_mean.shape() != net.params()[i].bias.shape())
            throw Error(Errc::ShapeMismatch, "elbo_vs_dropout_loss", "variational means do not match layer " + std::to_string(i));
        net.params()[i] = {vp.layers[v].weight_mean, vp.layers[v].bias_mean};
        ++v;
    }
    if (v != vp.layers.size() || decay.size() != vp.layers.size())
        throw Error(Errc::ShapeMismatch, "elbo_vs_dropout_loss", "one variational layer and one decay per parameterized layer");
    if (Y.rows() != X.rows() || vp.n != X.rows())
        throw Error(Errc::ShapeMismatch, "elbo_vs_dropout_loss", "vp.n must equal the number of rows");
    if (draws == 0) throw Error(Errc::InvalidArgument, "elbo_vs_dropout_loss", "at least one draw is required");

    const double n = static_cast<double>(X.rows());
    const double d = static_cast<double>(net.output_dim());
    double sse = 0.0;
    for (std::size_t m = 0; m < draws; ++m) {
        SeededRng masks = rng.substream("identity", m);
        const nn::Prediction p = nn::predict(net, X, Z, nn::DropoutMode::Sample, masks);
        for (std::size_t i = 0; i < Y.size(); ++i) sse += (Y[i] - p.output[i]) * (Y[i] - p.output[i]);
    }
    sse /= static_cast<double>(draws);

    LossIdentity r;
    double kl = 0.0;
    r.dropout_loss = sse / (2.0 * n);
    for (std::size_t l = 0; l < vp.layers.size(); ++l) {
        double sq = 0.0;
        for (const Tensor* t : {&vp.layers[l].weight_mean, &vp.layers[l].bias_mean})
            for (double mu : t->data()) sq += mu * mu;
        r.dropout_loss += decay[l] * sq;
        kl += kl_approx(vp, l);
    }
    // Gaussian log likelihood with precision tau, averaged over draws.
    const double loglik = -0.5 * vp.tau * sse + 0.5 * n * d * std::log(vp.tau / (2.0 * std::numbers::pi));
    r.scaled_neg_elbo = -(loglik - kl) / (vp.tau * n);
    r.difference = r.dropout_loss - r.scaled_neg_elbo;
    return r;
}

} // namespace bcglm
