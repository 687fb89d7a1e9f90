#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/nn/adam.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/nn/network.hpp"
#include "bcglm/rng.hpp"
#include "bcglm/tensor.hpp"

namespace bcglm::nn {

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;      // mean over the epoch's mini-batches, dropout on
    double validation_loss = 0.0; // dropout off; NaN when there is no validation split
};

struct TrainedNetwork {
    Network network;
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0; // 0 when the returned parameters are the initialization

    const NetworkConfig& config() const { return network.config(); }
    std::size_t feature_dim() const { return network.feature_dim(); }
    /// Output-layer weights on the covariates (output_dim x covariates).
    Tensor covariate_weights() const { return network.covariate_block(); }
};

namespace detail {

inline void shuffle(std::vector<std::size_t>& idx, SeededRng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

inline void check_training_data(const NetworkConfig& cfg, const Network& net, const Tensor& X, const Tensor& Z,
                                const Tensor& Y) {
    check_inputs(net, X, cfg.covariates > 0 ? &Z : nullptr, "train");
    if (Y.empty() || Y.rows() != X.rows() || Y.row_stride() != net.output_dim())
        throw Error(Errc::ShapeMismatch, "train",
                    "responses must be " + std::to_string(X.rows()) + " x " + std::to_string(net.output_dim()));
    for (double y : Y.data()) {
        if (!std::isfinite(y)) throw Error(Errc::DomainError, "train", "non-finite response");
        if (cfg.loss == LossKind::BCE && y != 0.0 && y != 1.0) throw Error(Errc::DomainError, "train", "BCE needs 0/1 responses");
        if (cfg.loss == LossKind::Poisson && y < 0.0) throw Error(Errc::DomainError, "train", "Poisson loss needs counts >= 0");
    }
}

} // namespace detail

/// Mini-batch Adam with fresh dropout masks at every step and early stopping
/// on the held-out validation loss. The parameters of the best validation
/// epoch are returned.
///
/// Random draws come from named substreams of `rng`: "split" for the
/// validation hold-out, "init" for the weights, ("shuffle", epoch) for batch
/// order and ("dropout", epoch) for masks.
inline TrainedNetwork train(const NetworkConfig& cfg, const Tensor& X, const Tensor& Z, const Tensor& Y, const SeededRng& rng) {
    TrainedNetwork out{Network(cfg), {}, 0};
    Network& net = out.network;
    detail::check_training_data(cfg, net, X, Z, Y);

    SeededRng init = rng.substream("init");
    net.initialize(init);
    if (cfg.epochs == 0) return out;

    const std::size_t n = X.rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
    if (n_val >= n) n_val = n - 1;
    if (n_val > 0) {
        SeededRng split = rng.substream("split");
        detail::shuffle(order, split);
    }
    std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    const std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());

    AdamState adam(net);
    std::vector<LayerParams> best = net.params();
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        SeededRng shuffler = rng.substream("shuffle", epoch);
        SeededRng masks = rng.substream("dropout", epoch);
        detail::shuffle(train_idx, shuffler);
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size, ++batch_no) {
            const std::size_t len = std::min(cfg.batch_size, train_idx.size() - start);
            const std::span<const std::size_t> rows(train_idx.data() + start, len);
            BatchResult b = batch_gradient(net, X, Z, Y, rows, DropoutMode::Sample, masks);
            if (!std::isfinite(b.loss))
                throw Error(Errc::NonFiniteLoss, "train",
                            "loss became non-finite at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no + 1));
            loss_sum += b.loss * static_cast<double>(len);
            adam.step(net, b.grads, cfg.adam);
        }
        EpochRecord rec{epoch, loss_sum / static_cast<double>(train_idx.size()), std::numeric_limits<double>::quiet_NaN()};
        if (!val_idx.empty()) rec.validation_loss = evaluate_loss(net, X, Z, Y, val_idx);
        if (!std::isfinite(rec.train_loss) || (!val_idx.empty() && !std::isfinite(rec.validation_loss)))
            throw Error(Errc::NonFiniteLoss, "train", "loss became non-finite at epoch " + std::to_string(epoch));
        out.log.push_back(rec);

        const double criterion = val_idx.empty() ? rec.train_loss : rec.validation_loss;
        if (criterion < best_loss) {
            best_loss = criterion;
            best = net.params();
            out.best_epoch = epoch;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    net.params() = std::move(best);
    return out;
}

} // namespace bcglm::nn
