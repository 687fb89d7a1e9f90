#pragma once

#include <array>
#include <string>
#include <string_view>

#include "bcglm/error.hpp"

// Network presets. The "full" presets transcribe the published layer tables
// and training settings. The "quick" presets keep the block structure (conv,
// pool, dense, dropout) but use relu convolutions, larger batches, a higher
// learning rate and early stopping, so a replicate runs in seconds on one core.
// configs/<name>.cfg hold the same text.

namespace bcglm::presets {

inline constexpr std::string_view kGaussianFull = R"(# Gaussian image simulation, published settings
input 30x30x1
covariates 2
loss mse
optimizer adam learning_rate=1e-4
batch_size 32
epochs 300
patience 0
conv2d filters=8 kernel=4x4 strides=2x2 activation=relu
dropout rate=0.2
maxpool pool=2x2
conv2d filters=16 kernel=3x3 strides=2x2 activation=softmax
dropout rate=0.2
maxpool pool=2x2
flatten
dense units=32 activation=relu
dropout rate=0.2
dense units=16 activation=relu
dropout rate=0.2
dense units=16 activation=softplus
dropout rate=0.2
concatenate
dense units=1 activation=linear
)";

inline constexpr std::string_view kBinaryFull = R"(# binary image simulation, published settings
input 30x30x1
covariates 2
loss bce
optimizer adam learning_rate=1e-4
batch_size 3
epochs 2000
patience 0
conv2d filters=16 kernel=3x3 strides=1x1 activation=softmax
dropout rate=0.25
maxpool pool=2x2
conv2d filters=32 kernel=3x3 strides=1x1 activation=softmax
dropout rate=0.25
maxpool pool=2x2
flatten
dense units=16 activation=relu
dropout rate=0.25
dense units=8 activation=linear
dropout rate=0.25
concatenate
dense units=1 activation=sigmoid
)";

inline constexpr std::string_view kPoissonFull = R"(# Poisson image simulation, published settings
input 30x30x1
covariates 2
loss poisson
optimizer adam learning_rate=1e-3
batch_size 3
epochs 2000
patience 0
conv2d filters=8 kernel=4x4 strides=2x2 activation=softmax
dropout rate=0.2
maxpool pool=2x2
conv2d filters=32 kernel=3x3 strides=1x1 activation=softmax
dropout rate=0.2
maxpool pool=2x2
flatten
dense units=32 activation=softplus
dropout rate=0.2
dense units=16 activation=linear
dropout rate=0.2
concatenate
dense units=1 activation=exponential
)";

inline constexpr std::string_view kSimpleNnFull = R"(# dense-only network matching the simple generator
input 3
covariates 2
loss mse
optimizer adam learning_rate=1e-3
batch_size 10
epochs 10
patience 0
dense units=3 activation=tanh
dropout rate=0.2
concatenate
dense units=1 activation=linear
)";

inline constexpr std::string_view kGaussianQuick = R"(# Gaussian image simulation, quick settings
input 30x30x1
covariates 2
loss mse
optimizer adam learning_rate=1e-3
batch_size 16
epochs 100
patience 10
conv2d filters=8 kernel=4x4 strides=2x2 activation=relu
dropout rate=0.2
maxpool pool=2x2
conv2d filters=16 kernel=3x3 strides=1x1 activation=relu
dropout rate=0.2
maxpool pool=2x2
flatten
dense units=32 activation=softplus
dropout rate=0.2
dense units=16 activation=relu
dropout rate=0.2
concatenate
dense units=1 activation=linear
)";

inline constexpr std::string_view kBinaryQuick = R"(# binary image simulation, quick settings
input 30x30x1
covariates 2
loss bce
optimizer adam learning_rate=1e-3
batch_size 16
epochs 100
patience 10
conv2d filters=8 kernel=4x4 strides=2x2 activation=relu
dropout rate=0.25
maxpool pool=2x2
conv2d filters=16 kernel=3x3 strides=1x1 activation=relu
dropout rate=0.25
maxpool pool=2x2
flatten
dense units=16 activation=relu
dropout rate=0.25
dense units=8 activation=linear
dropout rate=0.25
concatenate
dense units=1 activation=sigmoid
)";

inline constexpr std::string_view kPoissonQuick = R"(# Poisson image simulation, quick settings
input 30x30x1
covariates 2
loss poisson
optimizer adam learning_rate=1e-3
batch_size 16
epochs 100
patience 10
conv2d filters=8 kernel=4x4 strides=2x2 activation=relu
dropout rate=0.2
maxpool pool=2x2
conv2d filters=16 kernel=3x3 strides=1x1 activation=relu
dropout rate=0.2
maxpool pool=2x2
flatten
dense units=32 activation=softplus
dropout rate=0.2
dense units=16 activation=linear
dropout rate=0.2
concatenate
dense units=1 activation=exponential
)";

inline constexpr std::string_view kSimpleNnQuick = R"(# dense-only network, longer training with early stopping
input 3
covariates 2
loss mse
optimizer adam learning_rate=1e-3
batch_size 10
epochs 300
patience 20
dense units=3 activation=tanh
dropout rate=0.2
concatenate
dense units=1 activation=linear
)";

inline constexpr std::array<std::string_view, 8> kNames{"gaussian-full", "binary-full", "poisson-full", "simple-nn-full",
                                                      "gaussian-quick", "binary-quick", "poisson-quick", "simple-nn-quick"};

inline std::string_view lookup(std::string_view name) {
    if (name == "gaussian-full") return kGaussianFull;
    if (name == "binary-full") return kBinaryFull;
    if (name == "poisson-full") return kPoissonFull;
    if (name == "simple-nn-full") return kSimpleNnFull;
    if (name == "gaussian-quick") return kGaussianQuick;
    if (name == "binary-quick") return kBinaryQuick;
    if (name == "poisson-quick") return kPoissonQuick;
    if (name == "simple-nn-quick") return kSimpleNnQuick;
    throw Error(Errc::ConfigError, "presets::lookup", "unknown preset '" + std::string(name) + "'");
}

} // namespace bcglm::presets
