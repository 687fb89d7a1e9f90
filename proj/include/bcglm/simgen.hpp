#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/glm.hpp"
#include "bcglm/linalg.hpp"
#include "bcglm/parallel.hpp"
#include "bcglm/rng.hpp"
#include "bcglm/tensor.hpp"

namespace bcglm {

struct MaternParams {
    double variance = 1.0;
    double smoothness = 0.5;
    double range = 15.0; // grid units

    void validate() const {
        if (!(variance > 0.0) || !(smoothness > 0.0) || !(range > 0.0))
            throw Error(Errc::InvalidArgument, "MaternParams", "variance, smoothness and range must be positive");
        if (smoothness != 0.5 && smoothness != 1.5 && smoothness != 2.5)
            throw Error(Errc::UnsupportedSmoothness, "MaternParams",
                        "smoothness " + std::to_string(smoothness) + " is not one of 0.5, 1.5, 2.5");
    }
};

/// Matern covariance with the distance scaled by the range alone (no sqrt(2 nu)).
inline double matern_cov(double d, const MaternParams& p) {
    p.validate();
    if (!(d >= 0.0)) throw Error(Errc::DomainError, "matern_cov", "distance must be nonnegative");
    const double r = d / p.range;
    const double e = std::exp(-r);
    if (p.smoothness == 0.5) return p.variance * e;
    if (p.smoothness == 1.5) return p.variance * (1.0 + r) * e;
    return p.variance * (1.0 + r + r * r / 3.0) * e;
}

/// Pixel (i, j) of an h x w lattice sits at (i + 1, j + 1): unit spacing, 1-based.
struct Lattice {
    std::size_t height = 30;
    std::size_t width = 30;

    std::size_t size() const { return height * width; }
    double row_coord(std::size_t index) const { return static_cast<double>(index / width + 1); }
    double col_coord(std::size_t index) const { return static_cast<double>(index % width + 1); }
    double distance(std::size_t a, std::size_t b) const {
        return std::hypot(row_coord(a) - row_coord(b), col_coord(a) - col_coord(b));
    }
};

/// Zero-mean Gaussian-process images on a lattice. The covariance factor is
/// computed once at construction and shared by every draw.
class GpImageSampler {
public:
    GpImageSampler(Lattice grid, MaternParams params) : grid_(grid), params_(params) {
        params_.validate();
        const std::size_t n = grid_.size();
        Tensor cov({n, n});
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b <= a; ++b) cov(a, b) = cov(b, a) = matern_cov(grid_.distance(a, b), params_);
        CholeskyResult c = cholesky(cov);
        factor_ = std::move(c.lower);
        jitter_ = c.jitter;
    }

    const Lattice& grid() const { return grid_; }
    const MaternParams& params() const { return params_; }
    double jitter() const { return jitter_; }

    /// N x height x width; image n is L z with z from substream ("image", n).
    Tensor sample(std::size_t count, const SeededRng& rng, std::size_t workers = 1) const {
        const std::size_t n = grid_.size();
        Tensor out({count, grid_.height, grid_.width});
        parallel_for(count, workers, [&](std::size_t img) {
            SeededRng s = rng.substream("image", img);
            std::vector<double> z(n);
            for (double& v : z) v = s.normal();
            double* dst = out.data().data() + img * n;
            for (std::size_t a = 0; a < n; ++a) {
                double acc = 0.0;
                for (std::size_t b = 0; b <= a; ++b) acc += factor_(a, b) * z[b];
                dst[a] = acc;
            }
        });
        return out;
    }

private:
    Lattice grid_;
    MaternParams params_;
    Tensor factor_;
    double jitter_ = 0.0;
};

inline Tensor sample_gp_images(Lattice grid, const MaternParams& params, std::size_t count, const SeededRng& rng,
                               std::size_t workers = 1) {
    return GpImageSampler(grid, params).sample(count, rng, workers);
}

struct FocalPoint {
    double row;
    double col;
};

inline std::vector<FocalPoint> default_focal_points() { return {{0, 0}, {10, 20}, {15, 15}, {30, 30}}; }

struct FilterBank {
    Lattice grid;
    std::vector<FocalPoint> focal;
    double decay = 0.1;
    Tensor filters; // C x height x width

    std::size_t count() const { return focal.size(); }
};

/// Inverse-quadratic filters 1 / (1 + (decay * distance to focal point)^2).
inline FilterBank build_filters(Lattice grid, std::vector<FocalPoint> focal, double decay) {
    if (!(decay > 0.0)) throw Error(Errc::InvalidArgument, "build_filters", "decay must be positive");
    if (focal.empty()) throw Error(Errc::InvalidArgument, "build_filters", "at least one focal point is required");
    Tensor filters({focal.size(), grid.height, grid.width});
    FilterBank bank{grid, std::move(focal), decay, std::move(filters)};
    for (std::size_t c = 0; c < bank.count(); ++c)
        for (std::size_t p = 0; p < grid.size(); ++p) {
            const double d = std::hypot(grid.row_coord(p) - bank.focal[c].row, grid.col_coord(p) - bank.focal[c].col);
            bank.filters[c * grid.size() + p] = 1.0 / (1.0 + (decay * d) * (decay * d));
        }
    return bank;
}

/// N x C: pixel mean of filter c times image n.
inline Tensor true_features(const Tensor& images, const FilterBank& bank) {
    const std::size_t pix = bank.grid.size();
    if (images.rank() < 2 || images.row_stride() != pix)
        throw Error(Errc::ShapeMismatch, "true_features",
                    "images are " + shape_string(images.shape()) + ", filters cover " + std::to_string(pix) + " pixels");
    const std::size_t n = images.rows();
    Tensor phi({n, bank.count()});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < bank.count(); ++c) {
            double s = 0.0;
            for (std::size_t p = 0; p < pix; ++p) s += bank.filters[c * pix + p] * images[i * pix + p];
            phi(i, c) = s / static_cast<double>(pix);
        }
    return phi;
}

inline constexpr double kMaxPoissonIntensity = 1e6;

/// Responses given the linear predictor rowsum(phi) + Z gamma. Gaussian noise
/// has unit variance.
inline std::vector<double> generate_responses(const Tensor& phi, const Tensor& Z, std::span<const double> gamma, Family family,
                                              SeededRng& rng) {
    const std::size_t n = phi.rows();
    if (Z.rank() != 2 || Z.rows() != n || Z.cols() != gamma.size())
        throw Error(Errc::ShapeMismatch, "generate_responses", "covariates must be N x len(gamma)");
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double eta = 0.0;
        for (std::size_t c = 0; c < phi.cols(); ++c) eta += phi(i, c);
        for (std::size_t j = 0; j < gamma.size(); ++j) eta += Z(i, j) * gamma[j];
        const double mean = inverse_link(family, eta);
        switch (family) {
        case Family::Gaussian: y[i] = mean + rng.normal(); break;
        case Family::Bernoulli: y[i] = rng.bernoulli(mean) ? 1.0 : 0.0; break;
        case Family::Poisson:
            if (!(mean <= kMaxPoissonIntensity))
                throw Error(Errc::DomainError, "generate_responses",
                            "Poisson intensity " + std::to_string(mean) + " in row " + std::to_string(i) + " exceeds 1e6");
            y[i] = static_cast<double>(rng.poisson(mean));
            break;
        }
    }
    return y;
}

struct SimulatedDataset {
    Family family = Family::Gaussian;
    Tensor X;   // N x height x width
    Tensor Z;   // N x 2
    Tensor Y;   // N x 1
    Tensor phi; // N x C, the generating features
    std::vector<double> gamma;

    std::size_t size() const { return X.rows(); }
};

/// Image simulation: GP images, standard normal covariates, filter features
/// (four filters, or the first two for Poisson) and responses with
/// gamma = (1, 1). Uses substreams "images", "covariates" and "responses".
inline SimulatedDataset simulate_image_dataset(Family family, std::size_t n, const SeededRng& rng, const GpImageSampler& sampler,
                                               std::size_t workers = 1) {
    if (n == 0) throw Error(Errc::InvalidArgument, "simulate_image_dataset", "N must be positive");
    SimulatedDataset d;
    d.family = family;
    d.gamma = {1.0, 1.0};
    d.X = sampler.sample(n, rng.substream("images", 0), workers);
    SeededRng cov = rng.substream("covariates", 0);
    d.Z = draw_normal(cov, {n, 2});
    auto focal = default_focal_points();
    if (family == Family::Poisson) focal.resize(2);
    d.phi = true_features(d.X, build_filters(sampler.grid(), focal, 0.1));
    SeededRng resp = rng.substream("responses", 0);
    const auto y = generate_responses(d.phi, d.Z, d.gamma, family, resp);
    d.Y = Tensor::matrix(n, 1, y);
    return d;
}

/// Radial basis ||s - u||^2 log ||s - u||, zero at the knot itself.
inline Tensor thin_plate_basis(const Tensor& locations, const Tensor& knots) {
    if (locations.rank() != 2 || knots.rank() != 2 || locations.cols() != knots.cols())
        throw Error(Errc::ShapeMismatch, "thin_plate_basis", "locations and knots must share a coordinate dimension");
    if (knots.rows() == 0) throw Error(Errc::InvalidArgument, "thin_plate_basis", "no knots");
    Tensor b({locations.rows(), knots.rows()});
    for (std::size_t n = 0; n < locations.rows(); ++n)
        for (std::size_t j = 0; j < knots.rows(); ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < knots.cols(); ++k) d2 += (locations(n, k) - knots(j, k)) * (locations(n, k) - knots(j, k));
            b(n, j) = d2 > 0.0 ? 0.5 * d2 * std::log(d2) : 0.0;
        }
    return b;
}

// Two-layer tanh generator with fixed weights.
namespace simple_nn {
inline constexpr std::array<double, 12> kWeights{1, 2, 1, 2, 3, 1, 0.5, 0.8, 1.1, 0.5, 1, 1.5};
inline constexpr std::array<double, 4> kBiases{0.2, 0.2, 0.2, 0.3};
inline constexpr std::array<double, 2> kGamma{1, 2};

inline double mean(std::span<const double> x, std::span<const double> z) {
    const auto& w = kWeights;
    double mu = kBiases[3] + z[0] * kGamma[0] + z[1] * kGamma[1];
    for (std::size_t h = 0; h < 3; ++h) {
        const double o = std::tanh(x[0] * w[3 * h] + x[1] * w[3 * h + 1] + x[2] * w[3 * h + 2] + kBiases[h]);
        mu += o * w[9 + h];
    }
    return mu;
}
} // namespace simple_nn

struct SimpleNnDataset {
    Tensor X;  // N x 3
    Tensor Z;  // N x 2
    Tensor Y;  // N x 1
    std::vector<double> mu;
};

/// X and Z standard normal, Y ~ N(mu, 1). Uses substreams "inputs" and "responses".
inline SimpleNnDataset simple_nn_generate(std::size_t n, const SeededRng& rng) {
    if (n == 0) throw Error(Errc::InvalidArgument, "simple_nn_generate", "N must be positive");
    SeededRng in = rng.substream("inputs", 0), out = rng.substream("responses", 0);
    SimpleNnDataset d{draw_normal(in, {n, 3}), draw_normal(in, {n, 2}), Tensor({n, 1}), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        d.mu[i] = simple_nn::mean({&d.X(i, 0), 3}, {&d.Z(i, 0), 2});
        d.Y[i] = d.mu[i] + out.normal();
    }
    return d;
}

} // namespace bcglm
