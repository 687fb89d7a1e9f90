#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/linalg.hpp"
#include "bcglm/rng.hpp"
#include "bcglm/tensor.hpp"

namespace bcglm {

/// Response family; each uses its canonical link (identity, logit, log).
enum class Family { Gaussian, Bernoulli, Poisson };

inline std::string_view family_name(Family f) {
    switch (f) {
    case Family::Gaussian: return "gaussian";
    case Family::Bernoulli: return "binary";
    case Family::Poisson: return "poisson";
    }
    return "?";
}

inline Family parse_family(std::string_view s) {
    if (s == "gaussian") return Family::Gaussian;
    if (s == "binary" || s == "bernoulli") return Family::Bernoulli;
    if (s == "poisson" || s == "count") return Family::Poisson;
    throw Error(Errc::ConfigError, "parse_family", "unknown family '" + std::string(s) + "'");
}

/// Mean function (inverse canonical link).
inline double inverse_link(Family f, double eta) {
    switch (f) {
    case Family::Gaussian: return eta;
    case Family::Bernoulli: return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
    case Family::Poisson: return std::exp(eta);
    }
    return eta;
}

/// Canonical variance function; also the IRLS weight under the canonical link.
inline double variance_function(Family f, double mu) {
    switch (f) {
    case Family::Gaussian: return 1.0;
    case Family::Bernoulli: return mu * (1.0 - mu);
    case Family::Poisson: return mu;
    }
    return 1.0;
}

struct GlmDataset {
    Tensor A;              // N x q design
    std::vector<double> y; // N responses
    Family family = Family::Gaussian;

    std::size_t n() const { return A.rows(); }
    std::size_t q() const { return A.cols(); }

    void validate() const {
        if (A.rank() != 2 || A.rows() != y.size())
            throw Error(Errc::ShapeMismatch, "GlmDataset", "design rows and response length differ");
        if (!A.all_finite()) throw Error(Errc::DomainError, "GlmDataset", "non-finite design entry");
        for (double v : y) {
            if (!std::isfinite(v)) throw Error(Errc::DomainError, "GlmDataset", "non-finite response");
            if (family == Family::Bernoulli && v != 0.0 && v != 1.0)
                throw Error(Errc::DomainError, "GlmDataset", "binary responses must be 0 or 1");
            if (family == Family::Poisson && (v < 0.0 || v != std::floor(v)))
                throw Error(Errc::DomainError, "GlmDataset", "counts must be nonnegative integers");
        }
    }
};

inline std::vector<double> linear_predictor(const Tensor& A, std::span<const double> beta) { return matvec(A, beta); }

/// Exact log-likelihood. For the Gaussian family a given `dispersion` is used
/// as the fixed variance; without one the variance is profiled out at RSS/N.
inline double log_likelihood(const GlmDataset& data, std::span<const double> beta, std::optional<double> dispersion = {}) {
    data.validate();
    if (beta.size() != data.q()) throw Error(Errc::ShapeMismatch, "log_likelihood", "coefficient length differs from q");
    const auto eta = linear_predictor(data.A, beta);
    const double n = static_cast<double>(data.n());
    double ll = 0.0;
    switch (data.family) {
    case Family::Gaussian: {
        double rss = 0.0;
        for (std::size_t i = 0; i < eta.size(); ++i) rss += (data.y[i] - eta[i]) * (data.y[i] - eta[i]);
        if (dispersion) {
            if (!(*dispersion > 0.0)) throw Error(Errc::DomainError, "log_likelihood", "dispersion must be positive");
            return -0.5 * n * std::log(2.0 * std::numbers::pi * *dispersion) - 0.5 * rss / *dispersion;
        }
        const double s2 = rss / n;
        return -0.5 * n * std::log(2.0 * std::numbers::pi * s2) - 0.5 * n;
    }
    case Family::Bernoulli:
        for (std::size_t i = 0; i < eta.size(); ++i) {
            // log(1 + e^eta) without overflow
            const double log1pexp = eta[i] > 0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
            ll += data.y[i] * eta[i] - log1pexp;
        }
        return ll;
    case Family::Poisson:
        for (std::size_t i = 0; i < eta.size(); ++i) ll += data.y[i] * eta[i] - std::exp(eta[i]) - std::lgamma(data.y[i] + 1.0);
        return ll;
    }
    return ll;
}

struct IrlsOptions {
    std::size_t max_iterations = 100;
    double step_tolerance = 1e-8;
    double separation_norm = 1e4;
    bool ridge_fallback = true;
};

struct GlmFit {
    std::vector<double> beta;
    Tensor information;      // A^T W A at beta (plus the ridge term when used)
    double dispersion = 1.0; // Gaussian: RSS / N; otherwise 1
    std::size_t iterations = 0;
    double ridge = 0.0;      // > 0 when the ridge fallback was needed
    double score_norm = 0.0; // max |A^T (y - mu)| (penalized when ridge > 0)
};

namespace detail {

/// Smallest Cholesky pivot of the Gram matrix rescaled to unit diagonal;
/// zero when a column is identically zero or a pivot collapses.
inline double min_correlation_pivot(const Tensor& gram) {
    const std::size_t q = gram.rows();
    std::vector<double> s(q);
    for (std::size_t i = 0; i < q; ++i) {
        if (!(gram(i, i) > 0.0)) return 0.0;
        s[i] = 1.0 / std::sqrt(gram(i, i));
    }
    Tensor l({q, q});
    double smallest = 1.0;
    for (std::size_t j = 0; j < q; ++j) {
        double d = gram(j, j) * s[j] * s[j];
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        smallest = std::min(smallest, d);
        if (!(d > 0.0)) return 0.0;
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < q; ++i) {
            double v = gram(i, j) * s[i] * s[j];
            for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
            l(i, j) = v / l(j, j);
        }
    }
    return smallest;
}

inline constexpr double kRankPivotTolerance = 1e-10;

inline std::vector<double> initial_mean(const GlmDataset& d) {
    std::vector<double> mu(d.n());
    for (std::size_t i = 0; i < d.n(); ++i) {
        switch (d.family) {
        case Family::Gaussian: mu[i] = d.y[i]; break;
        case Family::Bernoulli: mu[i] = (d.y[i] + 0.5) / 2.0; break;
        case Family::Poisson: mu[i] = d.y[i] + 0.1; break;
        }
    }
    return mu;
}

inline double link(Family f, double mu) {
    switch (f) {
    case Family::Gaussian: return mu;
    case Family::Bernoulli: return std::log(mu / (1.0 - mu));
    case Family::Poisson: return std::log(mu);
    }
    return mu;
}

// Penalized log-likelihood used for step control (dispersion-free for Gaussian).
inline double objective(const GlmDataset& d, std::span<const double> beta, double ridge) {
    double pen = 0.0;
    for (double b : beta) pen += b * b;
    const double ll = d.family == Family::Gaussian ? log_likelihood(d, beta, 1.0) : log_likelihood(d, beta);
    return ll - 0.5 * ridge * pen;
}

inline bool pinned(const GlmDataset& d, std::span<const double> eta) {
    if (d.family != Family::Bernoulli) return false;
    for (double e : eta) {
        const double mu = inverse_link(d.family, e);
        if (mu < 1e-10 || mu > 1.0 - 1e-10) return true;
    }
    return false;
}

[[noreturn]] inline void separation(double norm) {
    throw Error(Errc::Separation, "irls_fit",
                "fitted probabilities pinned at 0 or 1 (|beta| = " + std::to_string(norm) + "); the MLE does not exist");
}

inline GlmFit irls(const GlmDataset& d, double ridge, const IrlsOptions& opt) {
    const std::size_t n = d.n(), q = d.q();
    GlmFit fit;
    fit.ridge = ridge;
    // First step from the data-based starting mean, later steps from beta.
    std::vector<double> mu = initial_mean(d), eta(n), w(n), z(n);
    for (std::size_t i = 0; i < n; ++i) eta[i] = link(d.family, mu[i]);
    std::vector<double> beta(q, 0.0);
    bool have_beta = false;
    double obj = 0.0;
    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = variance_function(d.family, mu[i]);
            z[i] = eta[i] + (d.y[i] - mu[i]) / std::max(w[i], 1e-300);
        }
        Tensor h = gram(d.A, w);
        for (std::size_t j = 0; j < q; ++j) h(j, j) += ridge;
        std::vector<double> rhs(q, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < q; ++j) rhs[j] += d.A(i, j) * w[i] * z[i];
        std::vector<double> next;
        try {
            next = cholesky_solve(cholesky(h).lower, rhs);
        } catch (const Error& e) {
            if (e.code() == Errc::NotPositiveDefinite && pinned(d, eta)) separation(0.0);
            throw;
        }
        double norm = 0.0;
        for (double b : next) norm = std::max(norm, std::fabs(b));
        if (!std::isfinite(norm)) throw Error(Errc::NoConvergence, "irls_fit", "non-finite coefficients");
        if (d.family == Family::Bernoulli && norm > opt.separation_norm) separation(norm);

        if (have_beta) {
            // Step halving keeps the objective from decreasing.
            double cand = objective(d, next, ridge);
            for (int halve = 0; halve < 30 && !(cand >= obj - 1e-12 * std::fabs(obj)); ++halve) {
                for (std::size_t j = 0; j < q; ++j) next[j] = 0.5 * (next[j] + beta[j]);
                cand = objective(d, next, ridge);
            }
            obj = cand;
        } else {
            obj = objective(d, next, ridge);
        }
        double step = 0.0, scale = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            step = std::max(step, std::fabs(next[j] - beta[j]));
            scale = std::max(scale, std::fabs(next[j]));
        }
        beta = std::move(next);
        eta = linear_predictor(d.A, beta);
        for (std::size_t i = 0; i < n; ++i) mu[i] = inverse_link(d.family, eta[i]);
        fit.iterations = it;
        if (have_beta && step <= opt.step_tolerance * (1.0 + scale)) {
            if (pinned(d, eta)) separation(scale);
            fit.beta = beta;
            break;
        }
        have_beta = true;
    }
    if (fit.beta.empty()) {
        double norm = 0.0;
        for (double b : beta) norm = std::max(norm, std::fabs(b));
        if (pinned(d, eta)) separation(norm);
        throw Error(Errc::NoConvergence, "irls_fit", "no convergence within " + std::to_string(opt.max_iterations) + " iterations");
    }

    // Information and score at the solution.
    for (std::size_t i = 0; i < n; ++i) w[i] = variance_function(d.family, mu[i]);
    if (d.family == Family::Gaussian) {
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) rss += (d.y[i] - mu[i]) * (d.y[i] - mu[i]);
        fit.dispersion = rss / static_cast<double>(n);
        if (!(fit.dispersion > 0.0)) throw Error(Errc::RankDeficient, "irls_fit", "zero residual variance (perfect fit)");
        for (double& wi : w) wi = 1.0 / fit.dispersion;
    }
    fit.information = gram(d.A, w);
    for (std::size_t j = 0; j < q; ++j) fit.information(j, j) += ridge;
    std::vector<double> score(q, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) score[j] += d.A(i, j) * (d.y[i] - mu[i]);
    for (std::size_t j = 0; j < q; ++j) {
        score[j] -= ridge * fit.beta[j];
        fit.score_norm = std::max(fit.score_norm, std::fabs(score[j]));
    }
    return fit;
}

} // namespace detail

/// Maximum likelihood by Newton / IRLS with step halving. A design whose
/// unit-scaled Gram matrix has a Cholesky pivot below 1e-10 is rank
/// deficient: that raises RankDeficient, or, with `ridge_fallback`, is refit
/// with penalty 1e-6 * trace(A^T A) / q and flagged through GlmFit::ridge.
inline GlmFit irls_fit(const GlmDataset& data, const IrlsOptions& opt = {}) {
    data.validate();
    const std::size_t q = data.q();
    if (data.n() <= q)
        throw Error(Errc::RankDeficient, "irls_fit", "need more observations (" + std::to_string(data.n()) + ") than columns (" +
                                                         std::to_string(q) + ")");
    const Tensor g = gram(data.A);
    if (detail::min_correlation_pivot(g) > detail::kRankPivotTolerance) return detail::irls(data, 0.0, opt);
    if (!opt.ridge_fallback) throw Error(Errc::RankDeficient, "irls_fit", "design matrix has column rank below q");
    double trace = 0.0;
    for (std::size_t j = 0; j < q; ++j) trace += g(j, j);
    const double ridge = 1e-6 * trace / static_cast<double>(q);
    if (!(ridge > 0.0)) throw Error(Errc::RankDeficient, "irls_fit", "design matrix is identically zero");
    return detail::irls(data, ridge, opt);
}

/// Normal approximation N(mean, precision^-1).
class GaussianPosterior {
public:
    GaussianPosterior() = default;

    GaussianPosterior(std::vector<double> mean, Tensor precision) : mean_(std::move(mean)), precision_(std::move(precision)) {
        if (precision_.rank() != 2 || precision_.rows() != mean_.size() || precision_.cols() != mean_.size())
            throw Error(Errc::ShapeMismatch, "GaussianPosterior", "precision must be q x q for a q-vector mean");
        CholeskyResult c = cholesky(precision_);
        factor_ = std::move(c.lower);
        jitter_ = c.jitter;
        covariance_ = spd_inverse_from_factor(factor_);
    }

    const std::vector<double>& mean() const { return mean_; }
    const Tensor& precision() const { return precision_; }
    const Tensor& covariance() const { return covariance_; }
    double jitter() const { return jitter_; }
    std::size_t dim() const { return mean_.size(); }

    std::vector<double> sd() const {
        std::vector<double> s(dim());
        for (std::size_t j = 0; j < dim(); ++j) s[j] = std::sqrt(covariance_(j, j));
        return s;
    }

    /// count x q draws: mean + L^-T e with precision = L L^T and e ~ N(0, I).
    Tensor draw(SeededRng& rng, std::size_t count) const {
        Tensor out({count, dim()});
        for (std::size_t s = 0; s < count; ++s) draw_one(rng, std::span<double>(&out(s, 0), dim()));
        return out;
    }

    void draw_one(SeededRng& rng, std::span<double> out) const {
        std::vector<double> e(dim());
        for (double& v : e) v = rng.normal();
        const auto x = solve_upper_t(factor_, e);
        for (std::size_t j = 0; j < dim(); ++j) out[j] = mean_[j] + x[j];
    }

    /// Variance of a^T beta.
    double quadratic_variance(std::span<const double> a) const {
        const auto v = solve_lower(factor_, a);
        return dot(v, v);
    }

private:
    std::vector<double> mean_;
    Tensor precision_;
    Tensor factor_;
    Tensor covariance_;
    double jitter_ = 0.0;
};

inline GaussianPosterior laplace_posterior(std::vector<double> mean, Tensor precision) {
    return GaussianPosterior(std::move(mean), std::move(precision));
}

inline GaussianPosterior laplace_posterior(const GlmFit& fit) { return GaussianPosterior(fit.beta, fit.information); }

// ---------------------------------------------------------------------------
// Random-walk Metropolis oracle.
// ---------------------------------------------------------------------------

/// Posterior mode under independent N(0, prior_sd^2) coefficients. The
/// returned information includes the prior precision, so laplace_posterior
/// of the result approximates that posterior.
inline GlmFit irls_map(const GlmDataset& data, double prior_sd, const IrlsOptions& opt = {}) {
    data.validate();
    if (!(prior_sd > 0.0) || !std::isfinite(prior_sd)) throw Error(Errc::InvalidArgument, "irls_map", "prior sd must be positive");
    return detail::irls(data, 1.0 / (prior_sd * prior_sd), opt);
}

struct McmcOptions {
    double prior_sd = 1.0;
    std::size_t iterations = 10000; // total, including burn-in
    std::size_t burn_in = 2000;
    /// Gaussian family only: fixed error variance. Defaults to the MLE RSS/N.
    std::optional<double> gaussian_variance;
    std::size_t batches = 50; // for batch-means Monte Carlo standard errors
};

struct McmcResult {
    Tensor draws; // (iterations - burn_in) x q
    double acceptance_rate = 0.0;
    std::vector<double> mean, sd, mc_se;
};

/// Random-walk Metropolis on beta targeting likelihood x N(0, prior_sd^2 I).
/// The Gaussian proposal starts from the inverse Fisher information at the
/// MLE (identity if that fit fails), and during burn-in its scale is adapted
/// toward 0.234 acceptance; halfway through burn-in its shape switches to
/// the empirical covariance of the chain. The kernel is fixed afterwards.
inline McmcResult mcmc_oracle(const GlmDataset& data, const McmcOptions& opt, SeededRng& rng) {
    data.validate();
    if (opt.iterations <= opt.burn_in)
        throw Error(Errc::InvalidArgument, "mcmc_oracle", "iterations must exceed burn-in");
    if (!(opt.prior_sd > 0.0)) throw Error(Errc::InvalidArgument, "mcmc_oracle", "prior sd must be positive");
    const std::size_t q = data.q();

    std::vector<double> beta(q, 0.0);
    Tensor shape = Tensor::identity(q);
    std::optional<double> variance = opt.gaussian_variance;
    try {
        const GlmFit fit = irls_fit(data);
        beta = fit.beta;
        shape = spd_inverse(fit.information);
        if (data.family == Family::Gaussian && !variance) variance = fit.dispersion;
    } catch (const Error&) {
        if (data.family == Family::Gaussian && !variance) variance = 1.0;
    }
    auto log_target = [&](std::span<const double> b) {
        double pen = 0.0;
        for (double v : b) pen += v * v;
        const double ll = data.family == Family::Gaussian ? log_likelihood(data, b, variance) : log_likelihood(data, b);
        return ll - 0.5 * pen / (opt.prior_sd * opt.prior_sd);
    };

    Tensor chol = cholesky(shape).lower;
    double log_scale = std::log(2.38 / std::sqrt(static_cast<double>(q)));
    double current = log_target(beta);
    const std::size_t kept = opt.iterations - opt.burn_in;
    McmcResult r{Tensor({kept, q}), 0.0, {}, {}, {}};
    std::vector<double> prop(q), e(q);
    std::vector<std::vector<double>> history;
    std::size_t accepted = 0;
    for (std::size_t it = 0; it < opt.iterations; ++it) {
        for (double& v : e) v = rng.normal();
        const double s = std::exp(log_scale);
        for (std::size_t i = 0; i < q; ++i) {
            double step = 0.0;
            for (std::size_t k = 0; k <= i; ++k) step += chol(i, k) * e[k];
            prop[i] = beta[i] + s * step;
        }
        const double cand = log_target(prop);
        const bool accept = std::log(rng.uniform()) < cand - current;
        if (accept) {
            beta = prop;
            current = cand;
        }
        if (it < opt.burn_in) {
            const double rate = accept ? 1.0 : 0.0;
            log_scale += (rate - 0.234) / std::pow(static_cast<double>(it + 1), 0.6);
            if (it >= opt.burn_in / 4) history.push_back(beta);
            if (it + 1 == opt.burn_in / 2 && history.size() > 10 * q) {
                Tensor cov({q, q});
                std::vector<double> m(q, 0.0);
                for (const auto& h : history)
                    for (std::size_t j = 0; j < q; ++j) m[j] += h[j] / static_cast<double>(history.size());
                for (const auto& h : history)
                    for (std::size_t i = 0; i < q; ++i)
                        for (std::size_t j = 0; j < q; ++j)
                            cov(i, j) += (h[i] - m[i]) * (h[j] - m[j]) / static_cast<double>(history.size() - 1);
                try {
                    chol = cholesky(cov).lower;
                    log_scale = std::log(2.38 / std::sqrt(static_cast<double>(q)));
                } catch (const Error&) {
                    // keep the information-based shape
                }
            }
        } else {
            accepted += accept;
            for (std::size_t j = 0; j < q; ++j) r.draws(it - opt.burn_in, j) = beta[j];
        }
    }
    r.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(kept);
    r.mean.assign(q, 0.0);
    r.sd.assign(q, 0.0);
    r.mc_se.assign(q, 0.0);
    const std::size_t batches = std::max<std::size_t>(2, std::min(opt.batches, kept));
    const std::size_t bsize = kept / batches;
    for (std::size_t j = 0; j < q; ++j) {
        double m = 0.0;
        for (std::size_t s = 0; s < kept; ++s) m += r.draws(s, j);
        m /= static_cast<double>(kept);
        double v = 0.0;
        for (std::size_t s = 0; s < kept; ++s) v += (r.draws(s, j) - m) * (r.draws(s, j) - m);
        r.mean[j] = m;
        r.sd[j] = std::sqrt(v / static_cast<double>(kept - 1));
        // Batch means over the first batches * bsize draws.
        double bv = 0.0;
        if (bsize > 0) {
            for (std::size_t b = 0; b < batches; ++b) {
                double bm = 0.0;
                for (std::size_t s = b * bsize; s < (b + 1) * bsize; ++s) bm += r.draws(s, j);
                bm /= static_cast<double>(bsize);
                bv += (bm - m) * (bm - m);
            }
            bv /= static_cast<double>(batches - 1);
        }
        r.mc_se[j] = std::sqrt(bv / static_cast<double>(batches));
    }
    return r;
}

} // namespace bcglm
