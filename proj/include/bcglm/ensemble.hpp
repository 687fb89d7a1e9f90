#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
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

/// Equal-weight mixture of per-draw Laplace approximations.
class EnsemblePosterior {
public:
    EnsemblePosterior(std::vector<GaussianPosterior> components, Family family)
        : components_(std::move(components)), family_(family) {
        if (components_.empty()) throw Error(Errc::DimensionMismatch, "EnsemblePosterior", "no components");
        for (const auto& c : components_)
            if (c.dim() != components_.front().dim())
                throw Error(Errc::DimensionMismatch, "EnsemblePosterior", "components differ in dimension");
    }

    std::size_t size() const { return components_.size(); }
    std::size_t dim() const { return components_.front().dim(); }
    Family family() const { return family_; }
    const GaussianPosterior& component(std::size_t m) const { return components_.at(m); }
    const std::vector<GaussianPosterior>& components() const { return components_; }

    /// Exact mixture mean.
    std::vector<double> mean() const {
        std::vector<double> m(dim(), 0.0);
        for (const auto& c : components_)
            for (std::size_t j = 0; j < dim(); ++j) m[j] += c.mean()[j];
        for (double& v : m) v /= static_cast<double>(size());
        return m;
    }

    /// count x q draws: a uniformly chosen component, then its Gaussian.
    Tensor draw(SeededRng& rng, std::size_t count) const {
        Tensor out({count, dim()});
        for (std::size_t s = 0; s < count; ++s)
            components_[rng.uniform_index(size())].draw_one(rng, std::span<double>(&out(s, 0), dim()));
        return out;
    }

private:
    std::vector<GaussianPosterior> components_;
    Family family_;
};

inline EnsemblePosterior ensemble_posterior(std::vector<GaussianPosterior> components, Family family) {
    return EnsemblePosterior(std::move(components), family);
}

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    double width() const { return upper - lower; }
    bool contains(double x) const { return lower <= x && x <= upper; }
};

namespace detail {

inline std::size_t window_size(std::size_t n, double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(Errc::InvalidArgument, "interval", "level must lie in (0, 1)");
    if (n == 0) throw Error(Errc::InvalidArgument, "interval", "no draws");
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(level * static_cast<double>(n) - 1e-9)), 1, n);
}

} // namespace detail

/// Shortest window containing ceil(level * S) of the sorted draws.
inline Interval hpd_interval(std::vector<double> draws, double level) {
    const std::size_t k = detail::window_size(draws.size(), level);
    std::sort(draws.begin(), draws.end());
    std::size_t best = 0;
    for (std::size_t i = 1; i + k <= draws.size(); ++i)
        if (draws[i + k - 1] - draws[i] < draws[best + k - 1] - draws[best]) best = i;
    return {draws[best], draws[best + k - 1]};
}

/// Central window of ceil(level * S) sorted draws, so it is one of the
/// windows the HPD scan considers.
inline Interval equal_tailed_interval(std::vector<double> draws, double level) {
    const std::size_t k = detail::window_size(draws.size(), level);
    std::sort(draws.begin(), draws.end());
    const std::size_t lo = (draws.size() - k) / 2;
    return {draws[lo], draws[lo + k - 1]};
}

struct CoefficientSummary {
    double mean = 0.0; // exact mixture mean
    double sd = 0.0;   // from draws
    Interval hpd;
    Interval equal_tailed;
};

inline std::vector<CoefficientSummary> posterior_summary(const EnsemblePosterior& ens, double level, std::size_t draws,
                                                         SeededRng& rng) {
    if (draws < 1000) throw Error(Errc::InvalidArgument, "posterior_summary", "at least 1000 draws are required");
    const Tensor d = ens.draw(rng, draws);
    const auto mean = ens.mean();
    std::vector<CoefficientSummary> out(ens.dim());
    std::vector<double> col(draws);
    for (std::size_t j = 0; j < ens.dim(); ++j) {
        double m = 0.0, v = 0.0;
        for (std::size_t s = 0; s < draws; ++s) m += (col[s] = d(s, j));
        m /= static_cast<double>(draws);
        for (double x : col) v += (x - m) * (x - m);
        out[j].mean = mean[j];
        out[j].sd = std::sqrt(v / static_cast<double>(draws - 1));
        out[j].hpd = hpd_interval(col, level);
        out[j].equal_tailed = equal_tailed_interval(col, level);
    }
    return out;
}

/// Per-row univariate Gaussian mixtures over the linear predictor.
struct LinearMixture {
    Tensor means;     // N x M
    Tensor variances; // N x M
    Family family = Family::Gaussian;

    std::size_t rows() const { return means.rows(); }
    std::size_t components() const { return means.cols(); }

    double mean(std::size_t i) const {
        double s = 0.0;
        for (std::size_t m = 0; m < components(); ++m) s += means(i, m);
        return s / static_cast<double>(components());
    }

    double variance(std::size_t i) const {
        const double mu = mean(i);
        double s = 0.0;
        for (std::size_t m = 0; m < components(); ++m) s += variances(i, m) + (means(i, m) - mu) * (means(i, m) - mu);
        return s / static_cast<double>(components());
    }

    double draw(std::size_t i, SeededRng& rng) const {
        const std::size_t m = rng.uniform_index(components());
        return means(i, m) + std::sqrt(variances(i, m)) * rng.normal();
    }
};

/// Pairs design m (features of draw m for the test rows) with component m.
inline LinearMixture predictive_linear(const EnsemblePosterior& ens, std::span<const Tensor> designs) {
    if (designs.size() != ens.size())
        throw Error(Errc::DimensionMismatch, "predictive_linear", "one design per component is required");
    const std::size_t n = designs.front().rows();
    LinearMixture mix{Tensor({n, ens.size()}), Tensor({n, ens.size()}), ens.family()};
    for (std::size_t m = 0; m < ens.size(); ++m) {
        const Tensor& a = designs[m];
        if (a.rank() != 2 || a.rows() != n || a.cols() != ens.dim())
            throw Error(Errc::DimensionMismatch, "predictive_linear",
                        "design " + std::to_string(m) + " is " + shape_string(a.shape()) + ", expected " + std::to_string(n) +
                            "x" + std::to_string(ens.dim()));
        const GaussianPosterior& c = ens.component(m);
        for (std::size_t i = 0; i < n; ++i) {
            const std::span<const double> row(&a(i, 0), a.cols());
            mix.means(i, m) = dot(row, c.mean());
            mix.variances(i, m) = c.quadratic_variance(row);
        }
    }
    return mix;
}

/// Pooled residual variance over all draws: sum_m ||A_m b_m - y||^2 / (N M).
inline double sigma_hat_sq(std::span<const std::vector<double>> fitted, std::span<const double> y) {
    if (fitted.empty()) throw Error(Errc::InvalidArgument, "sigma_hat_sq", "no draws");
    double s = 0.0;
    for (const auto& f : fitted) {
        if (f.size() != y.size()) throw Error(Errc::ShapeMismatch, "sigma_hat_sq", "fitted length differs from response");
        for (std::size_t i = 0; i < y.size(); ++i) s += (f[i] - y[i]) * (f[i] - y[i]);
    }
    return s / (static_cast<double>(y.size()) * static_cast<double>(fitted.size()));
}

struct PredictiveSummary {
    Family family = Family::Gaussian;
    double level = 0.95;
    std::vector<double> point; // inverse link of the mixture mean
    std::vector<Interval> hpd;
    std::vector<Interval> equal_tailed;
};

struct ResponseDraws {
    Tensor draws; // N x S responses
    PredictiveSummary summary;
};

/// Predictive responses. Each draw samples the linear-predictor mixture and
/// then the response: Gaussian adds N(0, sigma2) noise; Bernoulli and Poisson
/// draw from the inverse-link mean. Bernoulli intervals describe the success
/// probability, the others the response. Row i uses substream ("row", i).
inline ResponseDraws sample_response(Family family, const LinearMixture& mix, double sigma2, std::size_t count,
                                     const SeededRng& rng, double level = 0.95, std::size_t workers = 1) {
    if (family != mix.family)
        throw Error(Errc::DomainError, "sample_response",
                    "family " + std::string(family_name(family)) + " does not match the fitted " +
                        std::string(family_name(mix.family)) + " model");
    if (family == Family::Gaussian && !(sigma2 >= 0.0))
        throw Error(Errc::DomainError, "sample_response", "residual variance must be nonnegative");
    if (count == 0) throw Error(Errc::InvalidArgument, "sample_response", "at least one draw is required");
    const std::size_t n = mix.rows();
    ResponseDraws r{Tensor({n, count}), {family, level, std::vector<double>(n), std::vector<Interval>(n), std::vector<Interval>(n)}};
    const double noise = std::sqrt(sigma2);
    parallel_for(n, workers, [&](std::size_t i) {
        SeededRng row = rng.substream("row", i);
        std::vector<double> summary(count);
        for (std::size_t s = 0; s < count; ++s) {
            const double eta = mix.draw(i, row);
            switch (family) {
            case Family::Gaussian: r.draws(i, s) = summary[s] = eta + noise * row.normal(); break;
            case Family::Bernoulli:
                summary[s] = inverse_link(family, eta);
                r.draws(i, s) = row.bernoulli(summary[s]) ? 1.0 : 0.0;
                break;
            case Family::Poisson: {
                const double rate = std::exp(eta);
                if (!std::isfinite(rate)) throw Error(Errc::DomainError, "sample_response", "intensity overflow in row " + std::to_string(i));
                r.draws(i, s) = summary[s] = static_cast<double>(row.poisson(rate));
                break;
            }
            }
        }
        r.summary.point[i] = inverse_link(family, mix.mean(i));
        r.summary.hpd[i] = hpd_interval(summary, level);
        r.summary.equal_tailed[i] = equal_tailed_interval(summary, level);
    });
    return r;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline void require_aligned(std::size_t a, std::size_t b, const char* where) {
    if (a != b) throw Error(Errc::ShapeMismatch, where, "lengths differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
    if (a == 0) throw Error(Errc::InvalidArgument, where, "empty input");
}

inline double rmspe(std::span<const double> truth, std::span<const double> prediction) {
    require_aligned(truth.size(), prediction.size(), "rmspe");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) s += (truth[i] - prediction[i]) * (truth[i] - prediction[i]);
    return std::sqrt(s / static_cast<double>(truth.size()));
}

inline double coverage(std::span<const double> truth, std::span<const Interval> intervals) {
    require_aligned(truth.size(), intervals.size(), "coverage");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += intervals[i].contains(truth[i]);
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

struct BinaryMetrics {
    double accuracy = 0.0;
    double recall = 0.0;    // NaN without positive cases
    double precision = 0.0; // NaN without predicted positives
};

/// Classifies probability >= threshold as positive.
inline BinaryMetrics binary_metrics(std::span<const double> truth, std::span<const double> probability, double threshold = 0.5) {
    require_aligned(truth.size(), probability.size(), "binary_metrics");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool pred = probability[i] >= threshold, pos = truth[i] == 1.0;
        (pred ? (pos ? tp : fp) : (pos ? fn : tn))++;
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    BinaryMetrics m;
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(truth.size());
    m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : nan;
    m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : nan;
    return m;
}

struct RocPoint {
    double false_positive_rate;
    double true_positive_rate;
};

/// Full-resolution ROC: one point per distinct score, tied scores move together.
inline std::vector<RocPoint> roc_curve(std::span<const double> truth, std::span<const double> score) {
    require_aligned(truth.size(), score.size(), "roc_curve");
    std::vector<std::size_t> order(truth.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    double pos = 0, neg = 0;
    for (double t : truth) (t == 1.0 ? pos : neg) += 1.0;
    if (pos == 0 || neg == 0) throw Error(Errc::InvalidArgument, "roc_curve", "both classes are required");
    std::vector<RocPoint> curve{{0.0, 0.0}};
    double tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = score[order[k]];
        for (; k < order.size() && score[order[k]] == s; ++k) (truth[order[k]] == 1.0 ? tp : fp) += 1.0;
        curve.push_back({fp / neg, tp / pos});
    }
    return curve;
}

inline double auc(std::span<const double> truth, std::span<const double> score) {
    const auto c = roc_curve(truth, score);
    double a = 0.0;
    for (std::size_t i = 1; i < c.size(); ++i)
        a += (c[i].false_positive_rate - c[i - 1].false_positive_rate) * 0.5 * (c[i].true_positive_rate + c[i - 1].true_positive_rate);
    return a;
}

struct PcaResult {
    Tensor scores;                  // N x 2
    std::vector<double> explained;  // variance ratios of the two components
    Tensor loadings;                // k x 2
};

/// First two principal components of the column-centred matrix.
inline PcaResult pca_scores(const Tensor& x) {
    if (x.rank() != 2 || x.rows() <= 2 || x.cols() < 2)
        throw Error(Errc::InvalidArgument, "pca_scores", "need more than 2 rows and at least 2 columns");
    const std::size_t n = x.rows(), k = x.cols();
    Tensor c = x;
    for (std::size_t j = 0; j < k; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += c(i, j);
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) c(i, j) -= m;
    }
    Tensor cov = gram(c);
    for (double& v : cov.data()) v /= static_cast<double>(n - 1);
    const SymmetricEigen e = symmetric_eigen(cov);
    double total = 0.0;
    for (double v : e.values) total += std::max(v, 0.0);
    PcaResult r{Tensor({n, 2}), {0.0, 0.0}, Tensor({k, 2})};
    for (std::size_t p = 0; p < 2; ++p) {
        r.explained[p] = total > 0.0 ? std::max(e.values[p], 0.0) / total : 0.0;
        for (std::size_t j = 0; j < k; ++j) r.loadings(j, p) = e.vectors(j, p);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += c(i, j) * e.vectors(j, p);
            r.scores(i, p) = s;
        }
    }
    return r;
}

} // namespace bcglm
