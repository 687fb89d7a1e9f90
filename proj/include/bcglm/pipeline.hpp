#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcglm/ensemble.hpp"
#include "bcglm/error.hpp"
#include "bcglm/glm.hpp"
#include "bcglm/mc_dropout.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/nn/serialize.hpp"
#include "bcglm/nn/train.hpp"
#include "bcglm/parallel.hpp"
#include "bcglm/rng.hpp"
#include "bcglm/tensor.hpp"
#include "bcglm/tensor_io.hpp"

namespace bcglm {

struct PipelineOptions {
    std::size_t draws = 50; // M
    std::size_t workers = 1;
    double level = 0.95;
    std::size_t response_draws = 2000;     // per predicted row
    std::size_t coefficient_draws = 10000; // for coefficient intervals
    double max_failure_fraction = 0.10;
};

inline nn::LossKind loss_for(Family f) {
    switch (f) {
    case Family::Gaussian: return nn::LossKind::MSE;
    case Family::Bernoulli: return nn::LossKind::BCE;
    case Family::Poisson: return nn::LossKind::Poisson;
    }
    return nn::LossKind::MSE;
}

inline void require_matching_loss(const nn::NetworkConfig& cfg, Family f) {
    if (cfg.loss != loss_for(f))
        throw Error(Errc::ConfigError, "pipeline",
                    "config loss '" + std::string(nn::loss_name(cfg.loss)) + "' does not match the " + std::string(family_name(f)) +
                        " family (expected '" + std::string(nn::loss_name(loss_for(f))) + "')");
}

/// [Z, features]: covariates first, so the leading coefficients are the
/// covariate effects.
inline Tensor covariate_design(const Tensor& Z, const Tensor& features) {
    const std::size_t n = features.rows(), p = Z.empty() ? 0 : Z.row_stride(), k = features.cols();
    if (p > 0 && Z.rows() != n) throw Error(Errc::ShapeMismatch, "covariate_design", "covariate and feature rows differ");
    Tensor a({n, p + k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) a(i, j) = Z[i * p + j];
        for (std::size_t j = 0; j < k; ++j) a(i, p + j) = features(i, j);
    }
    return a;
}

inline std::vector<double> column_of(const Tensor& t, std::size_t j = 0) {
    std::vector<double> c(t.rows());
    const std::size_t stride = t.row_stride();
    for (std::size_t i = 0; i < t.rows(); ++i) c[i] = t[i * stride + j];
    return c;
}

struct BayesCglmModel {
    Family family = Family::Gaussian;
    nn::TrainedNetwork network;
    std::size_t covariates = 0;
    std::size_t total_draws = 0;           // M requested
    std::vector<std::size_t> kept;         // MC draw index of each component
    std::vector<std::string> failures;     // one line per dropped draw
    std::vector<GaussianPosterior> components;
    double sigma2 = std::numeric_limits<double>::quiet_NaN(); // Gaussian only
    std::uint64_t seed = 0;

    EnsemblePosterior posterior() const { return EnsemblePosterior(components, family); }
};

namespace detail {

inline void record_failure(std::vector<std::string>& failures, std::size_t m, const std::string& what) {
    failures.push_back("draw " + std::to_string(m) + ": " + what);
}

} // namespace detail

/// Train the network, draw M feature sets by MC dropout, fit one GLM per draw
/// on [Z, features] and keep the Laplace approximations. Draws whose GLM fit
/// fails are dropped and listed; more than max_failure_fraction of them is an
/// error. Substreams: "train", "mc-train". `draws_out` receives the training
/// feature draws when given.
inline BayesCglmModel fit_bayes_cglm(const nn::NetworkConfig& cfg, Family family, const Tensor& X, const Tensor& Z,
                                     const Tensor& Y, const SeededRng& rng, const PipelineOptions& opt,
                                     FeatureDraws* draws_out = nullptr) {
    require_matching_loss(cfg, family);
    if (opt.draws == 0) throw Error(Errc::InvalidArgument, "fit_bayes_cglm", "at least one MC draw is required");
    BayesCglmModel model;
    model.family = family;
    model.covariates = cfg.covariates;
    model.total_draws = opt.draws;
    model.seed = rng.seed();
    model.network = nn::train(cfg, X, Z, Y, rng.substream("train"));

    const FeatureDraws draws = mc_features(model.network, X, Z, opt.draws, rng.substream("mc-train"), opt.workers);
    const std::vector<double> y = column_of(Y);
    std::vector<std::optional<GlmFit>> fits(opt.draws);
    std::vector<std::string> errors(opt.draws);
    parallel_for(opt.draws, opt.workers, [&](std::size_t m) {
        try {
            fits[m] = irls_fit(GlmDataset{covariate_design(Z, draws.features[m]), y, family});
        } catch (const Error& e) {
            errors[m] = e.what();
        }
    });

    std::vector<std::vector<double>> fitted;
    for (std::size_t m = 0; m < opt.draws; ++m) {
        if (!fits[m]) {
            detail::record_failure(model.failures, m, errors[m]);
            continue;
        }
        try {
            model.components.push_back(laplace_posterior(*fits[m]));
        } catch (const Error& e) {
            detail::record_failure(model.failures, m, e.what());
            continue;
        }
        model.kept.push_back(m);
        if (family == Family::Gaussian) fitted.push_back(linear_predictor(covariate_design(Z, draws.features[m]), fits[m]->beta));
    }
    const double failed = static_cast<double>(model.failures.size());
    if (model.components.empty() || failed > opt.max_failure_fraction * static_cast<double>(opt.draws))
        throw Error(Errc::TooManyFailures, "fit_bayes_cglm",
                    std::to_string(model.failures.size()) + " of " + std::to_string(opt.draws) +
                        " GLM draws failed (limit " + std::to_string(opt.max_failure_fraction) + ")" +
                        (model.failures.empty() ? "" : "; first: " + model.failures.front()));
    if (family == Family::Gaussian) model.sigma2 = sigma_hat_sq(fitted, y);
    if (draws_out) *draws_out = draws;
    return model;
}

/// Predictive distribution for new rows. Draw m of the new rows' features is
/// paired with the component fitted on training draw m. Substreams:
/// "mc-predict" for masks, "response" for predictive draws.
inline ResponseDraws predict_bayes_cglm(const BayesCglmModel& model, const Tensor& X, const Tensor& Z, const SeededRng& rng,
                                        const PipelineOptions& opt, FeatureDraws* draws_out = nullptr) {
    const FeatureDraws draws = mc_features(model.network, X, Z, model.total_draws, rng.substream("mc-predict"), opt.workers);
    if (draws_out) *draws_out = draws;
    std::vector<Tensor> designs;
    for (std::size_t m : model.kept) designs.push_back(covariate_design(Z, draws.features[m]));
    const LinearMixture mix = predictive_linear(model.posterior(), designs);
    return sample_response(model.family, mix, model.family == Family::Gaussian ? model.sigma2 : 0.0, opt.response_draws,
                           rng.substream("response"), opt.level, opt.workers);
}

inline std::vector<std::string> coefficient_names(std::size_t covariates, std::size_t total) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < total; ++j)
        names.push_back(j < covariates ? "gamma_" + std::to_string(j + 1) : "feature_" + std::to_string(j - covariates + 1));
    return names;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_model(const BayesCglmModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "ensemble");
    nn::save_network(model.network, dir / "network");
    for (std::size_t c = 0; c < model.components.size(); ++c) {
        const auto stem = "component_" + std::to_string(c);
        write_tensor(dir / "ensemble" / (stem + "_mean.bct"), Tensor::vector(model.components[c].mean()));
        write_tensor(dir / "ensemble" / (stem + "_precision.bct"), model.components[c].precision());
    }
    std::ofstream m(dir / "model.txt", std::ios::trunc);
    m << "format bcglm-model-1\nfamily " << family_name(model.family) << "\ncovariates " << model.covariates << "\ndraws "
      << model.total_draws << "\nseed " << model.seed << "\nsigma2 " << format_double(model.sigma2) << "\nkept";
    for (std::size_t k : model.kept) m << ' ' << k;
    m << "\n";
    for (const auto& f : model.failures) m << "failure " << f << "\n";
    if (!m) throw Error(Errc::IoError, "save_model", "cannot write " + (dir / "model.txt").string());
}

inline BayesCglmModel load_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.txt");
    if (!in) throw Error(Errc::IoError, "load_model", "no model.txt in " + dir.string());
    BayesCglmModel model;
    std::string line, format;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format") ls >> format;
        else if (key == "family") {
            std::string f;
            ls >> f;
            model.family = parse_family(f);
        } else if (key == "covariates") ls >> model.covariates;
        else if (key == "draws") ls >> model.total_draws;
        else if (key == "seed") ls >> model.seed;
        else if (key == "sigma2") {
            std::string v;
            ls >> v;
            model.sigma2 = v == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(v);
        } else if (key == "kept") {
            for (std::size_t k; ls >> k;) model.kept.push_back(k);
        } else if (key == "failure") {
            std::string rest;
            std::getline(ls >> std::ws, rest);
            model.failures.push_back(rest);
        }
    }
    if (format != "bcglm-model-1" || model.kept.empty())
        throw Error(Errc::IoError, "load_model", "unrecognized or empty model in " + dir.string());
    model.network = nn::load_network(dir / "network");
    for (std::size_t c = 0; c < model.kept.size(); ++c) {
        if (model.kept[c] >= model.total_draws) throw Error(Errc::IoError, "load_model", "kept draw index out of range");
        const auto stem = "component_" + std::to_string(c);
        const Tensor mean = read_tensor(dir / "ensemble" / (stem + "_mean.bct"));
        model.components.push_back(
            laplace_posterior(std::vector<double>(mean.data().begin(), mean.data().end()), read_tensor(dir / "ensemble" / (stem + "_precision.bct"))));
    }
    return model;
}

/// Per-coefficient mean, sd and both interval types.
inline void write_coefficient_csv(const std::filesystem::path& path, const std::vector<CoefficientSummary>& s,
                                  std::size_t covariates) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "write_coefficient_csv", "cannot open " + path.string());
    const auto names = coefficient_names(covariates, s.size());
    out << "coefficient,mean,sd,hpd_lower,hpd_upper,et_lower,et_upper\n";
    for (std::size_t j = 0; j < s.size(); ++j)
        out << names[j] << ',' << format_double(s[j].mean) << ',' << format_double(s[j].sd) << ',' << format_double(s[j].hpd.lower)
            << ',' << format_double(s[j].hpd.upper) << ',' << format_double(s[j].equal_tailed.lower) << ','
            << format_double(s[j].equal_tailed.upper) << '\n';
}

/// Per-row point prediction and intervals; binary rows add the class at 0.5.
inline void write_prediction_csv(const std::filesystem::path& path, const PredictiveSummary& s,
                                 const std::vector<double>* truth = nullptr) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "write_prediction_csv", "cannot open " + path.string());
    const bool binary = s.family == Family::Bernoulli;
    out << "row," << (binary ? "probability,class" : "prediction") << ",hpd_lower,hpd_upper,et_lower,et_upper"
        << (truth ? ",truth" : "") << '\n';
    for (std::size_t i = 0; i < s.point.size(); ++i) {
        out << i << ',' << format_double(s.point[i]);
        if (binary) out << ',' << (s.point[i] >= 0.5 ? 1 : 0);
        out << ',' << format_double(s.hpd[i].lower) << ',' << format_double(s.hpd[i].upper) << ','
            << format_double(s.equal_tailed[i].lower) << ',' << format_double(s.equal_tailed[i].upper);
        if (truth) out << ',' << format_double((*truth)[i]);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// GLM on [1, Z] without images.
struct GlmBaseline {
    Family family = Family::Gaussian;
    GlmFit fit;
    double sigma2 = 0.0;
};

inline Tensor intercept_design(const Tensor& Z) {
    const std::size_t n = Z.rows(), p = Z.row_stride();
    Tensor a({n, p + 1});
    for (std::size_t i = 0; i < n; ++i) {
        a(i, 0) = 1.0;
        for (std::size_t j = 0; j < p; ++j) a(i, j + 1) = Z[i * p + j];
    }
    return a;
}

inline GlmBaseline fit_glm_baseline(Family family, const Tensor& Z, const Tensor& Y) {
    GlmBaseline b;
    b.family = family;
    b.fit = irls_fit(GlmDataset{intercept_design(Z), column_of(Y), family});
    if (family == Family::Gaussian) b.sigma2 = b.fit.dispersion;
    return b;
}

inline ResponseDraws predict_glm_baseline(const GlmBaseline& b, const Tensor& Z, const SeededRng& rng, const PipelineOptions& opt) {
    const EnsemblePosterior post({laplace_posterior(b.fit)}, b.family);
    const std::vector<Tensor> designs{intercept_design(Z)};
    return sample_response(b.family, predictive_linear(post, designs), b.sigma2, opt.response_draws, rng, opt.level, opt.workers);
}

/// Network-only predictions: MC-averaged outputs as the point estimate,
/// intervals from output draws plus response noise (Gaussian noise variance
/// from the training residuals of the output draws).
inline ResponseDraws predict_network_only(Family family, const FeatureDraws& test, const FeatureDraws* train, const Tensor* Ytrain,
                                          const SeededRng& rng, const PipelineOptions& opt) {
    const std::size_t n = test.rows(), M = test.count();
    LinearMixture mix{Tensor({n, M}), Tensor({n, M}, 0.0), family};
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t i = 0; i < n; ++i) {
            const double out = test.outputs[m][i];
            switch (family) {
            case Family::Gaussian: mix.means(i, m) = out; break;
            case Family::Bernoulli: {
                const double p = std::clamp(out, 1e-12, 1.0 - 1e-12);
                mix.means(i, m) = std::log(p / (1.0 - p));
                break;
            }
            case Family::Poisson: mix.means(i, m) = std::log(std::max(out, 1e-300)); break;
            }
        }
    double sigma2 = 0.0;
    if (family == Family::Gaussian) {
        if (!train || !Ytrain) throw Error(Errc::InvalidArgument, "predict_network_only", "Gaussian noise needs training draws");
        std::vector<std::vector<double>> fitted;
        for (const Tensor& o : train->outputs) fitted.push_back(column_of(o));
        sigma2 = sigma_hat_sq(fitted, column_of(*Ytrain));
    }
    ResponseDraws r = sample_response(family, mix, sigma2, opt.response_draws, rng, opt.level, opt.workers);
    // Point prediction: average of the output draws on the response scale.
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t m = 0; m < M; ++m) s += test.outputs[m][i];
        r.summary.point[i] = s / static_cast<double>(M);
    }
    return r;
}

} // namespace bcglm
