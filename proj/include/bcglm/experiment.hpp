#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "bcglm/ensemble.hpp"
#include "bcglm/error.hpp"
#include "bcglm/mc_dropout.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/pipeline.hpp"
#include "bcglm/presets.hpp"
#include "bcglm/rng.hpp"
#include "bcglm/simgen.hpp"
#include "bcglm/tensor.hpp"

namespace bcglm {

enum class Scenario { Gaussian, Binary, Poisson, SimpleNn };

inline std::string_view scenario_name(Scenario s) {
    switch (s) {
    case Scenario::Gaussian: return "gaussian";
    case Scenario::Binary: return "binary";
    case Scenario::Poisson: return "poisson";
    case Scenario::SimpleNn: return "simple-nn";
    }
    return "?";
}

inline Scenario parse_scenario(std::string_view s) {
    if (s == "gaussian") return Scenario::Gaussian;
    if (s == "binary" || s == "bernoulli") return Scenario::Binary;
    if (s == "poisson" || s == "count") return Scenario::Poisson;
    if (s == "simple-nn") return Scenario::SimpleNn;
    throw Error(Errc::ConfigError, "parse_scenario", "unknown family '" + std::string(s) + "'");
}

inline Family scenario_family(Scenario s) {
    switch (s) {
    case Scenario::Binary: return Family::Bernoulli;
    case Scenario::Poisson: return Family::Poisson;
    default: return Family::Gaussian;
    }
}

inline std::string_view quick_preset(Scenario s) {
    switch (s) {
    case Scenario::Gaussian: return presets::kGaussianQuick;
    case Scenario::Binary: return presets::kBinaryQuick;
    case Scenario::Poisson: return presets::kPoissonQuick;
    case Scenario::SimpleNn: return presets::kSimpleNnQuick;
    }
    return presets::kGaussianQuick;
}

/// A dataset split into training and test rows, with the true covariate effects.
struct SplitData {
    Family family = Family::Gaussian;
    Tensor X_train, Z_train, Y_train, X_test, Z_test, Y_test;
    std::vector<double> gamma;
};

namespace detail {

inline Tensor rows(const Tensor& t, std::size_t begin, std::size_t end) {
    Shape s = t.shape();
    s[0] = end - begin;
    Tensor out(s);
    const std::size_t stride = t.row_stride();
    std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
              t.data().begin() + static_cast<std::ptrdiff_t>(end * stride), out.data().begin());
    return out;
}

} // namespace detail

/// First n_train rows train, the rest test.
inline SplitData split_rows(Family family, const Tensor& X, const Tensor& Z, const Tensor& Y, std::size_t n_train,
                            std::vector<double> gamma) {
    const std::size_t n = X.rows();
    if (n_train == 0 || n_train >= n)
        throw Error(Errc::InvalidArgument, "split_rows", "training size must lie strictly between 0 and N");
    return {family,
            detail::rows(X, 0, n_train),
            detail::rows(Z, 0, n_train),
            detail::rows(Y, 0, n_train),
            detail::rows(X, n_train, n),
            detail::rows(Z, n_train, n),
            detail::rows(Y, n_train, n),
            std::move(gamma)};
}

struct ExperimentPlan {
    Scenario scenario = Scenario::Gaussian;
    std::size_t replicates = 1;
    std::size_t n_total = 1000;
    std::size_t n_train = 700;
    nn::NetworkConfig config;
    PipelineOptions options;
    std::uint64_t seed = 1;
};

inline ExperimentPlan default_plan(Scenario s) {
    ExperimentPlan e;
    e.scenario = s;
    if (s == Scenario::SimpleNn) {
        e.n_total = 600;
        e.n_train = 500;
    }
    e.config = nn::parse_config(std::string(quick_preset(s)));
    return e;
}

/// One method's results on one replicate. NaN marks "not applicable".
struct MethodResult {
    std::vector<double> gamma;
    std::vector<double> gamma_covered; // 1, 0 or NaN
    double rmspe = std::numeric_limits<double>::quiet_NaN();
    double coverage = std::numeric_limits<double>::quiet_NaN();
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double recall = std::numeric_limits<double>::quiet_NaN();
    double precision = std::numeric_limits<double>::quiet_NaN();
    double auc = std::numeric_limits<double>::quiet_NaN();
};

struct ReplicateResult {
    std::size_t replicate = 0;
    bool ok = false;
    std::string failure;
    MethodResult bayes, network, glm;
    std::size_t glm_draw_failures = 0;
    std::size_t epochs_run = 0;
    double seconds = 0.0;
};

namespace detail {

inline void score_predictions(MethodResult& r, Family family, const PredictiveSummary& s, const Tensor& Y) {
    const auto y = column_of(Y);
    if (family == Family::Bernoulli) {
        const BinaryMetrics b = binary_metrics(y, s.point);
        r.accuracy = b.accuracy;
        r.recall = b.recall;
        r.precision = b.precision;
        bool both = false;
        for (double v : y) both |= v != y.front();
        if (both) r.auc = auc(y, s.point);
    } else {
        r.rmspe = rmspe(y, s.point);
        r.coverage = coverage(y, s.hpd);
    }
}

} // namespace detail

/// BayesCGLM, network-only and GLM-without-images on one split.
inline ReplicateResult evaluate_split(const SplitData& d, const ExperimentPlan& plan, const SeededRng& rng) {
    ReplicateResult r;
    const auto start = std::chrono::steady_clock::now();
    const Family family = d.family;
    const std::size_t p = d.gamma.size();
    FeatureDraws train_draws, test_draws;
    const BayesCglmModel model =
        fit_bayes_cglm(plan.config, family, d.X_train, d.Z_train, d.Y_train, rng, plan.options, &train_draws);
    r.glm_draw_failures = model.failures.size();
    r.epochs_run = model.network.log.size();

    SeededRng summary_rng = rng.substream("summary");
    const auto coef = posterior_summary(model.posterior(), plan.options.level, plan.options.coefficient_draws, summary_rng);
    for (std::size_t j = 0; j < p; ++j) {
        r.bayes.gamma.push_back(coef[j].mean);
        r.bayes.gamma_covered.push_back(coef[j].hpd.contains(d.gamma[j]) ? 1.0 : 0.0);
    }
    const ResponseDraws pred = predict_bayes_cglm(model, d.X_test, d.Z_test, rng.substream("predict"), plan.options, &test_draws);
    detail::score_predictions(r.bayes, family, pred.summary, d.Y_test);

    // Network alone: covariate weights as point estimates, MC outputs for prediction.
    const Tensor w = model.network.covariate_weights();
    for (std::size_t j = 0; j < p; ++j) {
        r.network.gamma.push_back(w[j]);
        r.network.gamma_covered.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    const ResponseDraws net_pred =
        predict_network_only(family, test_draws, &train_draws, &d.Y_train, rng.substream("network-response"), plan.options);
    detail::score_predictions(r.network, family, net_pred.summary, d.Y_test);

    // GLM on [1, Z].
    const GlmBaseline base = fit_glm_baseline(family, d.Z_train, d.Y_train);
    const GaussianPosterior bp = laplace_posterior(base.fit);
    const auto bsd = bp.sd();
    for (std::size_t j = 0; j < p; ++j) {
        const double mean = base.fit.beta[j + 1], half = 1.959963984540054 * bsd[j + 1];
        r.glm.gamma.push_back(mean);
        r.glm.gamma_covered.push_back(std::fabs(d.gamma[j] - mean) <= half ? 1.0 : 0.0);
    }
    const ResponseDraws glm_pred = predict_glm_baseline(base, d.Z_test, rng.substream("glm-response"), plan.options);
    detail::score_predictions(r.glm, family, glm_pred.summary, d.Y_test);

    r.ok = true;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// Simulated data for replicate r: substream ("data", r) of the experiment seed.
inline SplitData simulate_split(const ExperimentPlan& plan, std::size_t replicate, const GpImageSampler* sampler) {
    const SeededRng data_rng = SeededRng(plan.seed).substream("data", replicate);
    if (plan.scenario == Scenario::SimpleNn) {
        const SimpleNnDataset d = simple_nn_generate(plan.n_total, data_rng);
        return split_rows(Family::Gaussian, d.X, d.Z, d.Y, plan.n_train, {simple_nn::kGamma[0], simple_nn::kGamma[1]});
    }
    if (!sampler) throw Error(Errc::InvalidArgument, "simulate_split", "image scenarios need a GP sampler");
    const Family f = scenario_family(plan.scenario);
    const SimulatedDataset d = simulate_image_dataset(f, plan.n_total, data_rng, *sampler, plan.options.workers);
    return split_rows(f, d.X, d.Z, d.Y, plan.n_train, d.gamma);
}

/// Runs replicates in order; a failing replicate is recorded, not fatal.
/// `progress` (optional) is called after each replicate.
template <class Progress>
std::vector<ReplicateResult> run_experiment(const ExperimentPlan& plan, Progress&& progress) {
    if (plan.replicates == 0) throw Error(Errc::InvalidArgument, "run_experiment", "at least one replicate is required");
    std::unique_ptr<GpImageSampler> sampler;
    if (plan.scenario != Scenario::SimpleNn) sampler = std::make_unique<GpImageSampler>(Lattice{30, 30}, MaternParams{1.0, 0.5, 15.0});
    std::vector<ReplicateResult> out;
    for (std::size_t r = 0; r < plan.replicates; ++r) {
        ReplicateResult res;
        const auto start = std::chrono::steady_clock::now();
        try {
            const SplitData d = simulate_split(plan, r, sampler.get());
            res = evaluate_split(d, plan, SeededRng(plan.seed).substream("fit", r));
        } catch (const Error& e) {
            res.ok = false;
            res.failure = e.what();
            res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
        res.replicate = r;
        out.push_back(std::move(res));
        progress(out.back());
    }
    return out;
}

inline std::vector<ReplicateResult> run_experiment(const ExperimentPlan& plan) {
    return run_experiment(plan, [](const ReplicateResult&) {});
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct MeanSd {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;
};

/// Mean and sample sd over the finite values.
inline MeanSd mean_sd(const std::vector<double>& v) {
    MeanSd m;
    double s = 0.0;
    for (double x : v)
        if (std::isfinite(x)) {
            s += x;
            ++m.count;
        }
    if (m.count == 0) return m;
    m.mean = s / static_cast<double>(m.count);
    if (m.count > 1) {
        double ss = 0.0;
        for (double x : v)
            if (std::isfinite(x)) ss += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(ss / static_cast<double>(m.count - 1));
    }
    return m;
}

struct MethodSummary {
    std::vector<MeanSd> gamma;
    std::vector<MeanSd> gamma_coverage;
    MeanSd rmspe, coverage, accuracy, recall, precision, auc;
};

struct ExperimentSummary {
    Scenario scenario = Scenario::Gaussian;
    std::size_t replicates = 0;
    std::size_t succeeded = 0;
    MethodSummary bayes, network, glm;
    MeanSd seconds;
};

inline MethodSummary summarize_method(const std::vector<const MethodResult*>& rs, std::size_t p) {
    MethodSummary s;
    auto collect = [&](auto get) {
        std::vector<double> v;
        for (const MethodResult* r : rs) v.push_back(get(*r));
        return mean_sd(v);
    };
    for (std::size_t j = 0; j < p; ++j) {
        s.gamma.push_back(collect([j](const MethodResult& r) { return r.gamma[j]; }));
        s.gamma_coverage.push_back(collect([j](const MethodResult& r) { return r.gamma_covered[j]; }));
    }
    s.rmspe = collect([](const MethodResult& r) { return r.rmspe; });
    s.coverage = collect([](const MethodResult& r) { return r.coverage; });
    s.accuracy = collect([](const MethodResult& r) { return r.accuracy; });
    s.recall = collect([](const MethodResult& r) { return r.recall; });
    s.precision = collect([](const MethodResult& r) { return r.precision; });
    s.auc = collect([](const MethodResult& r) { return r.auc; });
    return s;
}

inline ExperimentSummary summarize(Scenario scenario, const std::vector<ReplicateResult>& results) {
    ExperimentSummary s;
    s.scenario = scenario;
    s.replicates = results.size();
    std::vector<const MethodResult*> b, n, g;
    std::vector<double> secs;
    std::size_t p = 0;
    for (const auto& r : results) {
        if (!r.ok) continue;
        ++s.succeeded;
        b.push_back(&r.bayes);
        n.push_back(&r.network);
        g.push_back(&r.glm);
        secs.push_back(r.seconds);
        p = r.bayes.gamma.size();
    }
    s.bayes = summarize_method(b, p);
    s.network = summarize_method(n, p);
    s.glm = summarize_method(g, p);
    s.seconds = mean_sd(secs);
    return s;
}

namespace detail {

inline std::string cell(const MeanSd& m, bool with_sd) {
    if (m.count == 0) return "-";
    char buf[64];
    if (with_sd && std::isfinite(m.sd)) std::snprintf(buf, sizeof buf, "%.3f (%.3f)", m.mean, m.sd);
    else std::snprintf(buf, sizeof buf, "%.3f", m.mean);
    return buf;
}

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

} // namespace detail

/// Text table with one column per method, mirroring the published layout.
inline std::string format_summary(const ExperimentSummary& s) {
    std::ostringstream os;
    const bool binary = s.scenario == Scenario::Binary;
    const std::size_t w = 18;
    os << "scenario " << scenario_name(s.scenario) << ": " << s.succeeded << " of " << s.replicates << " replicates succeeded\n";
    os << detail::pad("", 24) << detail::pad("BayesCGLM", w) << detail::pad("network only", w) << detail::pad("GLM", w) << "\n";
    auto row = [&](const std::string& label, const MeanSd& a, const MeanSd& b, const MeanSd& c, bool sd) {
        os << detail::pad(label, 24) << detail::pad(detail::cell(a, sd), w) << detail::pad(detail::cell(b, sd), w)
           << detail::pad(detail::cell(c, sd), w) << "\n";
    };
    for (std::size_t j = 0; j < s.bayes.gamma.size(); ++j) {
        const std::string g = "gamma_" + std::to_string(j + 1);
        row(g + " mean", s.bayes.gamma[j], s.network.gamma[j], s.glm.gamma[j], true);
        row(g + " coverage", s.bayes.gamma_coverage[j], s.network.gamma_coverage[j], s.glm.gamma_coverage[j], false);
    }
    if (binary) {
        row("accuracy", s.bayes.accuracy, s.network.accuracy, s.glm.accuracy, true);
        row("recall", s.bayes.recall, s.network.recall, s.glm.recall, true);
        row("precision", s.bayes.precision, s.network.precision, s.glm.precision, true);
        row("AUC", s.bayes.auc, s.network.auc, s.glm.auc, true);
    } else {
        row("prediction RMSPE", s.bayes.rmspe, s.network.rmspe, s.glm.rmspe, true);
        row("prediction coverage", s.bayes.coverage, s.network.coverage, s.glm.coverage, false);
    }
    os << detail::pad("seconds per replicate", 24) << detail::cell(s.seconds, true) << "\n";
    return os.str();
}

/// One row per replicate and method; fixed column order.
inline void write_replicates_csv(const std::filesystem::path& path, const std::vector<ReplicateResult>& results) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "write_replicates_csv", "cannot open " + path.string());
    out << "replicate,method,ok,gamma_1,gamma_2,gamma_1_covered,gamma_2_covered,rmspe,coverage,accuracy,recall,precision,auc,"
           "glm_draw_failures,epochs,seconds,failure\n";
    auto g = [](const std::vector<double>& v, std::size_t j) {
        return j < v.size() ? format_double(v[j]) : std::string("nan");
    };
    for (const auto& r : results)
        for (const auto& [name, m] : {std::pair<const char*, const MethodResult*>{"bayescglm", &r.bayes},
                                      {"network", &r.network},
                                      {"glm", &r.glm}}) {
            std::string failure = r.failure;
            for (char& c : failure)
                if (c == ',' || c == '\n') c = ';';
            out << r.replicate << ',' << name << ',' << (r.ok ? 1 : 0) << ',' << g(m->gamma, 0) << ',' << g(m->gamma, 1) << ','
                << g(m->gamma_covered, 0) << ',' << g(m->gamma_covered, 1) << ',' << format_double(m->rmspe) << ','
                << format_double(m->coverage) << ',' << format_double(m->accuracy) << ',' << format_double(m->recall) << ','
                << format_double(m->precision) << ',' << format_double(m->auc) << ',' << r.glm_draw_failures << ','
                << r.epochs_run << ',' << format_double(r.seconds) << ',' << failure << '\n';
        }
}

/// Inverse of write_replicates_csv.
inline std::vector<ReplicateResult> read_replicates_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "read_replicates_csv", "cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("replicate,method,ok,", 0) != 0)
        throw Error(Errc::IoError, "read_replicates_csv", path.string() + " is not a replicate table");
    std::vector<ReplicateResult> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (cells.size() == 16) cells.emplace_back();
        if (cells.size() != 17)
            throw Error(Errc::IoError, "read_replicates_csv", "line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " cells");
        auto num = [&](std::size_t k) {
            try {
                return std::stod(cells[k]);
            } catch (const std::exception&) {
                throw Error(Errc::IoError, "read_replicates_csv", "bad number '" + cells[k] + "' on line " + std::to_string(lineno));
            }
        };
        const auto rep = static_cast<std::size_t>(num(0));
        if (out.empty() || out.back().replicate != rep) {
            out.emplace_back();
            out.back().replicate = rep;
        }
        ReplicateResult& r = out.back();
        MethodResult* m = cells[1] == "bayescglm" ? &r.bayes : cells[1] == "network" ? &r.network : cells[1] == "glm" ? &r.glm : nullptr;
        if (!m) throw Error(Errc::IoError, "read_replicates_csv", "unknown method '" + cells[1] + "'");
        r.ok = num(2) != 0.0;
        m->gamma = {num(3), num(4)};
        m->gamma_covered = {num(5), num(6)};
        m->rmspe = num(7);
        m->coverage = num(8);
        m->accuracy = num(9);
        m->recall = num(10);
        m->precision = num(11);
        m->auc = num(12);
        r.glm_draw_failures = static_cast<std::size_t>(num(13));
        r.epochs_run = static_cast<std::size_t>(num(14));
        r.seconds = num(15);
        r.failure = cells[16];
    }
    return out;
}

/// Long format: metric, then mean and sd for each method.
inline void write_summary_csv(const std::filesystem::path& path, const ExperimentSummary& s) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "write_summary_csv", "cannot open " + path.string());
    out << "metric,bayescglm_mean,bayescglm_sd,network_mean,network_sd,glm_mean,glm_sd\n";
    auto row = [&](const std::string& name, const MeanSd& a, const MeanSd& b, const MeanSd& c) {
        out << name;
        for (const MeanSd* m : {&a, &b, &c}) out << ',' << format_double(m->mean) << ',' << format_double(m->sd);
        out << '\n';
    };
    for (std::size_t j = 0; j < s.bayes.gamma.size(); ++j) {
        const std::string g = "gamma_" + std::to_string(j + 1);
        row(g, s.bayes.gamma[j], s.network.gamma[j], s.glm.gamma[j]);
        row(g + "_coverage", s.bayes.gamma_coverage[j], s.network.gamma_coverage[j], s.glm.gamma_coverage[j]);
    }
    row("rmspe", s.bayes.rmspe, s.network.rmspe, s.glm.rmspe);
    row("prediction_coverage", s.bayes.coverage, s.network.coverage, s.glm.coverage);
    row("accuracy", s.bayes.accuracy, s.network.accuracy, s.glm.accuracy);
    row("recall", s.bayes.recall, s.network.recall, s.glm.recall);
    row("precision", s.bayes.precision, s.network.precision, s.glm.precision);
    row("auc", s.bayes.auc, s.network.auc, s.glm.auc);
}

} // namespace bcglm
