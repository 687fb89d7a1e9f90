#pragma once

// Command-line front end. Everything lives in run_cli so tests can drive the
// tool in-process; tools/bcglm.cpp only forwards argv.
//
// Exit codes:
//   0  success
//   1  any other failure (I/O, numerical)
//   2  invalid flags or configuration
//   3  data generation failed (simulate)
//   4  training produced a non-finite loss (fit)
//   5  too many per-draw GLM fits failed (fit)
//   6  prediction input is empty or does not match the model (predict)

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcglm/ensemble.hpp"
#include "bcglm/error.hpp"
#include "bcglm/experiment.hpp"
#include "bcglm/mc_dropout.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/pipeline.hpp"
#include "bcglm/presets.hpp"
#include "bcglm/simgen.hpp"
#include "bcglm/tensor_io.hpp"

namespace bcglm::cli {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kBadFlags = 2,
    kGenerationFailed = 3,
    kNonFiniteLoss = 4,
    kTooManyFailures = 5,
    kBadPredictInput = 6,
};

/// Everything needed to rerun a command: the full argument list plus the
/// resolved settings, and a copy of the network config next to it.
struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    std::uint64_t seed = 0;
    std::string config;
    std::vector<std::string> data;
    std::size_t draws = 0;
    std::string family;
    std::size_t n_total = 0;
    std::size_t n_train = 0;
    std::size_t replicates = 0;
    std::string out;
    std::string version = kToolVersion;
};

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    out << "tool bcglm " << m.version << "\ncommand " << m.command << "\nargs";
    for (const auto& a : m.args) out << ' ' << a;
    out << "\nseed " << m.seed << "\nfamily " << m.family;
    if (!m.config.empty()) out << "\nconfig " << m.config;
    for (const auto& d : m.data) out << "\ndata " << d;
    if (m.draws) out << "\ndraws " << m.draws;
    if (m.n_total) out << "\nn_total " << m.n_total;
    if (m.n_train) out << "\nn_train " << m.n_train;
    if (m.replicates) out << "\nreplicates " << m.replicates;
    out << "\nout " << m.out << "\n";
    if (!out) throw Error(Errc::IoError, "write_manifest", "cannot write manifest in " + dir.string());
}

/// Reads "key value" lines; repeated keys keep the last value.
inline std::string manifest_value(const std::filesystem::path& dir, const std::string& key) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw Error(Errc::IoError, "manifest_value", "no manifest.txt in " + dir.string());
    std::string line, value;
    while (std::getline(in, line))
        if (line.rfind(key + " ", 0) == 0) value = line.substr(key.size() + 1);
    if (value.empty()) throw Error(Errc::IoError, "manifest_value", "manifest in " + dir.string() + " has no '" + key + "'");
    return value;
}

namespace detail {

inline Family family_of_loss(nn::LossKind k) {
    switch (k) {
    case nn::LossKind::BCE: return Family::Bernoulli;
    case nn::LossKind::Poisson: return Family::Poisson;
    default: return Family::Gaussian;
    }
}

/// A preset name or a config file path.
inline nn::NetworkConfig resolve_config(const std::string& name) {
    for (std::string_view p : presets::kNames)
        if (p == name) return nn::parse_config(std::string(presets::lookup(name)));
    if (!std::filesystem::exists(name))
        throw Error(Errc::ConfigError, "config", "'" + name + "' is neither a preset nor an existing file");
    return nn::load_config(name);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw Error(Errc::IoError, "write_text", "cannot write " + path.string());
}

inline Tensor as_column(const Tensor& y) { return y.rank() == 2 ? y : y.reshaped({y.rows(), 1}); }

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Data {
    Tensor X, Z;
    std::optional<Tensor> Y;
};

inline Data read_data(const std::filesystem::path& dir, bool need_y) {
    Data d{read_tensor(dir / "X.bct"), read_tensor(dir / "Z.bct"), std::nullopt};
    if (need_y || std::filesystem::exists(dir / "Y.bct")) d.Y = as_column(read_tensor(dir / "Y.bct"));
    if (d.Z.rows() != d.X.rows() || (d.Y && d.Y->rows() != d.X.rows()))
        throw Error(Errc::ShapeMismatch, "read_data",
                    "row counts differ: X " + shape_string(d.X.shape()) + ", Z " + shape_string(d.Z.shape()) +
                        (d.Y ? ", Y " + shape_string(d.Y->shape()) : std::string()));
    return d;
}

inline std::vector<std::size_t> all_rows(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> r;
    for (std::size_t i = begin; i < end; ++i) r.push_back(i);
    return r;
}

inline int report_error(std::ostream& err, const std::string& command, const Error& e, int code) {
    err << "bcglm " << command << ": " << e.what() << " [" << errc_name(e.code()) << ", exit " << code << "]\n";
    return code;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct SimulateFlags {
    std::string family;
    std::size_t n = 0; // 0: scenario default
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::string out;
};

inline int cmd_simulate(const SimulateFlags& f, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    const Scenario s = parse_scenario(f.family);
    const std::size_t n = f.n ? f.n : (s == Scenario::SimpleNn ? 600 : 1000);
    const std::filesystem::path dir(f.out);
    try {
        const SeededRng rng(f.seed);
        std::filesystem::create_directories(dir);
        if (s == Scenario::SimpleNn) {
            const SimpleNnDataset d = simple_nn_generate(n, rng);
            write_tensor(dir / "X.bct", d.X);
            write_tensor(dir / "Z.bct", d.Z);
            write_tensor(dir / "Y.bct", d.Y.reshaped({n}));
            write_tensor(dir / "mu.bct", Tensor::vector(d.mu));
        } else {
            const GpImageSampler sampler(Lattice{30, 30}, MaternParams{1.0, 0.5, 15.0});
            const SimulatedDataset d = simulate_image_dataset(scenario_family(s), n, rng, sampler, f.workers);
            write_tensor(dir / "X.bct", d.X);
            write_tensor(dir / "Z.bct", d.Z);
            write_tensor(dir / "Y.bct", d.Y.reshaped({n}));
            write_tensor(dir / "phi.bct", d.phi);
        }
    } catch (const Error& e) {
        return detail::report_error(err, "simulate", e, kGenerationFailed);
    } catch (const std::exception& e) {
        err << "bcglm simulate: " << e.what() << " [exit " << kGenerationFailed << "]\n";
        return kGenerationFailed;
    }
    RunManifest m;
    m.command = "simulate";
    m.args = args;
    m.seed = f.seed;
    m.family = std::string(scenario_name(s));
    m.n_total = n;
    m.out = f.out;
    write_manifest(dir, m);
    out << "simulated " << n << " " << scenario_name(s) << " rows into " << dir.string() << "\n";
    return kOk;
}

struct FitFlags {
    std::string config;
    std::string family;
    std::string data;
    std::size_t draws = 50;
    std::uint64_t seed = 1;
    std::optional<double> dropout;
    std::size_t workers = 1;
    std::size_t n_train = 0; // 0: all rows
    double level = 0.95;
    std::size_t coefficient_draws = 10000;
    std::string out;
};

inline int cmd_fit(const FitFlags& f, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    nn::NetworkConfig cfg;
    Family family;
    try {
        cfg = detail::resolve_config(f.config);
        if (f.dropout) cfg = nn::with_dropout_rate(cfg, *f.dropout);
        family = f.family.empty() ? detail::family_of_loss(cfg.loss) : scenario_family(parse_scenario(f.family));
        require_matching_loss(cfg, family);
    } catch (const Error& e) {
        return detail::report_error(err, "fit", e, kBadFlags);
    }

    detail::Data d = detail::read_data(f.data, true);
    const std::size_t total_rows = d.X.rows();
    if (f.n_train) {
        if (f.n_train > d.X.rows())
            return detail::report_error(err, "fit", Error(Errc::InvalidArgument, "fit", "--n-train exceeds the data rows"), kBadFlags);
        const auto idx = detail::all_rows(0, f.n_train);
        d.X = d.X.gather_rows(idx);
        d.Z = d.Z.gather_rows(idx);
        d.Y = d.Y->gather_rows(idx);
    }

    PipelineOptions opt;
    opt.draws = f.draws;
    opt.workers = f.workers;
    opt.level = f.level;
    opt.coefficient_draws = f.coefficient_draws;
    const SeededRng rng(f.seed);
    BayesCglmModel model;
    FeatureDraws draws;
    try {
        model = fit_bayes_cglm(cfg, family, d.X, d.Z, *d.Y, rng, opt, &draws);
    } catch (const Error& e) {
        const int code = e.code() == Errc::NonFiniteLoss    ? kNonFiniteLoss
                         : e.code() == Errc::TooManyFailures ? kTooManyFailures
                         : e.code() == Errc::ShapeMismatch   ? kBadFlags
                                                             : kFailure;
        return detail::report_error(err, "fit", e, code);
    }

    const std::filesystem::path dir(f.out);
    std::filesystem::create_directories(dir);
    save_model(model, dir / "model");
    save_feature_draws(draws, dir / "features");
    detail::write_text(dir / "config.cfg", nn::config_to_string(cfg));

    SeededRng summary_rng = rng.substream("summary");
    const auto coef = posterior_summary(model.posterior(), opt.level, opt.coefficient_draws, summary_rng);
    write_coefficient_csv(dir / "coefficients.csv", coef, model.covariates);

    {
        std::ofstream log(dir / "training_log.csv", std::ios::trunc);
        log << "epoch,train_loss,validation_loss\n";
        for (const auto& r : model.network.log)
            log << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.validation_loss) << '\n';
    }

    std::ostringstream rep;
    rep << "family " << family_name(family) << "\nrows " << d.X.rows() << "\nepochs_run " << model.network.log.size()
        << "\nbest_epoch " << model.network.best_epoch << "\ndraws " << model.total_draws << "\ncomponents "
        << model.components.size() << "\nglm_failures " << model.failures.size() << "\n";
    if (family == Family::Gaussian) rep << "sigma2 " << format_double(model.sigma2) << "\n";
    for (const auto& fl : model.failures) rep << "failure " << fl << "\n";
    rep << "\n" << detail::read_text(dir / "coefficients.csv");
    detail::write_text(dir / "report.txt", rep.str());

    RunManifest m;
    m.command = "fit";
    m.args = args;
    m.seed = f.seed;
    m.config = f.config;
    m.data = {f.data};
    m.draws = f.draws;
    m.family = std::string(family_name(family));
    m.n_total = total_rows;
    m.n_train = d.X.rows();
    m.out = f.out;
    write_manifest(dir, m);

    out << "fitted " << model.components.size() << " of " << model.total_draws << " GLM draws (" << model.failures.size()
        << " dropped); report in " << (dir / "report.txt").string() << "\n";
    for (std::size_t j = 0; j < model.covariates && j < coef.size(); ++j)
        out << "gamma_" << j + 1 << " mean " << format_double(coef[j].mean) << " hpd [" << format_double(coef[j].hpd.lower) << ", "
            << format_double(coef[j].hpd.upper) << "]\n";
    return kOk;
}

struct PredictFlags {
    std::string model;
    std::string data;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::size_t response_draws = 2000;
    double level = 0.95;
    std::string out;
};

inline int cmd_predict(const PredictFlags& f, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::filesystem::path model_dir(f.model);
    if (std::filesystem::exists(model_dir / "model" / "model.txt")) model_dir /= "model";
    const BayesCglmModel model = load_model(model_dir);

    detail::Data d;
    try {
        d = detail::read_data(f.data, false);
        const auto& net = model.network.network;
        if (d.X.row_stride() != net.input_size() || d.Z.rank() != 2 || d.Z.cols() != model.covariates)
            throw Error(Errc::ShapeMismatch, "predict",
                        "model expects rows of " + std::to_string(net.input_size()) + " inputs and " +
                            std::to_string(model.covariates) + " covariates, got X " + shape_string(d.X.shape()) + " and Z " +
                            shape_string(d.Z.shape()));
    } catch (const Error& e) {
        return detail::report_error(err, "predict", e, kBadPredictInput);
    }

    PipelineOptions opt;
    opt.workers = f.workers;
    opt.response_draws = f.response_draws;
    opt.level = f.level;
    const ResponseDraws pred = predict_bayes_cglm(model, d.X, d.Z, SeededRng(f.seed), opt);

    const std::filesystem::path dir(f.out);
    std::filesystem::create_directories(dir);
    std::optional<std::vector<double>> truth;
    if (d.Y) truth = column_of(*d.Y);
    write_prediction_csv(dir / "predictions.csv", pred.summary, truth ? &*truth : nullptr);

    RunManifest m;
    m.command = "predict";
    m.args = args;
    m.seed = f.seed;
    m.data = {f.model, f.data};
    m.draws = model.total_draws;
    m.family = std::string(family_name(model.family));
    m.n_total = d.X.rows();
    m.out = f.out;
    write_manifest(dir, m);

    out << "predicted " << d.X.rows() << " rows into " << (dir / "predictions.csv").string() << "\n";
    if (truth) {
        if (model.family == Family::Bernoulli) {
            const BinaryMetrics b = binary_metrics(*truth, pred.summary.point);
            out << "accuracy " << format_double(b.accuracy) << "\n";
        } else {
            out << "rmspe " << format_double(rmspe(*truth, pred.summary.point)) << "\ncoverage "
                << format_double(coverage(*truth, pred.summary.hpd)) << "\n";
        }
    }
    return kOk;
}

struct ExperimentFlags {
    std::string family;
    std::size_t replicates = 1;
    std::size_t n = 0;       // 0: scenario default
    std::size_t n_train = 0; // 0: scenario default
    std::size_t draws = 50;
    std::uint64_t seed = 1;
    std::string config; // empty: quick preset of the family
    std::optional<double> dropout;
    std::size_t workers = 1;
    std::string out;
};

inline int cmd_experiment(const ExperimentFlags& f, const std::vector<std::string>& args, std::ostream& out,
                          std::ostream& err) {
    const Scenario s = parse_scenario(f.family);
    ExperimentPlan plan = default_plan(s);
    try {
        if (!f.config.empty()) plan.config = detail::resolve_config(f.config);
        if (f.dropout) plan.config = nn::with_dropout_rate(plan.config, *f.dropout);
        require_matching_loss(plan.config, scenario_family(s));
        if (f.n) plan.n_total = f.n;
        if (f.n_train) plan.n_train = f.n_train;
        else if (f.n) plan.n_train = static_cast<std::size_t>(0.7 * static_cast<double>(f.n));
        if (plan.n_train == 0 || plan.n_train >= plan.n_total)
            throw Error(Errc::ConfigError, "experiment", "training size must lie strictly between 0 and N");
    } catch (const Error& e) {
        return detail::report_error(err, "experiment", e, kBadFlags);
    }
    plan.replicates = f.replicates;
    plan.seed = f.seed;
    plan.options.draws = f.draws;
    plan.options.workers = f.workers;

    const auto results = run_experiment(plan, [&](const ReplicateResult& r) {
        err << "replicate " << r.replicate + 1 << "/" << plan.replicates << (r.ok ? " ok" : " FAILED: " + r.failure) << "\n";
    });
    const ExperimentSummary summary = summarize(s, results);
    const std::string table = format_summary(summary);
    out << table;

    if (!f.out.empty()) {
        const std::filesystem::path dir(f.out);
        std::filesystem::create_directories(dir);
        write_replicates_csv(dir / "replicates.csv", results);
        write_summary_csv(dir / "summary.csv", summary);
        detail::write_text(dir / "summary.txt", table);
        detail::write_text(dir / "config.cfg", nn::config_to_string(plan.config));
        RunManifest m;
        m.command = "experiment";
        m.args = args;
        m.seed = f.seed;
        m.config = f.config.empty() ? std::string(scenario_name(s)) + "-quick" : f.config;
        m.draws = f.draws;
        m.family = std::string(scenario_name(s));
        m.n_total = plan.n_total;
        m.n_train = plan.n_train;
        m.replicates = plan.replicates;
        m.out = f.out;
        write_manifest(dir, m);
    }
    return summary.succeeded > 0 ? kOk : kFailure;
}

/// Re-renders the summary of an experiment directory, or prints the report
/// of a fit directory.
inline int cmd_report(const std::string& in_dir, std::ostream& out, std::ostream&) {
    const std::filesystem::path dir(in_dir);
    if (std::filesystem::exists(dir / "replicates.csv")) {
        const Scenario s = parse_scenario(manifest_value(dir, "family"));
        const ExperimentSummary summary = summarize(s, read_replicates_csv(dir / "replicates.csv"));
        const std::string table = format_summary(summary);
        detail::write_text(dir / "summary.txt", table);
        write_summary_csv(dir / "summary.csv", summary);
        out << table;
        return kOk;
    }
    if (std::filesystem::exists(dir / "report.txt")) {
        out << detail::read_text(dir / "report.txt");
        return kOk;
    }
    throw Error(Errc::IoError, "report", dir.string() + " holds neither replicates.csv nor report.txt");
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Bayesian convolutional GLM: simulate, fit, predict and run experiments", "bcglm"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    const auto families = CLI::IsMember({"gaussian", "binary", "poisson", "simple-nn"});

    SimulateFlags sim;
    auto* c_sim = app.add_subcommand("simulate", "generate a synthetic dataset (X.bct, Z.bct, Y.bct and the true signal)");
    c_sim->add_option("--family", sim.family, "gaussian, binary, poisson or simple-nn")->required()->check(families);
    c_sim->add_option("--n", sim.n, "number of rows (default 1000, or 600 for simple-nn)")->check(CLI::PositiveNumber);
    c_sim->add_option("--seed", sim.seed, "random seed");
    c_sim->add_option("--workers", sim.workers, "worker threads")->check(CLI::PositiveNumber);
    c_sim->add_option("--out", sim.out, "output directory")->required();

    FitFlags fit;
    double fit_dropout = 0.0;
    auto* c_fit = app.add_subcommand("fit", "train the network, extract MC-dropout features and fit the GLM ensemble");
    c_fit->add_option("--config", fit.config, "preset name or config file")->required();
    c_fit->add_option("--family", fit.family, "response family (default: implied by the config loss)")->check(families);
    c_fit->add_option("--data", fit.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    c_fit->add_option("--draws", fit.draws, "MC-dropout draws M")->check(CLI::PositiveNumber);
    c_fit->add_option("--seed", fit.seed, "random seed");
    auto* fit_drop = c_fit->add_option("--dropout", fit_dropout, "override every dropout rate")->check(CLI::Range(0.0, 0.999));
    c_fit->add_option("--workers", fit.workers, "worker threads")->check(CLI::PositiveNumber);
    c_fit->add_option("--n-train", fit.n_train, "use only the first rows for fitting")->check(CLI::PositiveNumber);
    c_fit->add_option("--level", fit.level, "interval level")->check(CLI::Range(0.5, 0.999));
    c_fit->add_option("--coefficient-draws", fit.coefficient_draws, "posterior draws for coefficient intervals")
        ->check(CLI::Range(std::size_t{1000}, std::size_t{10000000}));
    c_fit->add_option("--out", fit.out, "output directory")->required();

    PredictFlags pr;
    auto* c_pr = app.add_subcommand("predict", "predictive means and intervals for new rows");
    c_pr->add_option("--model", pr.model, "fit output or model directory")->required()->check(CLI::ExistingDirectory);
    c_pr->add_option("--data", pr.data, "dataset directory with X.bct and Z.bct")->required()->check(CLI::ExistingDirectory);
    c_pr->add_option("--seed", pr.seed, "random seed");
    c_pr->add_option("--workers", pr.workers, "worker threads")->check(CLI::PositiveNumber);
    c_pr->add_option("--response-draws", pr.response_draws, "predictive draws per row")->check(CLI::PositiveNumber);
    c_pr->add_option("--level", pr.level, "interval level")->check(CLI::Range(0.5, 0.999));
    c_pr->add_option("--out", pr.out, "output directory")->required();

    ExperimentFlags ex;
    double ex_dropout = 0.0;
    auto* c_ex = app.add_subcommand("experiment", "repeated simulate-and-fit cycles with an aggregate table");
    c_ex->add_option("--family", ex.family, "gaussian, binary, poisson or simple-nn")->required()->check(families);
    c_ex->add_option("--replicates", ex.replicates, "number of replicates R")->check(CLI::PositiveNumber);
    c_ex->add_option("--n", ex.n, "rows per replicate")->check(CLI::PositiveNumber);
    c_ex->add_option("--n-train", ex.n_train, "training rows per replicate (default 70%)")->check(CLI::PositiveNumber);
    c_ex->add_option("--draws", ex.draws, "MC-dropout draws M")->check(CLI::PositiveNumber);
    c_ex->add_option("--seed", ex.seed, "random seed");
    c_ex->add_option("--config", ex.config, "preset name or config file (default: <family>-quick)");
    auto* ex_drop = c_ex->add_option("--dropout", ex_dropout, "override every dropout rate")->check(CLI::Range(0.0, 0.999));
    c_ex->add_option("--workers", ex.workers, "worker threads")->check(CLI::PositiveNumber);
    c_ex->add_option("--out", ex.out, "output directory for CSV tables");

    std::string report_in;
    auto* c_rep = app.add_subcommand("report", "re-render the tables of an experiment or fit directory");
    c_rep->add_option("--in", report_in, "experiment or fit output directory")->required()->check(CLI::ExistingDirectory);

    std::vector<const char*> cargv{"bcglm"};
    for (const auto& a : argv) cargv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kOk;
        }
        err << "bcglm: " << e.what() << "\n\n";
        const CLI::App* failing = &app;
        for (const CLI::App* sub : app.get_subcommands({}))
            if (sub->parsed()) failing = sub;
        err << failing->help();
        return kBadFlags;
    }
    if (*fit_drop) fit.dropout = fit_dropout;
    if (*ex_drop) ex.dropout = ex_dropout;

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        if (command == "simulate") return cmd_simulate(sim, argv, out, err);
        if (command == "fit") return cmd_fit(fit, argv, out, err);
        if (command == "predict") return cmd_predict(pr, argv, out, err);
        if (command == "experiment") return cmd_experiment(ex, argv, out, err);
        return cmd_report(report_in, out, err);
    } catch (const Error& e) {
        return detail::report_error(err, command, e, e.code() == Errc::ConfigError ? kBadFlags : kFailure);
    } catch (const std::exception& e) {
        err << "bcglm " << command << ": " << e.what() << " [exit 1]\n";
        return kFailure;
    }
}

} // namespace bcglm::cli
