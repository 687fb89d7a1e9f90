#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bcglm_cli.hpp"
#include "test_util.hpp"

using namespace bcglm;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code;
    std::string out, err;
};

CliRun run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small simple-nn dataset: cheap to fit and the config's model class contains the truth.
fs::path toy_data(const fs::path& root, std::size_t n = 300, std::uint64_t seed = 5) {
    const fs::path d = root / "data";
    EXPECT_EQ(run({"simulate", "--family", "simple-nn", "--n", std::to_string(n), "--seed", std::to_string(seed), "--out",
                   d.string()})
                  .code,
              0);
    return d;
}

} // namespace

TEST(CliSimulate, GaussianShapes) {
    const auto dir = test_util::scratch_dir("cli_sim_shapes");
    const CliRun r = run({"simulate", "--family", "gaussian", "--n", "1000", "--seed", "7", "--out", (dir / "d").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_tensor(dir / "d" / "X.bct").shape(), (Shape{1000, 30, 30}));
    EXPECT_EQ(read_tensor(dir / "d" / "Z.bct").shape(), (Shape{1000, 2}));
    EXPECT_EQ(read_tensor(dir / "d" / "Y.bct").shape(), (Shape{1000}));
    EXPECT_EQ(read_tensor(dir / "d" / "phi.bct").shape(), (Shape{1000, 4}));
    EXPECT_TRUE(fs::exists(dir / "d" / "manifest.txt"));
}

TEST(CliSimulate, SameFlagsSameBytes) {
    const auto dir = test_util::scratch_dir("cli_sim_bytes");
    for (const char* sub : {"a", "b"})
        ASSERT_EQ(run({"simulate", "--family", "poisson", "--n", "200", "--seed", "7", "--out", (dir / sub).string()}).code, 0);
    for (const char* f : {"X.bct", "Z.bct", "Y.bct", "phi.bct"}) EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(CliSimulate, ManifestReproducesRun) {
    const auto dir = test_util::scratch_dir("cli_sim_manifest");
    ASSERT_EQ(run({"simulate", "--family", "binary", "--n", "100", "--seed", "11", "--out", (dir / "a").string()}).code, 0);
    const std::string args = cli::manifest_value(dir / "a", "args");
    EXPECT_EQ(cli::manifest_value(dir / "a", "seed"), "11");
    EXPECT_EQ(cli::manifest_value(dir / "a", "family"), "binary");
    std::vector<std::string> argv;
    std::istringstream ss(args);
    for (std::string a; ss >> a;) argv.push_back(a == (dir / "a").string() ? (dir / "b").string() : a);
    ASSERT_EQ(run(argv).code, 0);
    EXPECT_EQ(slurp(dir / "a" / "Y.bct"), slurp(dir / "b" / "Y.bct"));
    EXPECT_EQ(slurp(dir / "a" / "X.bct"), slurp(dir / "b" / "X.bct"));
}

TEST(CliSimulate, UnknownFamilyIsUsageError) {
    const CliRun r = run({"simulate", "--family", "frobnicate", "--out", "/tmp/never"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("frobnicate"), std::string::npos);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(CliSimulate, GenerationFailureExitsThree) {
    const auto dir = test_util::scratch_dir("cli_sim_fail");
    std::ofstream(dir / "plain_file") << "x";
    const CliRun r = run({"simulate", "--family", "gaussian", "--n", "10", "--out", (dir / "plain_file" / "d").string()});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("simulate"), std::string::npos);
}

TEST(CliFlags, HelpAndMissingSubcommand) {
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"fit", "--data", "/tmp"}).code, 2); // --config and --out missing
}

TEST(CliFit, CoefficientCsvColumns) {
    const auto dir = test_util::scratch_dir("cli_fit_columns");
    const auto data = toy_data(dir);
    ASSERT_EQ(run({"fit", "--config", "simple-nn-quick", "--data", data.string(), "--draws", "10", "--out", (dir / "f").string()}).code, 0);
    std::ifstream in(dir / "f" / "coefficients.csv");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    EXPECT_EQ(header, "coefficient,mean,sd,hpd_lower,hpd_upper,et_lower,et_upper");
    EXPECT_EQ(first.rfind("gamma_1,", 0), 0u);
    const std::string report = slurp(dir / "f" / "report.txt");
    EXPECT_NE(report.find("glm_failures 0"), std::string::npos);
    EXPECT_NE(report.find("components 10"), std::string::npos);
    for (const char* p : {"model/model.txt", "model/network", "features/manifest.txt", "config.cfg", "manifest.txt", "training_log.csv"})
        EXPECT_TRUE(fs::exists(dir / "f" / p)) << p;
}

TEST(CliFit, SingleDrawStillReports) {
    const auto dir = test_util::scratch_dir("cli_fit_m1");
    const auto data = toy_data(dir);
    const CliRun r = run({"fit", "--config", "simple-nn-quick", "--data", data.string(), "--draws", "1", "--out", (dir / "f").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(slurp(dir / "f" / "report.txt").find("components 1\n"), std::string::npos);
}

TEST(CliFit, WorkerCountDoesNotChangeOutput) {
    const auto dir = test_util::scratch_dir("cli_fit_workers");
    const auto data = toy_data(dir);
    for (const char* w : {"1", "8"})
        ASSERT_EQ(run({"fit", "--config", "simple-nn-quick", "--data", data.string(), "--draws", "12", "--seed", "9", "--workers", w,
                       "--out", (dir / (std::string("w") + w)).string()})
                      .code,
                  0);
    EXPECT_EQ(slurp(dir / "w1" / "report.txt"), slurp(dir / "w8" / "report.txt"));
    EXPECT_EQ(slurp(dir / "w1" / "coefficients.csv"), slurp(dir / "w8" / "coefficients.csv"));
}

TEST(CliFit, ConfigFamilyMismatchIsFlagError) {
    const auto dir = test_util::scratch_dir("cli_fit_mismatch");
    const auto data = toy_data(dir, 60);
    EXPECT_EQ(run({"fit", "--config", "poisson-quick", "--family", "gaussian", "--data", data.string(), "--out", (dir / "f").string()}).code, 2);
    EXPECT_EQ(run({"fit", "--config", "no-such-preset", "--data", data.string(), "--out", (dir / "f").string()}).code, 2);
    // Image config against 3-column inputs.
    EXPECT_EQ(run({"fit", "--config", "gaussian-quick", "--data", data.string(), "--out", (dir / "f").string()}).code, 2);
}

TEST(CliFit, NonFiniteLossExitsFour) {
    const auto dir = test_util::scratch_dir("cli_fit_nonfinite");
    const auto data = toy_data(dir, 60);
    Tensor y = read_tensor(data / "Y.bct");
    for (double& v : y.data()) v = 1e200;
    write_tensor(data / "Y.bct", y);
    const CliRun r = run({"fit", "--config", "simple-nn-quick", "--data", data.string(), "--out", (dir / "f").string()});
    EXPECT_EQ(r.code, 4) << r.err;
    EXPECT_NE(r.err.find("NonFiniteLoss"), std::string::npos);
}

TEST(CliFit, AllDrawsFailingExitsFive) {
    // Constant binary responses and positive (sigmoid) features: each feature
    // acts like an intercept, so every per-draw logistic fit separates.
    const auto dir = test_util::scratch_dir("cli_fit_failures");
    const auto data = toy_data(dir, 60);
    Tensor y = read_tensor(data / "Y.bct");
    for (double& v : y.data()) v = 0.0;
    write_tensor(data / "Y.bct", y);
    const fs::path cfg = dir / "binary.cfg";
    std::ofstream(cfg) << "input 3\ncovariates 2\nloss bce\noptimizer adam learning_rate=1e-3\nbatch_size 10\nepochs 3\n"
                          "patience 0\ndense units=3 activation=sigmoid\ndropout rate=0.2\nconcatenate\ndense units=1 activation=sigmoid\n";
    const CliRun r = run({"fit", "--config", cfg.string(), "--data", data.string(), "--draws", "5", "--out", (dir / "f").string()});
    EXPECT_EQ(r.code, 5) << r.err;
    EXPECT_NE(r.err.find("TooManyFailures"), std::string::npos);
}

TEST(CliPredict, SelfPredictionMatchesNoiseScale) {
    const auto dir = test_util::scratch_dir("cli_predict_self");
    const auto data = toy_data(dir, 600, 21);
    ASSERT_EQ(run({"fit", "--config", "simple-nn-quick", "--data", data.string(), "--draws", "20", "--out", (dir / "f").string()}).code, 0);
    const CliRun r = run({"predict", "--model", (dir / "f").string(), "--data", data.string(), "--out", (dir / "p").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    // Unit-variance noise: in-sample RMSPE of a well-specified fit sits near 1.
    const auto pos = r.out.find("rmspe ");
    ASSERT_NE(pos, std::string::npos);
    const double e = std::stod(r.out.substr(pos + 6));
    EXPECT_GT(e, 0.85);
    EXPECT_LT(e, 1.25);
}

TEST(CliPredict, SameSeedSameCsvAndBinaryColumns) {
    const auto dir = test_util::scratch_dir("cli_predict_repeat");
    const auto data = toy_data(dir, 200);
    ASSERT_EQ(run({"fit", "--config", "simple-nn-quick", "--data", data.string(), "--draws", "8", "--out", (dir / "f").string()}).code, 0);
    for (const char* sub : {"a", "b"})
        ASSERT_EQ(run({"predict", "--model", (dir / "f").string(), "--data", data.string(), "--seed", "4", "--out", (dir / sub).string()}).code, 0);
    EXPECT_EQ(slurp(dir / "a" / "predictions.csv"), slurp(dir / "b" / "predictions.csv"));
    std::ifstream in(dir / "a" / "predictions.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "row,prediction,hpd_lower,hpd_upper,et_lower,et_upper,truth");
}

TEST(CliPredict, BinaryRowsCarryProbabilityAndClass) {
    const auto dir = test_util::scratch_dir("cli_predict_binary");
    const auto data = toy_data(dir, 200);
    Tensor y = read_tensor(data / "Y.bct");
    for (double& v : y.data()) v = v > 0.0 ? 1.0 : 0.0;
    write_tensor(data / "Y.bct", y);
    const fs::path cfg = dir / "binary.cfg";
    std::ofstream(cfg) << "input 3\ncovariates 2\nloss bce\noptimizer adam learning_rate=1e-2\nbatch_size 10\nepochs 20\n"
                          "patience 0\ndense units=3 activation=tanh\ndropout rate=0.2\nconcatenate\ndense units=1 activation=sigmoid\n";
    ASSERT_EQ(run({"fit", "--config", cfg.string(), "--data", data.string(), "--draws", "8", "--out", (dir / "f").string()}).code, 0);
    const CliRun r = run({"predict", "--model", (dir / "f").string(), "--data", data.string(), "--out", (dir / "p").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("accuracy "), std::string::npos);
    std::ifstream in(dir / "p" / "predictions.csv");
    std::string header, row;
    std::getline(in, header);
    EXPECT_EQ(header, "row,probability,class,hpd_lower,hpd_upper,et_lower,et_upper,truth");
    while (std::getline(in, row)) {
        std::stringstream ss(row);
        std::string idx, p, c;
        std::getline(ss, idx, ',');
        std::getline(ss, p, ',');
        std::getline(ss, c, ',');
        EXPECT_EQ(c, std::stod(p) >= 0.5 ? "1" : "0");
    }
}

TEST(CliPredict, EmptyOrMismatchedInputExitsSix) {
    const auto dir = test_util::scratch_dir("cli_predict_bad");
    const auto data = toy_data(dir, 100);
    ASSERT_EQ(run({"fit", "--config", "simple-nn-quick", "--data", data.string(), "--draws", "4", "--out", (dir / "f").string()}).code, 0);

    fs::create_directories(dir / "empty");
    std::ofstream(dir / "empty" / "X.bct");
    std::ofstream(dir / "empty" / "Z.bct");
    EXPECT_EQ(run({"predict", "--model", (dir / "f").string(), "--data", (dir / "empty").string(), "--out", (dir / "p").string()}).code, 6);

    ASSERT_EQ(run({"simulate", "--family", "gaussian", "--n", "20", "--out", (dir / "img").string()}).code, 0);
    const CliRun r = run({"predict", "--model", (dir / "f").string(), "--data", (dir / "img").string(), "--out", (dir / "p").string()});
    EXPECT_EQ(r.code, 6);
    EXPECT_NE(r.err.find("ShapeMismatch"), std::string::npos);
}

TEST(CliExperiment, TwoReplicatesAccounted) {
    const auto dir = test_util::scratch_dir("cli_experiment");
    const CliRun r = run({"experiment", "--family", "simple-nn", "--replicates", "2", "--n", "200", "--draws", "5", "--seed", "2",
                       "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("2 of 2 replicates"), std::string::npos);
    const auto results = read_replicates_csv(dir / "replicates.csv");
    ASSERT_EQ(results.size(), 2u);
    EXPECT_TRUE(results[0].ok && results[1].ok);
    EXPECT_EQ(cli::manifest_value(dir, "replicates"), "2");
    EXPECT_EQ(cli::manifest_value(dir, "n_train"), "140");

    // report re-renders the same table from the CSV.
    const std::string before = slurp(dir / "summary.txt");
    const CliRun rep = run({"report", "--in", dir.string()});
    ASSERT_EQ(rep.code, 0) << rep.err;
    EXPECT_EQ(rep.out, before);
}

TEST(CliExperiment, BadSplitIsFlagError) {
    EXPECT_EQ(run({"experiment", "--family", "simple-nn", "--n", "100", "--n-train", "100"}).code, 2);
}

TEST(CliReport, FitDirectoryPrintsReport) {
    const auto dir = test_util::scratch_dir("cli_report_fit");
    const auto data = toy_data(dir, 100);
    ASSERT_EQ(run({"fit", "--config", "simple-nn-quick", "--data", data.string(), "--draws", "3", "--out", (dir / "f").string()}).code, 0);
    const CliRun r = run({"report", "--in", (dir / "f").string()});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, slurp(dir / "f" / "report.txt"));
    EXPECT_EQ(run({"report", "--in", dir.string()}).code, 1);
}
