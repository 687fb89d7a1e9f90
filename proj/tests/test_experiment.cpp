#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "bcglm/experiment.hpp"
#include "bcglm/presets.hpp"
#include "test_util.hpp"

using namespace bcglm;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentPlan tiny_plan(std::size_t replicates) {
    ExperimentPlan plan = default_plan(Scenario::SimpleNn);
    plan.replicates = replicates;
    plan.n_total = 150;
    plan.n_train = 100;
    plan.options.draws = 5;
    plan.options.response_draws = 500;
    plan.options.coefficient_draws = 2000;
    plan.seed = 42;
    return plan;
}

} // namespace

TEST(Presets, AllParseAndMatchConfigFiles) {
    for (std::string_view name : presets::kNames) {
        const std::string text(presets::lookup(name));
        EXPECT_NO_THROW(nn::parse_config(text)) << name;
        const auto path = std::filesystem::path(BCGLM_SOURCE_DIR) / "configs" / (std::string(name) + ".cfg");
        EXPECT_EQ(slurp(path), text) << path;
    }
    EXPECT_THROW(presets::lookup("gaussian-huge"), Error);
}

TEST(Presets, LossesMatchScenarios) {
    for (Scenario s : {Scenario::Gaussian, Scenario::Binary, Scenario::Poisson, Scenario::SimpleNn})
        EXPECT_NO_THROW(require_matching_loss(default_plan(s).config, scenario_family(s))) << scenario_name(s);
}

TEST(Scenario, NamesRoundTrip) {
    for (Scenario s : {Scenario::Gaussian, Scenario::Binary, Scenario::Poisson, Scenario::SimpleNn})
        EXPECT_EQ(parse_scenario(scenario_name(s)), s);
    EXPECT_THROW(parse_scenario("frobnicate"), Error);
    EXPECT_EQ(default_plan(Scenario::SimpleNn).n_total, 600u);
    EXPECT_EQ(default_plan(Scenario::Gaussian).n_train, 700u);
}

TEST(SplitRows, FirstRowsTrain) {
    Tensor X({5, 2, 2}), Z({5, 2}), Y({5, 1});
    for (std::size_t i = 0; i < 20; ++i) X[i] = static_cast<double>(i);
    for (std::size_t i = 0; i < 5; ++i) Y[i] = static_cast<double>(i);
    const SplitData d = split_rows(Family::Gaussian, X, Z, Y, 3, {1, 1});
    EXPECT_EQ(d.X_train.shape(), (Shape{3, 2, 2}));
    EXPECT_EQ(d.X_test.shape(), (Shape{2, 2, 2}));
    EXPECT_EQ(d.X_test[0], 12.0);
    EXPECT_EQ(d.Y_test[1], 4.0);
    EXPECT_THROW(split_rows(Family::Gaussian, X, Z, Y, 5, {1, 1}), Error);
    EXPECT_THROW(split_rows(Family::Gaussian, X, Z, Y, 0, {1, 1}), Error);
}

TEST(MeanSd, SkipsNonFinite) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const MeanSd m = mean_sd({1.0, nan, 3.0});
    EXPECT_EQ(m.count, 2u);
    EXPECT_DOUBLE_EQ(m.mean, 2.0);
    EXPECT_DOUBLE_EQ(m.sd, std::sqrt(2.0));
    EXPECT_EQ(mean_sd({nan}).count, 0u);
    EXPECT_TRUE(std::isnan(mean_sd({4.0}).sd));
}

TEST(Summarize, IgnoresFailedReplicates) {
    ReplicateResult a, b;
    a.ok = true;
    a.bayes.gamma = {1.0, 2.0};
    a.bayes.gamma_covered = {1.0, 0.0};
    a.bayes.rmspe = 1.5;
    for (MethodResult* m : {&a.network, &a.glm}) {
        m->gamma = {0.0, 0.0};
        m->gamma_covered = {0.0, 0.0};
    }
    b.ok = false;
    b.failure = "TooManyFailures in fit_bayes_cglm: 9 of 50";
    const ExperimentSummary s = summarize(Scenario::Gaussian, {a, b});
    EXPECT_EQ(s.replicates, 2u);
    EXPECT_EQ(s.succeeded, 1u);
    EXPECT_DOUBLE_EQ(s.bayes.gamma[1].mean, 2.0);
    EXPECT_DOUBLE_EQ(s.bayes.gamma_coverage[0].mean, 1.0);
    EXPECT_DOUBLE_EQ(s.bayes.rmspe.mean, 1.5);
    EXPECT_NE(format_summary(s).find("1 of 2 replicates"), std::string::npos);
}

TEST(RunExperiment, DeterministicAndCsvRoundTrip) {
    const auto dir = test_util::scratch_dir("experiment_roundtrip");
    const auto first = run_experiment(tiny_plan(2));
    const auto second = run_experiment(tiny_plan(2));
    write_replicates_csv(dir / "a.csv", first);
    write_replicates_csv(dir / "b.csv", second);
    const auto strip_seconds = [](std::string s) {
        // The seconds column is wall time; everything else must match.
        std::string out;
        std::istringstream in(s);
        for (std::string line; std::getline(in, line);) {
            const auto last = line.rfind(',');
            const auto prev = line.rfind(',', last - 1);
            out += line.substr(0, prev) + "\n";
        }
        return out;
    };
    EXPECT_EQ(strip_seconds(slurp(dir / "a.csv")), strip_seconds(slurp(dir / "b.csv")));

    ASSERT_EQ(first.size(), 2u);
    ASSERT_TRUE(first[0].ok && first[1].ok) << first[0].failure << first[1].failure;
    EXPECT_NE(first[0].bayes.gamma[0], first[1].bayes.gamma[0]); // distinct data per replicate

    const auto back = read_replicates_csv(dir / "a.csv");
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t r = 0; r < 2; ++r) {
        EXPECT_EQ(back[r].bayes.gamma, first[r].bayes.gamma);
        EXPECT_EQ(back[r].glm.rmspe, first[r].glm.rmspe);
        EXPECT_TRUE(std::isnan(back[r].bayes.accuracy));
    }
    EXPECT_EQ(format_summary(summarize(Scenario::SimpleNn, back)).substr(0, 200),
              format_summary(summarize(Scenario::SimpleNn, first)).substr(0, 200));
}

TEST(RunExperiment, FailuresAreRecordedNotFatal) {
    ExperimentPlan plan = tiny_plan(1);
    plan.options.max_failure_fraction = -1.0; // every replicate trips the failure limit
    const auto r = run_experiment(plan);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_FALSE(r[0].ok);
    EXPECT_NE(r[0].failure.find("TooManyFailures"), std::string::npos);
}

TEST(EvaluateSplit, BinaryMetricsFilled) {
    ExperimentPlan plan = tiny_plan(1);
    plan.config = nn::parse_config("input 3\ncovariates 2\nloss bce\noptimizer adam learning_rate=1e-2\nbatch_size 10\nepochs 20\n"
                                   "patience 0\ndense units=3 activation=tanh\ndropout rate=0.2\nconcatenate\n"
                                   "dense units=1 activation=sigmoid\n");
    const SimpleNnDataset g = simple_nn_generate(200, SeededRng(3));
    Tensor y = g.Y;
    for (double& v : y.data()) v = v > 0.5 ? 1.0 : 0.0;
    const SplitData d = split_rows(Family::Bernoulli, g.X, g.Z, y, 150, {1.0, 2.0});
    const ReplicateResult r = evaluate_split(d, plan, SeededRng(4));
    EXPECT_TRUE(r.ok);
    for (const MethodResult* m : {&r.bayes, &r.network, &r.glm}) {
        EXPECT_GT(m->accuracy, 0.5);
        EXPECT_TRUE(std::isnan(m->rmspe));
        EXPECT_GT(m->auc, 0.5);
    }
}
