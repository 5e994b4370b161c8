#include <gtest/gtest.h>

#include <filesystem>

#include "fuseinit/pipeline.hpp"

using namespace fuseinit;

namespace {

json sine_config() {
    return json::parse(R"({
      "data": {"kind": "synthetic", "generator": "sine_regression", "n": 120, "noise": 0.05, "seed": 4},
      "deep": {
        "input_shape": {"channels": 1, "length": 1},
        "layers": [
          {"kind": "dense", "units": 8, "activation": "tanh"},
          {"kind": "dense", "units": 8, "activation": "identity"},
          {"kind": "dense", "units": 1, "activation": "identity"}
        ]
      },
      "plan": [[1, 2]],
      "phase1": {"learning_rate": 0.05, "momentum": 0.9, "batch_size": 16, "epochs": 15},
      "phase3": {"learning_rate": 0.05, "momentum": 0.9, "batch_size": 16, "epochs": 5},
      "trials": 2,
      "seed": 3
    })");
}

json conv_config() {
    return json::parse(R"({
      "data": {"kind": "synthetic", "generator": "multichannel_1d_classes", "n": 90, "noise": 0.2, "seed": 2,
               "channels": 2, "length": 12, "classes": 3},
      "deep": {
        "input_shape": {"channels": 2, "length": 12},
        "layers": [
          {"kind": "conv1d", "out_channels": 3, "kernel": 3, "stride": 1, "activation": "relu", "pool": {"kind": "max", "r": 2}},
          {"kind": "conv1d", "out_channels": 3, "kernel": 3, "stride": 1, "activation": "relu"},
          {"kind": "flatten"},
          {"kind": "dense", "units": 3, "activation": "softmax"}
        ]
      },
      "plan": [[0, 1]],
      "phase1": {"learning_rate": 0.02, "momentum": 0.9, "batch_size": 16, "epochs": 6},
      "phase3": {"learning_rate": 0.02, "momentum": 0.9, "batch_size": 16, "epochs": 4},
      "trials": 3,
      "seed": 5
    })");
}

}  // namespace

TEST(Pipeline, EmptyPlanIsDeepTrainingOnly) {
    json j = sine_config();
    j["plan"] = json::array();
    const ExperimentReport r = run_comparison(experiment_config_from_json(j));
    EXPECT_EQ(r.metric, "val_loss");
    EXPECT_TRUE(r.rows.empty());
    ASSERT_EQ(r.trials.size(), 2u);
    for (const auto& t : r.trials) {
        EXPECT_TRUE(t.rows.empty());
        EXPECT_EQ(t.deep.curve.size(), 16u);
    }
}

TEST(Pipeline, LinearPairStartsWhereDeepEnded) {
    const ExperimentReport r = run_fuseinit(experiment_config_from_json(sine_config()));
    for (const auto& t : r.trials) {
        ASSERT_EQ(t.rows.size(), 1u);
        EXPECT_FALSE(t.rows[0].random.has_value());
        EXPECT_NEAR(t.rows[0].fuseinit.epoch0_loss, t.deep.final_loss, 1e-6);
        EXPECT_LT(t.fusions[0].predicted_mse, 1e-8);
    }
}

TEST(Pipeline, SingleTrialHasZeroSpread) {
    json j = sine_config();
    j["trials"] = 1;
    j["budget_factor"] = 2.0;
    const ExperimentReport r = run_comparison(experiment_config_from_json(j));
    EXPECT_EQ(r.deep.std, 0.0);
    EXPECT_EQ(r.rows[0].fuseinit.std, 0.0);
    const json echo = to_json(r)["config"];
    EXPECT_EQ(echo["fused_epochs"], 10);
    EXPECT_EQ(echo["random_epochs"], 5);
    EXPECT_EQ(r.trials[0].rows[0].fuseinit.curve.size(), 11u);
    EXPECT_EQ(r.trials[0].rows[0].random->curve.size(), 6u);
}

TEST(Pipeline, BadPlanFailsBeforeTraining) {
    for (const char* plan : {"[[0, 2]]", "[[1, 1]]", "[[0, 9]]"}) {
        json j = sine_config();
        j["plan"] = json::parse(plan);
        EXPECT_THROW(experiment_config_from_json(j).validate(), ConfigError) << plan;
        EXPECT_THROW(run_comparison(experiment_config_from_json(j)), ConfigError) << plan;
    }
    json j = sine_config();
    j["deep"]["input_shape"]["length"] = 3;
    EXPECT_THROW(run_comparison(experiment_config_from_json(j)), ConfigError);
    j = sine_config();
    j["plan"] = "sometimes";
    EXPECT_THROW(experiment_config_from_json(j), ConfigError);
}

TEST(Pipeline, ConvExperimentAggregatesMatchTrials) {
    const ExperimentConfig cfg = experiment_config_from_json(conv_config());
    const ExperimentReport r = run_comparison(cfg);
    EXPECT_EQ(r.metric, "val_accuracy");
    std::vector<double> fm, rm;
    for (const auto& t : r.trials) {
        EXPECT_EQ(t.fusions[0].kind, PairKind::conv_conv);
        EXPECT_TRUE(std::isfinite(t.rows[0].fuseinit.final_loss));
        EXPECT_TRUE(std::isfinite(t.rows[0].random->final_loss));
        fm.push_back(t.rows[0].fuseinit.final_metric);
        rm.push_back(t.rows[0].random->final_metric);
    }
    double mean = 0.0, var = 0.0;
    for (double v : fm) mean += v / 3.0;
    for (double v : fm) var += (v - mean) * (v - mean) / 3.0;
    EXPECT_NEAR(r.rows[0].fuseinit.mean, mean, 1e-15);
    EXPECT_NEAR(r.rows[0].fuseinit.std, std::sqrt(var), 1e-15);
    EXPECT_NEAR(r.rows[0].random->mean, (rm[0] + rm[1] + rm[2]) / 3.0, 1e-15);

    ExperimentConfig threaded = cfg;
    threaded.threads = 2;
    EXPECT_EQ(to_json(run_comparison(threaded)).dump(), to_json(r).dump());
}

TEST(Pipeline, OutputsAndConfigRoundTrip) {
    const ExperimentConfig cfg = experiment_config_from_json(sine_config());
    EXPECT_EQ(to_json(experiment_config_from_json(to_json(cfg))).dump(), to_json(cfg).dump());

    const ExperimentReport r = run_comparison(cfg);
    const auto dir = std::filesystem::temp_directory_path() / "fuseinit_test_outputs";
    std::filesystem::remove_all(dir);
    write_experiment_outputs(r, dir.string());
    for (const char* f : {"report.json", "table.txt", "curves.csv"}) EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    EXPECT_NE(format_table(r).find("+-"), std::string::npos);
    EXPECT_EQ(format_curves(r).rfind("row,epoch,arm,mean_metric,std_metric", 0), 0u);
}
