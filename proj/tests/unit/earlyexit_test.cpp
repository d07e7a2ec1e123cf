// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "shortcut/earlyexit.hpp"

namespace shortcut {
namespace {

VocabDistribution from_probabilities(const std::vector<double>& p) {
  std::vector<double> logits;
  for (double v : p) logits.push_back(std::log(v));
  return distribution_from_logits(logits);
}

TEST(Threshold, Examples) {
  EXPECT_DOUBLE_EQ(confidence_threshold({.lambda = 0.0, .mean_prefix_length = 12.0}, 0.0), 0.1);
  const ExitPolicy high{.lambda = 1.112, .mean_prefix_length = 9.5};
  const double at_n = confidence_threshold(high, 9.5);
  EXPECT_NEAR(at_n, 0.9 * 1.112 + 0.1 * std::exp(-4.0), 1e-15);
  EXPECT_NEAR(at_n, 1.00263, 1e-5);
  EXPECT_GT(at_n, 1.0);
  for (double i : {0.0, 1.0, 9.5, 100.0, 1e6}) {
    EXPECT_GT(confidence_threshold(high, i), 1.0);
    EXPECT_LT(confidence_threshold({.lambda = -1.112, .mean_prefix_length = 9.5}, i), 0.0);
  }
  EXPECT_THROW(confidence_threshold({.lambda = 0.0, .mean_prefix_length = 0.0}, 1.0),
               std::invalid_argument);
}

TEST(Threshold, DecaysWithPositionAndGrowsWithLambda) {
  const ExitPolicy p{.lambda = 0.3, .mean_prefix_length = 5.0};
  EXPECT_GT(confidence_threshold(p, 1.0), confidence_threshold(p, 2.0));
  EXPECT_LT(confidence_threshold(p, 3.0),
            confidence_threshold({.lambda = 0.4, .mean_prefix_length = 5.0}, 3.0));
}

TEST(ShouldExit, Examples) {
  const auto d = from_probabilities({0.55, 0.35, 0.10});
  EXPECT_NEAR(d.top_gap(), 0.20, 1e-12);
  EXPECT_TRUE(should_exit(d, 0.1));
  EXPECT_FALSE(should_exit(d, 0.2 + 1e-12));
  EXPECT_FALSE(should_exit(d, 0.25));
  const auto one_hot = distribution_from_logits(std::vector<double>{0.0, 800.0, 0.0});
  EXPECT_TRUE(should_exit(one_hot, 0.99));
  const auto uniform = distribution_from_logits(std::vector<double>(7, 1.0));
  EXPECT_FALSE(should_exit(uniform, 1e-9));
  EXPECT_FALSE(should_exit(uniform, 0.0));
  EXPECT_TRUE(should_exit(uniform, -1e-9));
}

TEST(LambdaGrid, Contents) {
  const auto mat = default_lambda_grid(Caster::kMat);
  ASSERT_EQ(mat.size(), 13u);
  EXPECT_EQ(mat.front(), -1.112);
  EXPECT_EQ(mat.back(), 1.112);
  EXPECT_NEAR(mat[6], 0.5, 1e-15);
  EXPECT_TRUE(std::is_sorted(mat.begin(), mat.end()));
  const auto id = default_lambda_grid(Caster::kId);
  ASSERT_EQ(id.size(), 22u);
  EXPECT_TRUE(std::is_sorted(id.begin(), id.end()));
  for (int i = 1; i < 10; ++i) {
    EXPECT_NE(std::find_if(id.begin(), id.end(),
                           [&](double v) { return std::fabs(v - (1.0 + 0.0112 * i)) < 1e-12; }),
              id.end())
        << i;
  }
}

class EarlyExit : public ::testing::Test {
 protected:
  void SetUp() override {
    ModelConfig cfg = testing::small_config(50);
    cfg.n_layers = 5;
    weights = init_random(cfg);
    split = testing::make_traces(weights, {.n_train = 200, .n_val = 60});
    grid = fit_all_pairs(split.train);
    n = mean_prefix_length(split.validation);
  }
  ExitResult run(double lambda, Caster caster) const {
    return simulate_early_exit(split.validation, grid, weights,
                               {.lambda = lambda, .mean_prefix_length = n, .caster = caster}, {});
  }
  ModelWeights weights;
  testing::TraceSplit split;
  MapGrid grid;
  double n = 0.0;
};

TEST_F(EarlyExit, MeanPrefixLength) {
  double total = 0.0;
  for (const auto& r : split.validation.records) total += r.position + 1.0;
  EXPECT_NEAR(n, total / split.validation.size(), 1e-12);
}

TEST_F(EarlyExit, Endpoints) {
  for (Caster c : {Caster::kMat, Caster::kId}) {
    const ExitResult full = run(1.112, c);
    EXPECT_EQ(full.avg_layers, 5.0);
    EXPECT_EQ(full.precision_at_1, 1.0);
    const ExitResult first = run(-1.112, c);
    EXPECT_EQ(first.avg_layers, 1.0);
    for (std::size_t l : first.exit_layers) EXPECT_EQ(l, 1u);
  }
}

TEST_F(EarlyExit, ExitLayersMonotoneInLambda) {
  for (Caster c : {Caster::kMat, Caster::kId}) {
    std::vector<std::size_t> previous(split.validation.size(), 0);
    double previous_avg = 0.0;
    for (double lambda : default_lambda_grid(c)) {
      const ExitResult r = run(lambda, c);
      ASSERT_EQ(r.exit_layers.size(), previous.size());
      for (std::size_t i = 0; i < previous.size(); ++i) {
        EXPECT_GE(r.exit_layers[i], previous[i]) << lambda;
        EXPECT_GE(r.exit_layers[i], 1u);
        EXPECT_LE(r.exit_layers[i], 5u);
      }
      EXPECT_GE(r.avg_layers, previous_avg);
      EXPECT_GE(r.precision_at_1, 0.0);
      EXPECT_LE(r.precision_at_1, 1.0);
      previous = r.exit_layers;
      previous_avg = r.avg_layers;
    }
  }
}

TEST_F(EarlyExit, MatchesPerRecordOracle) {
  const auto& val = split.validation;
  for (double lambda : {0.0, 0.2, 0.5}) {
    const ExitResult r = run(lambda, Caster::kMat);
    double hits = 0.0, layers = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const auto hl = val.layer(i, 5);
      const auto ref = oracle::distribution(weights, oracle::Vec(hl.begin(), hl.end()), true);
      const auto ref_top = std::max_element(ref.begin(), ref.end()) - ref.begin();
      const double threshold =
          0.9 * lambda + 0.1 * std::exp(-4.0 * val.records[i].position / n);
      for (std::size_t l = 1; l <= 5; ++l) {
        const auto src = val.layer(i, l);
        oracle::Vec cast(src.begin(), src.end());
        if (l < 5) cast = oracle::mul(grid.at(MapKind::kMat, l, 5).matrix, cast);
        auto p = oracle::distribution(weights, cast, true);
        const auto top = std::max_element(p.begin(), p.end()) - p.begin();
        const double first = p[top];
        p[top] = -1.0;
        const double gap = first - *std::max_element(p.begin(), p.end());
        if (gap > threshold || l == 5) {
          EXPECT_EQ(r.exit_layers[i], l) << lambda << " record " << i;
          layers += static_cast<double>(l);
          hits += top == ref_top ? 1.0 : 0.0;
          break;
        }
      }
    }
    EXPECT_NEAR(r.avg_layers, layers / val.size(), 1e-12);
    EXPECT_NEAR(r.precision_at_1, hits / val.size(), 1e-12);
  }
}

TEST_F(EarlyExit, FixedExitEqualsPerLayerPrecision) {
  const MetricsReport report =
      eval_lm_per_layer(split.validation, grid, weights, LmEvalOptions{.ks = {1}});
  for (Caster c : {Caster::kMat, Caster::kId}) {
    for (std::size_t l = 0; l <= 5; ++l) {
      const ExitResult fixed = simulate_fixed_exit(split.validation, grid, weights, c, l, {});
      EXPECT_EQ(fixed.precision_at_1, report.find_layer(l, to_string(c))->precision_at(1).mean);
      EXPECT_EQ(fixed.avg_layers, static_cast<double>(l));
    }
  }
  EXPECT_THROW(simulate_fixed_exit(split.validation, grid, weights, Caster::kMat, 6, {}),
               std::invalid_argument);
}

TEST_F(EarlyExit, SweepAndCsv) {
  const auto points = sweep_early_exit(split.validation, grid, weights,
                                       {Caster::kMat, Caster::kId}, {}, {.threads = 2});
  ASSERT_EQ(points.size(), 13u + 22u);
  for (const auto& p : points) {
    const ExitResult direct = run(p.lambda, p.caster);
    EXPECT_EQ(p.avg_layers, direct.avg_layers);
    EXPECT_EQ(p.precision_at_1, direct.precision_at_1);
    EXPECT_EQ(p.n, split.validation.size());
  }
  const std::string csv = sweep_to_csv(points);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kSweepCsvHeader);
  std::size_t rows = 0;
  bool low = false, high = false;
  while (std::getline(in, line)) {
    ++rows;
    low |= line.rfind("-1.1120000000000001,", 0) == 0 || line.rfind("-1.112,", 0) == 0;
    high |= line.rfind("1.1120000000000001,", 0) == 0 || line.rfind("1.112,", 0) == 0;
  }
  EXPECT_EQ(rows, 35u);
  EXPECT_TRUE(low);
  EXPECT_TRUE(high);
}

TEST_F(EarlyExit, Errors) {
  const MapGrid partial = fit_target_column(split.train, 4);
  EXPECT_THROW(simulate_early_exit(split.validation, partial, weights,
                                   {.lambda = 0.0, .mean_prefix_length = n}, {}),
               std::exception);
  EXPECT_NO_THROW(simulate_early_exit(split.validation, partial, weights,
                                      {.lambda = 0.0, .mean_prefix_length = n, .caster = Caster::kId},
                                      {}));
  TraceSet empty = split.validation;
  empty.records.clear();
  EXPECT_THROW(mean_prefix_length(empty), std::invalid_argument);
  EXPECT_THROW(simulate_early_exit(empty, grid, weights, {.lambda = 0.0}, {}),
               std::invalid_argument);
}

}  // namespace
}  // namespace shortcut
