// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "shortcut/errors.hpp"
#include "shortcut/eval.hpp"

namespace shortcut {
namespace {

VocabDistribution from_probabilities(const std::vector<double>& p) {
  std::vector<double> logits;
  for (double v : p) logits.push_back(std::log(v));
  return distribution_from_logits(logits);
}

VocabDistribution peaked_at(std::size_t token, std::size_t size) {
  std::vector<double> logits(size, 0.0);
  logits[token] = 5.0;
  return distribution_from_logits(logits);
}

std::size_t count_rows(const std::string& csv, const std::string& needle) {
  std::istringstream in(csv);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.find(needle) != std::string::npos) ++n;
  }
  return n;
}

TEST(Distribution, SumsToOneAndTiesGoToLowestId) {
  const auto d = distribution_from_logits(std::vector<double>{1.0, 3.0, 3.0, -2.0});
  double total = 0.0;
  for (double p : d.probabilities) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(d.argmax, 1u);
  EXPECT_EQ(d.top(3), (std::vector<TokenId>{1, 2, 0}));
  EXPECT_EQ(d.rank_of(2), 1u);
  EXPECT_EQ(d.rank_of(3), 3u);
  EXPECT_NEAR(d.top_gap(), 0.0, 1e-15);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(d.log_probabilities[i], std::log(d.probabilities[i]), 1e-12);
  }
}

TEST(Distribution, IdentityHeadConcentratesAndZeroIsUniform) {
  ModelConfig cfg = testing::small_config(40);
  cfg.vocab_size = cfg.d_hidden;
  cfg.final_layernorm = false;
  ModelWeights w = init_random(cfg);
  w.token_embedding = Matrix::identity(cfg.d_hidden);
  std::vector<double> h(cfg.d_hidden, 0.0);
  for (double p : output_distribution(std::span<const double>(h), w, false).probabilities) {
    EXPECT_DOUBLE_EQ(p, 1.0 / static_cast<double>(cfg.d_hidden));
  }
  h[3] = 50.0;
  const auto d = output_distribution(std::span<const double>(h), w, false);
  EXPECT_EQ(d.argmax, 3u);
  EXPECT_GT(d.probabilities[3], 1.0 - 1e-15);
  EXPECT_THROW(output_distribution(std::span<const double>(h), w, true), std::invalid_argument);
  h.pop_back();
  EXPECT_THROW(output_distribution(std::span<const double>(h), w, false), DimensionError);
}

TEST(Distribution, MatchesOracleWithAndWithoutFinalNorm) {
  const ModelWeights w = init_random(testing::small_config(41));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> h(16);
    for (double& v : h) v = normal(rng);
    for (bool ln : {false, true}) {
      const auto got = output_distribution(std::span<const double>(h), w, ln);
      const auto want = oracle::distribution(w, h, ln);
      for (std::size_t t = 0; t < want.size(); ++t) EXPECT_NEAR(got.probabilities[t], want[t], 1e-12);
    }
  }
}

TEST(PrecisionAtK, Examples) {
  const auto ref = from_probabilities({0.5, 0.3, 0.2});
  const auto cand = peaked_at(2, 3);
  EXPECT_EQ(precision_at_k(cand, ref, 1), 0);
  EXPECT_EQ(precision_at_k(cand, ref, 2), 0);
  EXPECT_EQ(precision_at_k(cand, ref, 3), 1);
  const auto second = peaked_at(1, 3);
  EXPECT_EQ(precision_at_k(second, ref, 1), 0);
  EXPECT_EQ(precision_at_k(second, ref, 2), 1);
  for (std::size_t k = 1; k <= 3; ++k) EXPECT_EQ(precision_at_k(ref, ref, k), 1);
  EXPECT_THROW(precision_at_k(cand, ref, 4), std::invalid_argument);
  EXPECT_THROW(precision_at_k(cand, ref, 0), std::invalid_argument);
  EXPECT_THROW(precision_at_k(peaked_at(0, 4), ref, 1), DimensionError);
}

TEST(PrecisionAtK, FullVocabularyAlwaysHits) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(12), b(12);
    for (double& v : a) v = normal(rng);
    for (double& v : b) v = normal(rng);
    EXPECT_EQ(precision_at_k(distribution_from_logits(a), distribution_from_logits(b), 12), 1);
  }
}

TEST(Surprisal, Examples) {
  const auto ref = from_probabilities({0.7, 0.2, 0.1});
  EXPECT_NEAR(surprisal(peaked_at(1, 3), ref).value, -std::log(0.2), 1e-12);
  EXPECT_NEAR(surprisal(peaked_at(1, 3), ref).value, 1.6094, 1e-4);
  EXPECT_NEAR(surprisal(ref, ref).value, -std::log(0.7), 1e-12);
  const auto uniform = distribution_from_logits(std::vector<double>(40, 0.25));
  EXPECT_NEAR(surprisal(peaked_at(17, 40), uniform).value, std::log(40.0), 1e-12);
}

TEST(Surprisal, FloorsVanishingProbabilities) {
  const auto ref = distribution_from_logits(std::vector<double>{0.0, -1000.0});
  const auto s = surprisal(peaked_at(1, 2), ref);
  EXPECT_TRUE(s.floored);
  EXPECT_DOUBLE_EQ(s.value, -std::log(kProbabilityFloor));
  EXPECT_FALSE(surprisal(ref, ref).floored);
}

TEST(Metrics, PositiveLogitScalingChangesNothing) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(20), b(20);
    for (double& v : a) v = normal(rng);
    for (double& v : b) v = normal(rng);
    const auto ref = distribution_from_logits(b);
    const auto cand = distribution_from_logits(a);
    for (double c : {0.01, 3.0, 250.0}) {
      std::vector<double> scaled = a;
      for (double& v : scaled) v *= c;
      const auto cand_scaled = distribution_from_logits(scaled);
      for (std::size_t k : {1, 5, 10}) {
        EXPECT_EQ(precision_at_k(cand_scaled, ref, k), precision_at_k(cand, ref, k));
      }
      EXPECT_EQ(surprisal(cand_scaled, ref).value, surprisal(cand, ref).value);
    }
  }
}

TEST(MeanWithCi, ExampleAndOrderIndependence) {
  const std::vector<double> v = {1, 2, 3, 4};
  const MeanCi m = mean_with_ci(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.ci95, 1.96 * std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(m.n, 4u);
  EXPECT_EQ(mean_with_ci(std::vector<double>{7}).ci95, 0.0);
  EXPECT_EQ(mean_with_ci(std::vector<double>{}).n, 0u);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1e3);
  std::vector<double> values(1001);
  for (double& x : values) x = normal(rng);
  const MeanCi base = mean_with_ci(values);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(values.begin(), values.end(), rng);
    const MeanCi again = mean_with_ci(values);
    EXPECT_EQ(again.mean, base.mean);
    EXPECT_EQ(again.ci95, base.ci95);
  }
}

class EvalLm : public ::testing::Test {
 protected:
  void SetUp() override {
    weights = init_random(testing::small_config(42));
    split = testing::make_traces(weights, {.n_train = 200, .n_val = 60});
    grid = fit_all_pairs(split.train);
  }
  ModelWeights weights;
  testing::TraceSplit split;
  MapGrid grid;
};

TEST_F(EvalLm, TopLayerIsSelfAgreement) {
  const MetricsReport r = eval_lm_per_layer(split.validation, grid, weights, LmEvalOptions{});
  std::vector<double> own;
  for (std::size_t i = 0; i < split.validation.size(); ++i) {
    const auto ref = reference_distribution(split.validation, i, weights, true);
    own.push_back(-std::log(ref.probabilities[ref.argmax]));
  }
  const MeanCi expected = mean_with_ci(own);
  for (const char* caster : {"mat", "id"}) {
    const LayerMetrics* top = r.find_layer(3, caster);
    ASSERT_NE(top, nullptr);
    for (std::size_t k : {1, 5, 10}) EXPECT_EQ(top->precision_at(k).mean, 1.0);
    EXPECT_EQ(top->surprisal.mean, expected.mean);
    EXPECT_EQ(top->surprisal.ci95, expected.ci95);
  }
}

TEST_F(EvalLm, PrecisionNestedInK) {
  const MetricsReport r = eval_lm_per_layer(split.validation, grid, weights, LmEvalOptions{});
  ASSERT_EQ(r.layers.size(), 8u);
  for (const auto& l : r.layers) {
    EXPECT_LE(l.precision_at(1).mean, l.precision_at(5).mean);
    EXPECT_LE(l.precision_at(5).mean, l.precision_at(10).mean);
    EXPECT_GE(l.surprisal.mean, 0.0);
    EXPECT_EQ(l.precision_at(1).n, split.validation.size());
  }
}

TEST_F(EvalLm, MatchesPerRecordOracle) {
  const MetricsReport r = eval_lm_per_layer(split.validation, grid, weights, LmEvalOptions{});
  const auto& val = split.validation;
  for (std::size_t l = 0; l <= 3; ++l) {
    double hits = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const auto hl = val.layer(i, 3);
      const auto ref = oracle::distribution(weights, oracle::Vec(hl.begin(), hl.end()), true);
      const auto src = val.layer(i, l);
      oracle::Vec cast(src.begin(), src.end());
      if (l < 3) cast = oracle::mul(grid.at(MapKind::kMat, l, 3).matrix, cast);
      const auto cand = oracle::distribution(weights, cast, true);
      const auto best = std::max_element(cand.begin(), cand.end()) - cand.begin();
      const auto top = std::max_element(ref.begin(), ref.end()) - ref.begin();
      hits += best == top ? 1.0 : 0.0;
    }
    EXPECT_NEAR(r.find_layer(l, "mat")->precision_at(1).mean, hits / val.size(), 1e-12) << l;
  }
}

TEST_F(EvalLm, PermutingRecordsGivesIdenticalReport) {
  TraceSet shuffled = split.validation;
  std::mt19937_64 rng(9);
  std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
  const LmEvalOptions o{.threads = 2};
  EXPECT_EQ(eval_lm_per_layer(split.validation, grid, weights, o).to_csv(),
            eval_lm_per_layer(shuffled, grid, weights, o).to_csv());
  const MetricsReport a = eval_fit_grid(split.validation, grid);
  const MetricsReport b = eval_fit_grid(shuffled, grid);
  ASSERT_EQ(a.pairs.size(), b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) EXPECT_NEAR(a.pairs[i].r2, b.pairs[i].r2, 1e-12);
}

TEST_F(EvalLm, CsvShape) {
  const MetricsReport r = eval_lm_per_layer(split.validation, grid, weights, LmEvalOptions{});
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsCsvHeader);
  EXPECT_EQ(count_rows(csv, ",precision@"), 4u * 3u * 2u);
  EXPECT_EQ(count_rows(csv, ",surprisal,"), 4u * 2u);
  const std::string fit = eval_fit_grid(split.validation, grid).to_csv();
  EXPECT_EQ(count_rows(fit, ",r2,mat,"), 6u);
  EXPECT_EQ(count_rows(fit, ",r2,id,"), 6u);
}

TEST_F(EvalLm, Errors) {
  EXPECT_THROW(eval_lm_per_layer(split.validation, grid, weights, LmEvalOptions{.ks = {41}}),
               std::invalid_argument);
  EXPECT_THROW(eval_lm_per_layer(split.validation, grid, weights, LmEvalOptions{.ks = {}}),
               std::invalid_argument);
  const MapGrid partial = fit_target_column(split.train, 2);
  EXPECT_THROW(eval_lm_per_layer(split.validation, partial, weights, LmEvalOptions{}),
               std::out_of_range);
  EXPECT_NO_THROW(eval_lm_per_layer(split.validation, partial, weights,
                                    LmEvalOptions{.casters = {Caster::kId}}));
  const ModelWeights other = init_random([] {
    auto c = testing::small_config(1);
    c.d_hidden = 8;
    return c;
  }());
  EXPECT_THROW(eval_lm_per_layer(split.validation, grid, other, LmEvalOptions{}), DimensionError);
  TraceSet empty = split.validation;
  empty.records.clear();
  EXPECT_THROW(eval_lm_per_layer(empty, grid, weights, LmEvalOptions{}), std::invalid_argument);
}

TEST_F(EvalLm, FitGridOnTrainingReproducesFitMetadata) {
  const MetricsReport r = eval_fit_grid(split.train, grid);
  ASSERT_EQ(r.pairs.size(), 12u);
  for (const LayerMap& m : grid.maps()) {
    const PairMetrics* mat = r.find_pair(m.source_layer, m.target_layer, "mat");
    const PairMetrics* id = r.find_pair(m.source_layer, m.target_layer, "id");
    ASSERT_NE(mat, nullptr);
    ASSERT_NE(id, nullptr);
    EXPECT_NEAR(mat->r2, m.fit.r2_in_sample, 1e-10);
    EXPECT_GE(mat->r2, id->r2 - 1e-12);
    EXPECT_EQ(mat->n, 200u);
  }
  EXPECT_TRUE(r.warnings.empty());
}

TEST_F(EvalLm, FitGridReportsHoles) {
  const MetricsReport r = eval_fit_grid(split.validation, fit_target_column(split.train, 3));
  EXPECT_EQ(r.pairs.size(), 3u + 6u);
  EXPECT_EQ(r.warnings.size(), 3u);
  EXPECT_EQ(r.find_pair(0, 1, "mat"), nullptr);
  EXPECT_NE(r.find_pair(0, 1, "id"), nullptr);
}

TEST(EvalFit, IdentityChainIsPerfectlyLinear) {
  ModelWeights w = init_random(testing::small_config(43));
  make_identity_blocks(w, 1, 3);
  const auto split = testing::make_traces(w);
  const MapGrid grid = fit_all_pairs(split.train);
  for (const auto& p : eval_fit_grid(split.validation, grid).pairs) {
    EXPECT_GE(p.r2, 1.0 - 1e-9) << p.caster << " " << p.source << "->" << p.target;
  }
}

class EvalSubmodule : public ::testing::TestWithParam<ReplacementKind> {};

TEST_P(EvalSubmodule, MatchesSwappedOracleForward) {
  const ReplacementKind kind = GetParam();
  const ModelWeights w = init_random(testing::small_config(44));
  const auto split = testing::make_traces(w, {.n_train = 200, .n_val = 25, .taps = true});
  const MapGrid maps = submodule_grid(split.train, kind);
  const MetricsReport r =
      eval_submodule_per_layer(split.validation, maps, kind, w, LmEvalOptions{.ks = {1, 5}});
  ASSERT_EQ(r.layers.size(), 4u);
  const std::string caster = std::string("mat_") + to_string(kind);
  EXPECT_EQ(r.find_layer(3, caster)->precision_at(1).mean, 1.0);

  const BlockReplacement rep = to_replacement(maps, kind);
  oracle::SwapMaps swap;
  swap.kind = kind == ReplacementKind::kAttn  ? oracle::Swap::kAttn
              : kind == ReplacementKind::kFfn ? oracle::Swap::kFfn
                                              : oracle::Swap::kLn1Ln2;
  swap.first = rep.primary;
  swap.second = rep.secondary;
  const auto& val = split.validation;
  for (std::size_t start = 0; start < 3; ++start) {
    swap.start = start;
    double hits = 0.0;
    for (const auto& rec : val.records) {
      const std::vector<TokenId> prefix(rec.tokens.begin(), rec.tokens.begin() + rec.position + 1);
      const auto clean = oracle::forward(w, prefix);
      const auto swapped = oracle::forward(w, prefix, swap);
      const auto ref = oracle::distribution(w, clean[3][rec.position], true);
      const auto cand = oracle::distribution(w, swapped[3][rec.position], true);
      hits += std::max_element(cand.begin(), cand.end()) == cand.begin() +
                                                                (std::max_element(ref.begin(), ref.end()) - ref.begin())
                  ? 1.0
                  : 0.0;
    }
    EXPECT_NEAR(r.find_layer(start, caster)->precision_at(1).mean, hits / val.size(), 1e-12)
        << start;
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, EvalSubmodule,
                         ::testing::Values(ReplacementKind::kAttn, ReplacementKind::kFfn,
                                           ReplacementKind::kLn1Ln2),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(EvalSubmoduleErrors, NeedsTokens) {
  const ModelWeights w = init_random(testing::small_config(45));
  auto split = testing::make_traces(w, {.n_train = 60, .n_val = 10, .taps = true});
  const MapGrid maps = submodule_grid(split.train, ReplacementKind::kAttn);
  for (auto& rec : split.validation.records) rec.tokens.clear();
  split.validation.meta.max_tokens = 0;
  EXPECT_THROW(eval_submodule_per_layer(split.validation, maps, ReplacementKind::kAttn, w,
                                        LmEvalOptions{}),
               std::invalid_argument);
  split = testing::make_traces(w, {.n_train = 60, .n_val = 10, .taps = true});
  EXPECT_THROW(eval_submodule_per_layer(split.validation, maps, ReplacementKind::kFfn, w,
                                        LmEvalOptions{}),
               std::exception);
}

TEST(EvalMasked, BidirectionalModelEvaluates) {
  const ModelWeights w = init_random(testing::small_bidirectional(46));
  const auto split = testing::make_traces(w, {.n_train = 120, .n_val = 40});
  EXPECT_EQ(split.validation.meta.mode, SampleMode::kMaskedToken);
  const MetricsReport r =
      eval_lm_per_layer(split.validation, fit_all_pairs(split.train), w, LmEvalOptions{});
  EXPECT_EQ(r.find_layer(3, "mat")->precision_at(1).mean, 1.0);
  for (const auto& l : r.layers) EXPECT_LE(l.precision_at(1).mean, l.precision_at(10).mean);
}

}  // namespace
}  // namespace shortcut
