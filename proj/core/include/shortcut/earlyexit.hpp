// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shortcut/distribution.hpp"
#include "shortcut/eval.hpp"
#include "shortcut/mappings.hpp"
#include "shortcut/traces.hpp"

namespace shortcut {

struct ExitPolicy {
  double lambda = 0.0;
  /// N: mean input length up to and including the sampled position.
  double mean_prefix_length = 1.0;
  Caster caster = Caster::kMat;
};

/// Mean of (position + 1) over the records.
double mean_prefix_length(const TraceSet& traces);

/// 0.9·λ + 0.1·exp(−4·i / N)
double confidence_threshold(const ExitPolicy& policy, double position);

/// True iff p(1st) − p(2nd) > threshold.
bool should_exit(const VocabDistribution& candidate, double threshold);

struct ExitResult {
  double avg_layers = 0.0;
  double precision_at_1 = 0.0;
  std::vector<std::size_t> exit_layers;
};

struct ExitOptions {
  bool use_final_ln = true;
  std::size_t threads = 1;
};

/// Walks layers 1..L per record, exiting at the first layer whose cast
/// distribution is confident enough (unconditionally at L). Precision is
/// Precision@1 of the exited prediction against δ(h^L).
ExitResult simulate_early_exit(const TraceSet& validation, const MapGrid& grid,
                               const ModelWeights& weights, const ExitPolicy& policy,
                               const ExitOptions& options);

/// Every record exits at `layer` (0..L): the fixed-exit baseline.
ExitResult simulate_fixed_exit(const TraceSet& validation, const MapGrid& grid,
                               const ModelWeights& weights, Caster caster, std::size_t layer,
                               const ExitOptions& options);

/// {−1.112} ∪ {0.1·i : 0 ≤ i ≤ 10} ∪ {1.112}, plus {1 + 0.0112·i : 0 < i < 10}
/// for the id caster; ascending.
std::vector<double> default_lambda_grid(Caster caster);

struct SweepPoint {
  double lambda = 0.0;
  Caster caster = Caster::kMat;
  double avg_layers = 0.0;
  double precision_at_1 = 0.0;
  std::size_t n = 0;
};

/// One point per (caster, λ). Empty `lambdas` selects the default grid
/// of each caster.
std::vector<SweepPoint> sweep_early_exit(const TraceSet& validation, const MapGrid& grid,
                                         const ModelWeights& weights,
                                         const std::vector<Caster>& casters,
                                         const std::vector<double>& lambdas,
                                         const ExitOptions& options);

inline constexpr std::string_view kSweepCsvHeader = "lambda,caster,avg_layers,precision_at_1,n";

std::string sweep_to_csv(const std::vector<SweepPoint>& points);

}  // namespace shortcut
