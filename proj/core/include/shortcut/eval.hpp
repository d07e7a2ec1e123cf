// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shortcut/distribution.hpp"
#include "shortcut/mappings.hpp"
#include "shortcut/model.hpp"
#include "shortcut/traces.hpp"

namespace shortcut {

/// How an intermediate representation is turned into a final-layer substitute.
enum class Caster { kMat, kId };

const char* to_string(Caster caster) noexcept;
Caster caster_from_string(std::string_view name);

/// h^layer of `record` cast to layer L. At layer L the stored final vector
/// is returned unchanged for either caster.
std::vector<double> cast_to_final(const TraceSet& traces, std::size_t record, std::size_t layer,
                                  Caster caster, const MapGrid& grid);

struct MeanCi {
  double mean = 0.0;
  /// 1.96 · sample std / √n; 0 when n < 2.
  double ci95 = 0.0;
  std::size_t n = 0;
};

/// Mean and normal-approximation 95% half-width. Values are summed in
/// sorted order with pairwise association, so the result is independent of
/// the input order.
MeanCi mean_with_ci(std::span<const double> values);

struct LayerMetrics {
  std::size_t layer = 0;
  std::string caster;
  std::vector<std::size_t> ks;
  std::vector<MeanCi> precision;  // parallel to ks
  MeanCi surprisal;
  /// Reference probabilities that hit the Surprisal floor.
  std::size_t floored = 0;

  const MeanCi& precision_at(std::size_t k) const;
};

struct PairMetrics {
  std::size_t source = 0;
  std::size_t target = 0;
  std::string caster;
  double r2 = 0.0;
  std::size_t skipped_coordinates = 0;
  std::size_t n = 0;
};

/// Either a layer-pair r² grid or per-layer prediction metrics. Serializes
/// to CSV with columns layer,pair_target,metric,caster,value,ci95,n.
struct MetricsReport {
  std::size_t n_layers = 0;
  std::vector<PairMetrics> pairs;
  std::vector<LayerMetrics> layers;
  std::vector<std::string> warnings;

  const LayerMetrics* find_layer(std::size_t layer, std::string_view caster) const;
  const PairMetrics* find_pair(std::size_t source, std::size_t target,
                               std::string_view caster) const;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

inline constexpr std::string_view kMetricsCsvHeader = "layer,pair_target,metric,caster,value,ci95,n";

/// Coordinate-averaged r² of mat and id casts against the true h^ℓ′ for
/// every pair 0 ≤ ℓ < ℓ′ ≤ L. Missing mat maps are reported as warnings.
MetricsReport eval_fit_grid(const TraceSet& traces, const MapGrid& grid);

struct LmEvalOptions {
  std::vector<std::size_t> ks = {1, 5, 10};
  bool use_final_ln = true;
  std::vector<Caster> casters = {Caster::kMat, Caster::kId};
  std::size_t threads = 1;
};

/// Per-layer Precision@k and Surprisal of δ(cast(h^ℓ)) against δ(h^L),
/// for ℓ = 0..L.
MetricsReport eval_lm_per_layer(const TraceSet& validation, const MapGrid& grid,
                                const ModelWeights& weights, const LmEvalOptions& options);

/// Same metrics for the sub-module shortcut mat_<kind>: blocks 1..ℓ run
/// unmodified, blocks ℓ+1..L with the sub-module replaced, for every start
/// layer ℓ = 0..L. Needs stored input tokens.
MetricsReport eval_submodule_per_layer(const TraceSet& validation, const MapGrid& submodule_maps,
                                       ReplacementKind kind, const ModelWeights& weights,
                                       const LmEvalOptions& options);

/// Reference distribution δ(h^L) of one record, recomputed from the stored vector.
VocabDistribution reference_distribution(const TraceSet& traces, std::size_t record,
                                         const ModelWeights& weights, bool use_final_ln);

/// Guard shared by the evaluators: traces and model must agree on shapes.
void require_compatible(const ModelWeights& weights, const TraceMetadata& traces);

}  // namespace shortcut
