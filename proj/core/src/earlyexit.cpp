// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "shortcut/earlyexit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "shortcut/parallel.hpp"

namespace shortcut {

double mean_prefix_length(const TraceSet& traces) {
  if (traces.size() == 0) throw std::invalid_argument("mean_prefix_length: no records");
  std::vector<double> lengths;
  lengths.reserve(traces.size());
  for (const auto& r : traces.records) lengths.push_back(static_cast<double>(r.position) + 1.0);
  return mean_with_ci(lengths).mean;
}

double confidence_threshold(const ExitPolicy& policy, double position) {
  if (!(policy.mean_prefix_length > 0.0)) {
    throw std::invalid_argument("confidence_threshold: N must be positive");
  }
  return 0.9 * policy.lambda + 0.1 * std::exp(-4.0 * position / policy.mean_prefix_length);
}

bool should_exit(const VocabDistribution& candidate, double threshold) {
  return candidate.top_gap() > threshold;
}

namespace {

// Everything about one record that does not depend on λ: the confidence
// gap and Precision@1 hit of the cast prediction at each layer 1..L.
struct Profile {
  std::size_t position = 0;
  std::vector<double> gap;  // index = layer
  std::vector<int> hit;     // index = layer
};

std::vector<Profile> profiles(const TraceSet& validation, const MapGrid& grid,
                              const ModelWeights& weights, Caster caster,
                              const ExitOptions& options) {
  require_compatible(weights, validation.meta);
  const std::size_t top = validation.meta.n_layers;
  if (top == 0) throw std::invalid_argument("early exit needs at least one layer");
  if (validation.size() == 0) throw std::invalid_argument("early exit: no validation records");
  if (caster == Caster::kMat) {
    require_compatible(grid, validation.meta);
    for (std::size_t l = 1; l < top; ++l) grid.at(MapKind::kMat, l, top);
  }
  std::vector<Profile> out(validation.size());
  parallel_for(validation.size(), options.threads, [&](std::size_t r) {
    Profile& p = out[r];
    p.position = validation.records[r].position;
    p.gap.assign(top + 1, 0.0);
    p.hit.assign(top + 1, 0);
    const VocabDistribution ref =
        reference_distribution(validation, r, weights, options.use_final_ln);
    for (std::size_t l = 1; l <= top; ++l) {
      const auto cast = cast_to_final(validation, r, l, caster, grid);
      const auto cand =
          output_distribution(std::span<const double>(cast), weights, options.use_final_ln);
      p.gap[l] = cand.top_gap();
      p.hit[l] = precision_at_k(cand, ref, 1);
    }
  });
  return out;
}

ExitResult summarize(std::vector<std::size_t> exit_layers, const std::vector<int>& hits) {
  std::vector<double> layers(exit_layers.begin(), exit_layers.end());
  std::vector<double> precision(hits.begin(), hits.end());
  ExitResult out;
  out.avg_layers = mean_with_ci(layers).mean;
  out.precision_at_1 = mean_with_ci(precision).mean;
  out.exit_layers = std::move(exit_layers);
  return out;
}

ExitResult run_policy(const std::vector<Profile>& profiles, const ExitPolicy& policy,
                      std::size_t top) {
  std::vector<std::size_t> exits(profiles.size());
  std::vector<int> hits(profiles.size());
  for (std::size_t r = 0; r < profiles.size(); ++r) {
    const Profile& p = profiles[r];
    const double threshold = confidence_threshold(policy, static_cast<double>(p.position));
    std::size_t layer = top;
    for (std::size_t l = 1; l < top; ++l) {
      if (p.gap[l] > threshold) {
        layer = l;
        break;
      }
    }
    exits[r] = layer;
    hits[r] = p.hit[layer];
  }
  return summarize(std::move(exits), hits);
}

}  // namespace

ExitResult simulate_early_exit(const TraceSet& validation, const MapGrid& grid,
                               const ModelWeights& weights, const ExitPolicy& policy,
                               const ExitOptions& options) {
  const auto p = profiles(validation, grid, weights, policy.caster, options);
  return run_policy(p, policy, validation.meta.n_layers);
}

ExitResult simulate_fixed_exit(const TraceSet& validation, const MapGrid& grid,
                               const ModelWeights& weights, Caster caster, std::size_t layer,
                               const ExitOptions& options) {
  require_compatible(weights, validation.meta);
  const std::size_t top = validation.meta.n_layers;
  if (layer > top) throw std::invalid_argument("simulate_fixed_exit: layer > L");
  if (validation.size() == 0) throw std::invalid_argument("simulate_fixed_exit: no records");
  std::vector<int> hits(validation.size());
  parallel_for(validation.size(), options.threads, [&](std::size_t r) {
    const VocabDistribution ref =
        reference_distribution(validation, r, weights, options.use_final_ln);
    const auto cast = cast_to_final(validation, r, layer, caster, grid);
    const auto cand =
        output_distribution(std::span<const double>(cast), weights, options.use_final_ln);
    hits[r] = precision_at_k(cand, ref, 1);
  });
  return summarize(std::vector<std::size_t>(validation.size(), layer), hits);
}

std::vector<double> default_lambda_grid(Caster caster) {
  std::vector<double> grid = {-1.112};
  for (int i = 0; i <= 10; ++i) grid.push_back(0.1 * i);
  grid.push_back(1.112);
  if (caster == Caster::kId) {
    for (int i = 1; i < 10; ++i) grid.push_back(1.0 + 0.0112 * i);
  }
  std::sort(grid.begin(), grid.end());
  return grid;
}

std::vector<SweepPoint> sweep_early_exit(const TraceSet& validation, const MapGrid& grid,
                                         const ModelWeights& weights,
                                         const std::vector<Caster>& casters,
                                         const std::vector<double>& lambdas,
                                         const ExitOptions& options) {
  std::vector<SweepPoint> points;
  const double n_mean = mean_prefix_length(validation);
  for (Caster caster : casters) {
    const auto p = profiles(validation, grid, weights, caster, options);
    const auto grid_lambdas = lambdas.empty() ? default_lambda_grid(caster) : lambdas;
    for (double lambda : grid_lambdas) {
      const auto result =
          run_policy(p, ExitPolicy{lambda, n_mean, caster}, validation.meta.n_layers);
      points.push_back({lambda, caster, result.avg_layers, result.precision_at_1, validation.size()});
    }
  }
  return points;
}

std::string sweep_to_csv(const std::vector<SweepPoint>& points) {
  std::string out(kSweepCsvHeader);
  out += "\n";
  char buf[160];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%s,%.17g,%.17g,%zu\n", p.lambda, to_string(p.caster),
                  p.avg_layers, p.precision_at_1, p.n);
    out += buf;
  }
  return out;
}

}  // namespace shortcut
