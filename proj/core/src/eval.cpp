// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "shortcut/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "shortcut/binary_io.hpp"
#include "shortcut/errors.hpp"
#include "shortcut/parallel.hpp"

namespace shortcut {

const char* to_string(Caster caster) noexcept { return caster == Caster::kMat ? "mat" : "id"; }

Caster caster_from_string(std::string_view name) {
  if (name == "mat") return Caster::kMat;
  if (name == "id") return Caster::kId;
  throw std::invalid_argument("unknown caster '" + std::string(name) + "'");
}

std::vector<double> cast_to_final(const TraceSet& traces, std::size_t record, std::size_t layer,
                                  Caster caster, const MapGrid& grid) {
  const auto h = traces.layer(record, layer);
  const std::size_t top = traces.meta.n_layers;
  if (layer == top || caster == Caster::kId) return {h.begin(), h.end()};
  return grid.at(MapKind::kMat, layer, top).apply(h);
}

MeanCi mean_with_ci(std::span<const double> values) {
  MeanCi out;
  out.n = values.size();
  if (values.empty()) return out;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  out.mean = pairwise_sum(sorted) / n;
  if (sorted.size() < 2) return out;
  std::vector<double> sq(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double e = sorted[i] - out.mean;
    sq[i] = e * e;
  }
  const double sample_var = pairwise_sum(sq) / (n - 1.0);
  out.ci95 = 1.96 * std::sqrt(sample_var) / std::sqrt(n);
  return out;
}

const MeanCi& LayerMetrics::precision_at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return precision[i];
  }
  throw std::out_of_range("LayerMetrics: no Precision@" + std::to_string(k));
}

const LayerMetrics* MetricsReport::find_layer(std::size_t layer, std::string_view caster) const {
  for (const auto& e : layers) {
    if (e.layer == layer && e.caster == caster) return &e;
  }
  return nullptr;
}

const PairMetrics* MetricsReport::find_pair(std::size_t source, std::size_t target,
                                            std::string_view caster) const {
  for (const auto& e : pairs) {
    if (e.source == source && e.target == target && e.caster == caster) return &e;
  }
  return nullptr;
}

namespace {

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void csv_row(std::string& out, std::size_t layer, std::size_t target, const std::string& metric,
             const std::string& caster, double value, std::optional<double> ci, std::size_t n) {
  out += std::to_string(layer) + "," + std::to_string(target) + "," + metric + "," + caster + "," +
         number(value) + "," + (ci ? number(*ci) : std::string()) + "," + std::to_string(n) + "\n";
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::string out(kMetricsCsvHeader);
  out += "\n";
  for (const auto& p : pairs) {
    csv_row(out, p.source, p.target, "r2", p.caster, p.r2, std::nullopt, p.n);
  }
  for (const auto& l : layers) {
    for (std::size_t i = 0; i < l.ks.size(); ++i) {
      csv_row(out, l.layer, n_layers, "precision@" + std::to_string(l.ks[i]), l.caster,
              l.precision[i].mean, l.precision[i].ci95, l.precision[i].n);
    }
    csv_row(out, l.layer, n_layers, "surprisal", l.caster, l.surprisal.mean, l.surprisal.ci95,
            l.surprisal.n);
  }
  return out;
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  io::write_file(path, to_csv());
}

void require_compatible(const ModelWeights& weights, const TraceMetadata& traces) {
  const auto& c = weights.config;
  if (c.d_hidden != traces.d_hidden || c.n_layers != traces.n_layers ||
      c.vocab_size != traces.vocab_size) {
    throw DimensionError("model (L=" + std::to_string(c.n_layers) +
                         ", d_h=" + std::to_string(c.d_hidden) +
                         ", d_v=" + std::to_string(c.vocab_size) + ") does not match traces (L=" +
                         std::to_string(traces.n_layers) + ", d_h=" +
                         std::to_string(traces.d_hidden) + ", d_v=" +
                         std::to_string(traces.vocab_size) + ")");
  }
}

VocabDistribution reference_distribution(const TraceSet& traces, std::size_t record,
                                         const ModelWeights& weights, bool use_final_ln) {
  return output_distribution(traces.layer(record, traces.meta.n_layers), weights, use_final_ln);
}

MetricsReport eval_fit_grid(const TraceSet& traces, const MapGrid& grid) {
  require_compatible(grid, traces.meta);
  const std::size_t top = traces.meta.n_layers;
  MetricsReport report;
  report.n_layers = top;
  std::vector<Matrix> layers;
  for (std::size_t l = 0; l <= top; ++l) layers.push_back(traces.layer_matrix(l));

  auto add = [&](std::size_t s, std::size_t t, const char* caster, const Matrix& predicted) {
    const R2Score r2 = r2_coordinate_averaged(predicted, layers[t]);
    report.pairs.push_back({s, t, caster, r2.value, r2.skipped_coordinates, traces.size()});
    if (r2.skipped_coordinates > 0) {
      report.warnings.push_back(std::string(caster) + " (" + std::to_string(s) + ", " +
                                std::to_string(t) + "): skipped " +
                                std::to_string(r2.skipped_coordinates) +
                                " constant target coordinates");
    }
  };
  for (std::size_t s = 0; s < top; ++s) {
    for (std::size_t t = s + 1; t <= top; ++t) {
      if (const LayerMap* m = grid.find(MapKind::kMat, s, t)) {
        add(s, t, "mat", m->apply_rows(layers[s]));
      } else {
        report.warnings.push_back("missing mat map (" + std::to_string(s) + ", " +
                                  std::to_string(t) + ")");
      }
      add(s, t, "id", layers[s]);
    }
  }
  return report;
}

namespace {

struct Outcome {
  std::vector<double> hits;  // per k
  double surprisal = 0.0;
  bool floored = false;
};

void check_ks(const std::vector<std::size_t>& ks, std::size_t vocab) {
  if (ks.empty()) throw std::invalid_argument("evaluation needs at least one k");
  for (std::size_t k : ks) {
    if (k == 0 || k > vocab) {
      throw std::invalid_argument("Precision@k needs 1 <= k <= d_v, got k = " + std::to_string(k));
    }
  }
}

Outcome score(const VocabDistribution& candidate, const VocabDistribution& reference,
              const std::vector<std::size_t>& ks) {
  Outcome o;
  for (std::size_t k : ks) o.hits.push_back(precision_at_k(candidate, reference, k));
  const auto s = surprisal(candidate, reference);
  o.surprisal = s.value;
  o.floored = s.floored;
  return o;
}

LayerMetrics aggregate(std::size_t layer, std::string caster, const std::vector<std::size_t>& ks,
                       const std::vector<Outcome>& outcomes) {
  LayerMetrics m;
  m.layer = layer;
  m.caster = std::move(caster);
  m.ks = ks;
  std::vector<double> column(outcomes.size());
  for (std::size_t j = 0; j < ks.size(); ++j) {
    for (std::size_t i = 0; i < outcomes.size(); ++i) column[i] = outcomes[i].hits[j];
    m.precision.push_back(mean_with_ci(column));
  }
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    column[i] = outcomes[i].surprisal;
    m.floored += outcomes[i].floored ? 1 : 0;
  }
  m.surprisal = mean_with_ci(column);
  return m;
}

void note_floors(MetricsReport& report) {
  for (const auto& l : report.layers) {
    if (l.floored > 0) {
      report.warnings.push_back(l.caster + " layer " + std::to_string(l.layer) + ": " +
                                std::to_string(l.floored) +
                                " reference probabilities floored for Surprisal");
    }
  }
}

}  // namespace

MetricsReport eval_lm_per_layer(const TraceSet& validation, const MapGrid& grid,
                                const ModelWeights& weights, const LmEvalOptions& options) {
  require_compatible(weights, validation.meta);
  const std::size_t top = validation.meta.n_layers;
  check_ks(options.ks, weights.config.vocab_size);
  if (validation.size() == 0) throw std::invalid_argument("eval_lm_per_layer: no records");
  if (std::find(options.casters.begin(), options.casters.end(), Caster::kMat) !=
      options.casters.end()) {
    require_compatible(grid, validation.meta);
    for (std::size_t l = 0; l < top; ++l) grid.at(MapKind::kMat, l, top);
  }

  const std::size_t n = validation.size();
  const std::size_t n_casters = options.casters.size();
  // outcomes[(layer * n_casters + c) * n + record]
  std::vector<Outcome> outcomes((top + 1) * n_casters * n);
  parallel_for(n, options.threads, [&](std::size_t r) {
    const VocabDistribution ref = reference_distribution(validation, r, weights, options.use_final_ln);
    for (std::size_t l = 0; l <= top; ++l) {
      for (std::size_t c = 0; c < n_casters; ++c) {
        const auto cast = cast_to_final(validation, r, l, options.casters[c], grid);
        const auto cand = output_distribution(std::span<const double>(cast), weights,
                                              options.use_final_ln);
        outcomes[(l * n_casters + c) * n + r] = score(cand, ref, options.ks);
      }
    }
  });

  MetricsReport report;
  report.n_layers = top;
  for (std::size_t l = 0; l <= top; ++l) {
    for (std::size_t c = 0; c < n_casters; ++c) {
      const auto first = outcomes.begin() + static_cast<std::ptrdiff_t>((l * n_casters + c) * n);
      report.layers.push_back(aggregate(l, to_string(options.casters[c]), options.ks,
                                        std::vector<Outcome>(first, first + static_cast<std::ptrdiff_t>(n))));
    }
  }
  note_floors(report);
  return report;
}

MetricsReport eval_submodule_per_layer(const TraceSet& validation, const MapGrid& submodule_maps,
                                       ReplacementKind kind, const ModelWeights& weights,
                                       const LmEvalOptions& options) {
  require_compatible(weights, validation.meta);
  require_compatible(submodule_maps, validation.meta);
  check_ks(options.ks, weights.config.vocab_size);
  if (validation.size() == 0) throw std::invalid_argument("eval_submodule_per_layer: no records");
  if (validation.meta.max_tokens == 0) {
    throw std::invalid_argument(
        "eval_submodule_per_layer: traces do not store input tokens; re-collect with tokens");
  }
  const std::size_t top = validation.meta.n_layers;
  const BlockReplacement replacement = to_replacement(submodule_maps, kind);
  {
    // Fail fast on missing maps: the start-layer-0 run needs all of them.
    const auto& rec = validation.records.front();
    const std::size_t position = rec.position;
    std::span<const TokenId> input(rec.tokens);
    if (weights.config.mode == AttentionMode::kCausal) input = input.first(position + 1);
    forward_from_layer(weights, embed(weights, input), 0, replacement);
  }

  const std::size_t n = validation.size();
  std::vector<Outcome> outcomes((top + 1) * n);
  parallel_for(n, options.threads, [&](std::size_t r) {
    const auto& rec = validation.records[r];
    const VocabDistribution ref = reference_distribution(validation, r, weights, options.use_final_ln);
    std::span<const TokenId> input(rec.tokens);
    if (weights.config.mode == AttentionMode::kCausal) input = input.first(rec.position + 1);
    const std::vector<Matrix> hidden = forward_all_layers(weights, input);
    for (std::size_t l = 0; l <= top; ++l) {
      VocabDistribution cand;
      if (l == top) {
        cand = ref;
      } else {
        const Matrix final_h = forward_from_layer(weights, hidden[l], l, replacement);
        cand = output_distribution(final_h.row(rec.position), weights, options.use_final_ln);
      }
      outcomes[l * n + r] = score(cand, ref, options.ks);
    }
  });

  MetricsReport report;
  report.n_layers = top;
  const std::string caster = std::string("mat_") + to_string(kind);
  for (std::size_t l = 0; l <= top; ++l) {
    const auto first = outcomes.begin() + static_cast<std::ptrdiff_t>(l * n);
    report.layers.push_back(
        aggregate(l, caster, options.ks, std::vector<Outcome>(first, first + static_cast<std::ptrdiff_t>(n))));
  }
  note_floors(report);
  return report;
}

}  // namespace shortcut
