// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "shortcut/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "shortcut/errors.hpp"

namespace shortcut {
namespace {

// True when token a ranks strictly ahead of token b.
bool ahead(const std::vector<double>& p, std::size_t a, std::size_t b) {
  return p[a] > p[b] || (p[a] == p[b] && a < b);
}

}  // namespace

std::size_t VocabDistribution::rank_of(TokenId token) const {
  if (token >= probabilities.size()) throw std::out_of_range("rank_of: token out of range");
  std::size_t rank = 0;
  for (std::size_t t = 0; t < probabilities.size(); ++t) {
    if (ahead(probabilities, t, token)) ++rank;
  }
  return rank;
}

std::vector<TokenId> VocabDistribution::top(std::size_t m) const {
  m = std::min(m, probabilities.size());
  std::vector<TokenId> ids(probabilities.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(m), ids.end(),
                    [&](TokenId a, TokenId b) { return ahead(probabilities, a, b); });
  ids.resize(m);
  return ids;
}

double VocabDistribution::top_gap() const {
  if (probabilities.size() < 2) throw std::invalid_argument("top_gap: need at least 2 tokens");
  double first = -1.0;
  double second = -1.0;
  for (double p : probabilities) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return first - second;
}

VocabDistribution distribution_from_logits(std::span<const double> logits) {
  VocabDistribution d;
  d.probabilities = softmax(logits);
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  const double log_norm = top + std::log(total);
  d.log_probabilities.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) d.log_probabilities[i] = logits[i] - log_norm;
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.probabilities.size(); ++i) {
    if (d.probabilities[i] > d.probabilities[best]) best = i;
  }
  d.argmax = static_cast<TokenId>(best);
  return d;
}

VocabDistribution output_distribution(std::span<const double> h, const ModelWeights& weights,
                                      bool use_final_ln) {
  const auto& cfg = weights.config;
  if (h.size() != cfg.d_hidden) {
    throw DimensionError("output_distribution: hidden vector has length " +
                         std::to_string(h.size()) + ", model d_h is " +
                         std::to_string(cfg.d_hidden));
  }
  if (!all_finite(h)) throw NonFiniteError("output_distribution: non-finite hidden vector");
  std::vector<double> x(h.begin(), h.end());
  if (use_final_ln) {
    if (!weights.final_ln) {
      throw std::invalid_argument("output_distribution: model has no final layer norm");
    }
    x = layer_norm(x, *weights.final_ln, cfg.layer_norm_eps);
  }
  std::vector<double> logits(cfg.vocab_size, 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const auto row = weights.token_embedding.row(k);
    const double xk = x[k];
    for (std::size_t v = 0; v < logits.size(); ++v) logits[v] += row[v] * xk;
  }
  return distribution_from_logits(logits);
}

VocabDistribution output_distribution(std::span<const float> h, const ModelWeights& weights,
                                      bool use_final_ln) {
  const std::vector<double> wide(h.begin(), h.end());
  return output_distribution(std::span<const double>(wide), weights, use_final_ln);
}

int precision_at_k(const VocabDistribution& candidate, const VocabDistribution& reference,
                   std::size_t k) {
  if (k == 0) throw std::invalid_argument("precision_at_k: k must be >= 1");
  if (k > reference.size()) {
    throw std::invalid_argument("precision_at_k: k = " + std::to_string(k) +
                                " exceeds vocabulary size " + std::to_string(reference.size()));
  }
  if (candidate.size() != reference.size()) {
    throw DimensionError("precision_at_k: vocabulary sizes differ");
  }
  return reference.rank_of(candidate.argmax) < k ? 1 : 0;
}

SurprisalValue surprisal(const VocabDistribution& candidate, const VocabDistribution& reference) {
  if (candidate.size() != reference.size()) {
    throw DimensionError("surprisal: vocabulary sizes differ");
  }
  const double p = reference.probabilities[candidate.argmax];
  if (p < kProbabilityFloor) return {-std::log(kProbabilityFloor), true};
  return {-std::log(p), false};
}

}  // namespace shortcut
