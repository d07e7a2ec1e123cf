// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "shortcut/model.hpp"

namespace shortcut {

/// Probabilities floored at this value before taking logs for Surprisal.
inline constexpr double kProbabilityFloor = 1e-30;

/// Output distribution over the vocabulary. Ranking ties are broken in
/// favour of the lower token id everywhere (argmax, top-k, rank).
struct VocabDistribution {
  std::vector<double> probabilities;
  std::vector<double> log_probabilities;
  TokenId argmax = 0;

  std::size_t size() const noexcept { return probabilities.size(); }
  /// Number of tokens ranked strictly ahead of `token`.
  std::size_t rank_of(TokenId token) const;
  /// The `m` highest-ranked tokens, best first.
  std::vector<TokenId> top(std::size_t m) const;
  /// p(1st) − p(2nd).
  double top_gap() const;
};

VocabDistribution distribution_from_logits(std::span<const double> logits);

/// softmax(Eᵀ · x) with x = ln_f(h) when `use_final_ln`, else h.
VocabDistribution output_distribution(std::span<const double> h, const ModelWeights& weights,
                                      bool use_final_ln);
VocabDistribution output_distribution(std::span<const float> h, const ModelWeights& weights,
                                      bool use_final_ln);

/// 1 iff argmax(candidate) is among the top-k tokens of `reference`.
int precision_at_k(const VocabDistribution& candidate, const VocabDistribution& reference,
                   std::size_t k);

struct SurprisalValue {
  double value = 0.0;
  bool floored = false;
};

/// −ln reference[argmax(candidate)], with the probability floored.
SurprisalValue surprisal(const VocabDistribution& candidate, const VocabDistribution& reference);

}  // namespace shortcut
