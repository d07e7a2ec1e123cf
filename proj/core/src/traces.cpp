// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "shortcut/traces.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "shortcut/distribution.hpp"
#include "shortcut/errors.hpp"
#include "shortcut/parallel.hpp"

namespace shortcut {

const char* to_string(SampleMode mode) noexcept {
  return mode == SampleMode::kNextToken ? "next_token" : "masked_token";
}

SampleMode sample_mode_from_string(std::string_view name) {
  if (name == "next_token") return SampleMode::kNextToken;
  if (name == "masked_token") return SampleMode::kMaskedToken;
  throw std::invalid_argument("unknown sample mode '" + std::string(name) + "'");
}

const char* to_string(Split split) noexcept {
  return split == Split::kTrain ? "train" : "validation";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

Corpus synthetic_corpus(const SyntheticCorpusOptions& options) {
  if (options.min_length == 0 || options.min_length > options.max_length) {
    throw std::invalid_argument("synthetic_corpus: need 1 <= min_length <= max_length");
  }
  std::vector<TokenId> alphabet;
  for (std::size_t t = 0; t < options.vocab_size; ++t) {
    if (options.reserved_token && t == *options.reserved_token) continue;
    alphabet.push_back(static_cast<TokenId>(t));
  }
  if (alphabet.empty()) throw std::invalid_argument("synthetic_corpus: empty vocabulary");
  std::vector<double> weights(alphabet.size());
  for (std::size_t r = 0; r < weights.size(); ++r) {
    weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), options.zipf_exponent);
  }

  std::mt19937_64 rng(options.seed);
  std::discrete_distribution<std::size_t> zipf(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> length(options.min_length, options.max_length);
  Corpus corpus(options.n_sequences);
  for (auto& seq : corpus) {
    seq.resize(length(rng));
    for (auto& t : seq) t = alphabet[zipf(rng)];
  }
  return corpus;
}

std::vector<Sample> sample_corpus(const Corpus& corpus, std::size_t n,
                                  const SamplingOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("sample_corpus: empty corpus");
  const bool masked = options.mode == SampleMode::kMaskedToken;
  if (masked && !options.mask_token_id) {
    throw std::invalid_argument("sample_corpus: masked_token mode needs a mask token id");
  }
  const std::size_t min_len = masked ? 1 : 2;
  auto effective_length = [&](const std::vector<TokenId>& s) {
    return options.max_seq_len == 0 ? s.size() : std::min(s.size(), options.max_seq_len);
  };

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (effective_length(corpus[i]) >= min_len) eligible.push_back(i);
  }
  if (n > eligible.size()) {
    throw std::invalid_argument("sample_corpus: requested " + std::to_string(n) +
                                " samples but only " + std::to_string(eligible.size()) +
                                " sequences are eligible");
  }

  std::mt19937_64 rng(options.seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& source = corpus[eligible[k]];
    const std::size_t len = effective_length(source);
    const std::size_t valid = masked ? len : len - 1;
    std::uniform_int_distribution<std::size_t> pick(0, valid - 1);
    Sample s;
    s.id = eligible[k];
    s.mode = options.mode;
    s.tokens.assign(source.begin(), source.begin() + static_cast<std::ptrdiff_t>(len));
    s.position = pick(rng);
    if (masked) {
      s.target_token = s.tokens[s.position];
      s.tokens[s.position] = *options.mask_token_id;
    } else {
      s.target_token = s.tokens[s.position + 1];
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::span<const float> TraceSet::layer(std::size_t record, std::size_t layer) const {
  if (layer > meta.n_layers) throw std::out_of_range("TraceSet::layer: layer > L");
  const auto& r = records.at(record);
  return std::span<const float>(r.layers).subspan(layer * meta.d_hidden, meta.d_hidden);
}

std::span<const float> TraceSet::tap(std::size_t record, std::size_t layer, TapSlot slot) const {
  if (!meta.has_submodules) {
    throw std::invalid_argument("TraceSet::tap: traces were collected without sub-module taps");
  }
  if (layer < 1 || layer > meta.n_layers) throw std::out_of_range("TraceSet::tap: layer");
  const auto& r = records.at(record);
  const std::size_t offset =
      ((layer - 1) * kTapSlots + static_cast<std::size_t>(slot)) * meta.d_hidden;
  return std::span<const float>(r.submodules).subspan(offset, meta.d_hidden);
}

Matrix TraceSet::layer_matrix(std::size_t l) const {
  Matrix m(records.size(), meta.d_hidden);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto v = layer(i, l);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

Matrix TraceSet::tap_matrix(std::size_t l, TapSlot slot) const {
  Matrix m(records.size(), meta.d_hidden);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto v = tap(i, l, slot);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

void TraceSet::validate() const {
  const std::size_t d = meta.d_hidden;
  if (d == 0) throw DimensionError("TraceSet: d_hidden must be positive");
  if (meta.vocab_size < 2) throw DimensionError("TraceSet: vocab_size must be >= 2");
  if (meta.top_m > meta.vocab_size) throw DimensionError("TraceSet: top_m exceeds vocab_size");
  for (const auto& r : records) {
    const std::string where = "TraceSet record " + std::to_string(r.sample_id);
    if (r.layers.size() != (meta.n_layers + 1) * d) {
      throw DimensionError(where + ": expected " + std::to_string(meta.n_layers + 1) +
                           " layer vectors of width " + std::to_string(d));
    }
    const std::size_t taps = meta.has_submodules ? meta.n_layers * kTapSlots * d : 0;
    if (r.submodules.size() != taps) throw DimensionError(where + ": sub-module tap width");
    if (r.reference_top.size() != meta.top_m) throw DimensionError(where + ": top-m width");
    const std::size_t full = meta.has_full_distribution ? meta.vocab_size : 0;
    if (r.reference_log_probs.size() != full) throw DimensionError(where + ": distribution width");
    if (meta.max_tokens > 0) {
      if (r.tokens.size() != r.seq_len || r.seq_len > meta.max_tokens) {
        throw DimensionError(where + ": token storage");
      }
    } else if (!r.tokens.empty()) {
      throw DimensionError(where + ": tokens stored but max_tokens is 0");
    }
    if (r.seq_len == 0 || r.position >= r.seq_len) {
      throw DimensionError(where + ": position outside sequence");
    }
  }
}

void require_disjoint(const TraceSet& train, const TraceSet& validation) {
  std::unordered_set<std::uint64_t> ids;
  for (const auto& r : train.records) ids.insert(r.sample_id);
  for (const auto& r : validation.records) {
    if (ids.contains(r.sample_id)) {
      throw std::invalid_argument("train and validation traces share sample id " +
                                  std::to_string(r.sample_id));
    }
  }
}

TraceSet collect_traces(const ModelWeights& weights, std::span<const Sample> samples,
                        const CollectOptions& options) {
  const auto& cfg = weights.config;
  const bool use_final_ln = options.use_final_ln.value_or(cfg.final_layernorm);
  const std::size_t d = cfg.d_hidden;

  TraceSet set;
  set.meta.n_layers = cfg.n_layers;
  set.meta.d_hidden = d;
  set.meta.vocab_size = cfg.vocab_size;
  set.meta.mode = samples.empty() ? SampleMode::kNextToken : samples.front().mode;
  set.meta.split = options.split;
  set.meta.source = options.source;
  set.meta.top_m = std::min(options.top_m, cfg.vocab_size);
  set.meta.max_tokens = options.store_tokens ? cfg.max_seq_len : 0;
  set.meta.has_submodules = options.tap_submodules;
  set.meta.has_full_distribution = options.full_distribution;
  set.meta.reference_final_ln = use_final_ln;

  std::vector<std::optional<TraceRecord>> slots(samples.size());
  std::vector<std::string> errors(samples.size());

  parallel_for(samples.size(), options.threads, [&](std::size_t i) {
    const Sample& s = samples[i];
    try {
      if (s.mode != set.meta.mode) throw std::invalid_argument("mixed sample modes in one batch");
      if (s.position >= s.tokens.size()) throw std::out_of_range("sample position out of range");
      if (s.mode == SampleMode::kMaskedToken &&
          (!cfg.mask_token_id || s.tokens[s.position] != *cfg.mask_token_id)) {
        throw std::invalid_argument("masked sample does not carry the model's mask token");
      }
      // Causal attention never looks right of the sampled position.
      std::span<const TokenId> input(s.tokens);
      if (cfg.mode == AttentionMode::kCausal) input = input.first(s.position + 1);
      const std::size_t position = s.position;
      const TapRecord taps =
          forward_with_taps(weights, input, std::span(&position, 1), options.tap_submodules);

      TraceRecord r;
      r.sample_id = s.id;
      r.position = static_cast<std::uint32_t>(s.position);
      r.seq_len = static_cast<std::uint32_t>(s.tokens.size());
      r.target_token = s.target_token;
      if (options.store_tokens) r.tokens = s.tokens;
      r.layers.reserve((cfg.n_layers + 1) * d);
      for (const Matrix& h : taps.hidden) {
        for (double v : h.row(0)) r.layers.push_back(static_cast<float>(v));
      }
      if (options.tap_submodules) {
        r.submodules.reserve(cfg.n_layers * kTapSlots * d);
        for (const auto& t : taps.submodules) {
          for (const Matrix* m :
               {&t.ln1_in, &t.ln1_out, &t.attn_out, &t.ln2_in, &t.ln2_out, &t.ffn_out}) {
            for (double v : m->row(0)) r.submodules.push_back(static_cast<float>(v));
          }
        }
      }
      // Reference summary from the stored (f32) final vector so a reader
      // recomputing it from the file gets the same answer.
      const std::span<const float> final_h(r.layers.data() + cfg.n_layers * d, d);
      const VocabDistribution ref = output_distribution(final_h, weights, use_final_ln);
      for (TokenId t : ref.top(set.meta.top_m)) {
        r.reference_top.push_back({t, static_cast<float>(ref.log_probabilities[t])});
      }
      if (options.full_distribution) {
        r.reference_log_probs.assign(ref.log_probabilities.begin(), ref.log_probabilities.end());
      }
      slots[i] = std::move(r);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (slots[i]) {
      set.records.push_back(std::move(*slots[i]));
    } else {
      set.failures.push_back({samples[i].id, errors[i]});
    }
  }
  return set;
}

}  // namespace shortcut
