// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unistd.h>

#include "shortcut/model.hpp"
#include "shortcut/traces.hpp"

namespace shortcut::testing {

/// A small causal model that keeps unit tests fast.
inline ModelConfig small_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.n_layers = 3;
  c.d_hidden = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.vocab_size = 40;
  c.max_seq_len = 16;
  c.seed = seed;
  return c;
}

inline ModelConfig small_bidirectional(std::uint64_t seed = 1) {
  ModelConfig c = small_config(seed);
  c.mode = AttentionMode::kBidirectional;
  c.mask_token_id = 39;
  return c;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("shortcut-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct TraceSplit {
  TraceSet train;
  TraceSet validation;
};

struct TraceRequest {
  std::size_t n_train = 200;
  std::size_t n_val = 80;
  std::uint64_t seed = 5;
  bool taps = false;
  bool full_distribution = false;
  std::size_t threads = 1;
};

/// Synthetic corpus → disjoint train/validation samples → traces.
inline TraceSplit make_traces(const ModelWeights& weights, const TraceRequest& req = {}) {
  const auto& cfg = weights.config;
  SyntheticCorpusOptions corpus_options;
  corpus_options.n_sequences = 2 * (req.n_train + req.n_val);
  corpus_options.min_length = 4;
  corpus_options.max_length = cfg.max_seq_len;
  corpus_options.vocab_size = cfg.vocab_size;
  corpus_options.reserved_token = cfg.mask_token_id;
  corpus_options.seed = req.seed;
  const Corpus corpus = synthetic_corpus(corpus_options);

  SamplingOptions sampling;
  sampling.mode = cfg.mode == AttentionMode::kCausal ? SampleMode::kNextToken
                                                      : SampleMode::kMaskedToken;
  sampling.seed = req.seed + 1;
  sampling.mask_token_id = cfg.mask_token_id;
  const auto samples = sample_corpus(corpus, req.n_train + req.n_val, sampling);
  const std::span<const Sample> all(samples);

  CollectOptions collect;
  collect.tap_submodules = req.taps;
  collect.full_distribution = req.full_distribution;
  collect.top_m = 10;
  collect.threads = req.threads;
  collect.split = Split::kTrain;
  TraceSplit out;
  out.train = collect_traces(weights, all.first(req.n_train), collect);
  collect.split = Split::kValidation;
  out.validation = collect_traces(weights, all.subspan(req.n_train), collect);
  return out;
}

}  // namespace shortcut::testing
