// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shortcut/linalg.hpp"
#include "shortcut/model.hpp"

namespace shortcut {

enum class SampleMode { kNextToken, kMaskedToken };
enum class Split { kTrain, kValidation };

const char* to_string(SampleMode mode) noexcept;
SampleMode sample_mode_from_string(std::string_view name);
const char* to_string(Split split) noexcept;
Split split_from_string(std::string_view name);

using Corpus = std::vector<std::vector<TokenId>>;

/// Seeded token sequences with Zipf-distributed token frequencies.
struct SyntheticCorpusOptions {
  std::size_t n_sequences = 10000;
  std::size_t min_length = 8;
  std::size_t max_length = 48;
  std::size_t vocab_size = 256;
  double zipf_exponent = 1.1;
  /// Never emitted (e.g. the mask token).
  std::optional<TokenId> reserved_token;
  std::uint64_t seed = 0;
};

Corpus synthetic_corpus(const SyntheticCorpusOptions& options);

struct Sample {
  /// Index of the source sequence in the corpus; unique within a sampling run.
  std::uint64_t id = 0;
  /// Input tokens; in masked mode the token at `position` is the mask.
  std::vector<TokenId> tokens;
  std::size_t position = 0;
  SampleMode mode = SampleMode::kNextToken;
  /// Masked mode: the original token at `position`. Next-token mode: the
  /// token following `position`.
  TokenId target_token = 0;
};

struct SamplingOptions {
  SampleMode mode = SampleMode::kNextToken;
  std::uint64_t seed = 0;
  /// Required for masked mode.
  std::optional<TokenId> mask_token_id;
  /// Sequences longer than this are truncated first; 0 disables.
  std::size_t max_seq_len = 0;
};

/// Draws `n` distinct sequences and one uniformly random valid position in
/// each. Next-token mode uses positions 0..len−2 and skips sequences
/// shorter than 2.
std::vector<Sample> sample_corpus(const Corpus& corpus, std::size_t n,
                                  const SamplingOptions& options);

/// Slot order of the per-layer sub-module taps inside a trace record.
enum class TapSlot : std::size_t { kLn1In, kLn1Out, kAttnOut, kLn2In, kLn2Out, kFfnOut };
inline constexpr std::size_t kTapSlots = 6;

struct TopToken {
  TokenId token = 0;
  float log_prob = 0.0f;

  friend bool operator==(const TopToken&, const TopToken&) = default;
};

inline constexpr std::uint32_t kNoToken = 0xFFFFFFFFu;

struct TraceRecord {
  std::uint64_t sample_id = 0;
  std::uint32_t position = 0;
  std::uint32_t seq_len = 0;
  std::uint32_t target_token = kNoToken;
  /// The model input (mask already substituted); empty when not stored.
  std::vector<TokenId> tokens;
  /// (L+1) × d_h, layer-major.
  std::vector<float> layers;
  /// L × kTapSlots × d_h, empty unless sub-module taps were collected.
  std::vector<float> submodules;
  std::vector<TopToken> reference_top;
  /// d_v log-probabilities, empty unless requested.
  std::vector<float> reference_log_probs;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct TraceFailure {
  std::uint64_t sample_id = 0;
  std::string message;

  friend bool operator==(const TraceFailure&, const TraceFailure&) = default;
};

struct TraceMetadata {
  std::size_t n_layers = 0;
  std::size_t d_hidden = 0;
  std::size_t vocab_size = 0;
  SampleMode mode = SampleMode::kNextToken;
  Split split = Split::kTrain;
  std::string source;
  std::size_t top_m = 0;
  /// Per-record token slots; 0 when inputs are not stored.
  std::size_t max_tokens = 0;
  bool has_submodules = false;
  bool has_full_distribution = false;
  /// Whether reference summaries were computed through the final layer norm.
  bool reference_final_ln = false;
  /// Unrecognized metadata keys, preserved verbatim on rewrite.
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const TraceMetadata&, const TraceMetadata&) = default;
};

struct TraceSet {
  TraceMetadata meta;
  std::vector<TraceRecord> records;
  std::vector<TraceFailure> failures;

  std::size_t size() const noexcept { return records.size(); }
  std::span<const float> layer(std::size_t record, std::size_t layer) const;
  std::span<const float> tap(std::size_t record, std::size_t layer, TapSlot slot) const;
  /// h^layer of every record as an n × d_h matrix.
  Matrix layer_matrix(std::size_t layer) const;
  /// Tap `slot` of block `layer` (1-based) for every record.
  Matrix tap_matrix(std::size_t layer, TapSlot slot) const;
  /// Shape consistency of every record with the metadata.
  void validate() const;

  friend bool operator==(const TraceSet&, const TraceSet&) = default;
};

/// Throws std::invalid_argument if any sample id appears in both sets.
void require_disjoint(const TraceSet& train, const TraceSet& validation);

struct CollectOptions {
  bool tap_submodules = false;
  std::size_t top_m = 10;
  bool full_distribution = false;
  /// Defaults to the model's final_layernorm setting.
  std::optional<bool> use_final_ln;
  bool store_tokens = true;
  Split split = Split::kTrain;
  std::string source = "synthetic";
  std::size_t threads = 1;
};

/// Runs every sample through the model. Samples that fail are listed in
/// TraceSet::failures instead of aborting the batch.
TraceSet collect_traces(const ModelWeights& weights, std::span<const Sample> samples,
                        const CollectOptions& options);

/// Trace file: magic "HTRC", u16 version, u32-length JSON metadata, then
/// fixed-stride little-endian records (see docs/trace_format.md).
std::string serialize_traces(const TraceSet& set);
TraceSet deserialize_traces(std::string_view bytes);
void write_traces(const TraceSet& set, const std::filesystem::path& path);
TraceSet read_traces(const std::filesystem::path& path);

inline constexpr std::uint16_t kTraceFormatVersion = 1;

/// Bytes per record implied by the metadata.
std::size_t trace_record_stride(const TraceMetadata& meta);

}  // namespace shortcut
