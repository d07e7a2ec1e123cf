// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shortcut/linalg.hpp"

namespace shortcut {

using TokenId = std::uint32_t;

enum class AttentionMode { kCausal, kBidirectional };

const char* to_string(AttentionMode mode) noexcept;
AttentionMode attention_mode_from_string(std::string_view name);

/// Shape of the built-in pre-layer-norm transformer.
struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_hidden = 64;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 64;
  AttentionMode mode = AttentionMode::kCausal;
  bool final_layernorm = true;
  std::optional<TokenId> mask_token_id;
  std::uint64_t seed = 0;
  double layer_norm_eps = 1e-5;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named shapes: "desk" (the default toy size), "desk-bidirectional",
/// "gpt2", "gpt2-medium", "gpt2-large", "gpt2-xl", "bert-base", "bert-large".
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

struct LayerNormParams {
  std::vector<double> scale;
  std::vector<double> shift;

  friend bool operator==(const LayerNormParams&, const LayerNormParams&) = default;
};

/// One transformer block. Projections act on column vectors (y = W · x).
struct BlockWeights {
  LayerNormParams ln1;
  Matrix query;   // d_h × d_h
  Matrix key;     // d_h × d_h
  Matrix value;   // d_h × d_h
  Matrix output;  // d_h × d_h
  LayerNormParams ln2;
  Matrix ffn_in;                     // d_ffn × d_h
  std::vector<double> ffn_in_bias;   // d_ffn
  Matrix ffn_out;                    // d_h × d_ffn
  std::vector<double> ffn_out_bias;  // d_h

  friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

struct ModelWeights {
  ModelConfig config;
  Matrix token_embedding;     // d_h × d_v, column t embeds token t
  Matrix position_embedding;  // d_h × max_seq_len
  std::vector<BlockWeights> blocks;
  std::optional<LayerNormParams> final_ln;

  /// Shape and finiteness check against `config`.
  void validate() const;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Deterministic in config.seed. Matrix entries are N(0, 1/d_h) draws,
/// rounded to float precision so the weight file round-trips exactly;
/// layer norms start at scale 1 / shift 0 and biases at 0.
ModelWeights init_random(const ModelConfig& config);

/// Zeroes the value/output projections and the FFN output of blocks in
/// [first_layer, last_layer] (1-based), turning them into exact identities.
void make_identity_blocks(ModelWeights& weights, std::size_t first_layer,
                          std::size_t last_layer);

/// Weight file: magic "SCLM", u16 version, u32-length JSON config, u32
/// tensor count, then named f32 little-endian row-major tensors.
std::string serialize_weights(const ModelWeights& weights);
ModelWeights deserialize_weights(std::string_view bytes);
void write_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights read_weights(const std::filesystem::path& path);

inline constexpr std::uint16_t kWeightFormatVersion = 1;

// Sub-module building blocks. Rows of the input matrices are positions.

Matrix layer_norm(const Matrix& rows, const LayerNormParams& params, double eps);
std::vector<double> layer_norm(std::span<const double> x, const LayerNormParams& params,
                               double eps);
double gelu(double x) noexcept;

/// Multi-head self-attention over already-normalized rows; returns the
/// pre-residual output v (n × d_h).
Matrix attention(const BlockWeights& block, const Matrix& normed, std::size_t n_heads,
                 AttentionMode mode);
/// Softmax attention pattern (n × n) of one head.
Matrix attention_pattern(const BlockWeights& block, const Matrix& normed,
                         std::size_t n_heads, std::size_t head, AttentionMode mode);
Matrix feed_forward(const BlockWeights& block, const Matrix& normed);

/// Token + position embedding, one row per position (H^0).
Matrix embed(const ModelWeights& weights, std::span<const TokenId> tokens);

/// Sub-module boundary vectors of one block at the requested positions
/// (rows follow TapRecord::positions).
struct SubmoduleTaps {
  Matrix ln1_in;
  Matrix ln1_out;
  Matrix attn_out;  // pre-residual attention output
  Matrix ln2_in;    // ln1_in + attn_out
  Matrix ln2_out;
  Matrix ffn_out;   // pre-residual FFN output

  friend bool operator==(const SubmoduleTaps&, const SubmoduleTaps&) = default;
};

struct TapRecord {
  std::vector<std::size_t> positions;
  /// hidden[ℓ] holds h^ℓ at each requested position, ℓ = 0..L.
  std::vector<Matrix> hidden;
  /// submodules[ℓ-1] holds the taps of block ℓ; empty unless requested.
  std::vector<SubmoduleTaps> submodules;

  friend bool operator==(const TapRecord&, const TapRecord&) = default;
};

TapRecord forward_with_taps(const ModelWeights& weights, std::span<const TokenId> tokens,
                            std::span<const std::size_t> positions, bool tap_submodules);

/// H^0..H^L for every position.
std::vector<Matrix> forward_all_layers(const ModelWeights& weights,
                                       std::span<const TokenId> tokens);

enum class ReplacementKind { kAttn, kFfn, kLn1Ln2 };

const char* to_string(ReplacementKind kind) noexcept;
ReplacementKind replacement_kind_from_string(std::string_view name);

/// Per-layer linear stand-ins for sub-modules, keyed by 1-based layer.
/// kAttn / kFfn use `primary`; kLn1Ln2 uses `primary` for ln1 and
/// `secondary` for ln2.
struct BlockReplacement {
  ReplacementKind kind = ReplacementKind::kAttn;
  std::map<std::size_t, Matrix> primary;
  std::map<std::size_t, Matrix> secondary;
};

/// Runs blocks start_layer+1..L on `hidden` (rows = positions, H^start)
/// with the named sub-modules replaced, returning H^L.
Matrix forward_from_layer(const ModelWeights& weights, const Matrix& hidden,
                          std::size_t start_layer, const BlockReplacement& replacement);

/// Blocks 1..start_layer run unmodified, the rest replaced; returns the
/// final hidden states at `positions` (one row each).
Matrix forward_with_replacements(const ModelWeights& weights, std::span<const TokenId> tokens,
                                 std::size_t start_layer, const BlockReplacement& replacement,
                                 std::span<const std::size_t> positions);

}  // namespace shortcut
