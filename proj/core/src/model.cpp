// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "shortcut/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "shortcut/errors.hpp"

namespace shortcut {

const char* to_string(AttentionMode mode) noexcept {
  return mode == AttentionMode::kCausal ? "causal" : "bidirectional";
}

AttentionMode attention_mode_from_string(std::string_view name) {
  if (name == "causal") return AttentionMode::kCausal;
  if (name == "bidirectional") return AttentionMode::kBidirectional;
  throw std::invalid_argument("unknown attention mode '" + std::string(name) + "'");
}

const char* to_string(ReplacementKind kind) noexcept {
  switch (kind) {
    case ReplacementKind::kAttn: return "attn";
    case ReplacementKind::kFfn: return "ffn";
    case ReplacementKind::kLn1Ln2: return "ln1_ln2";
  }
  return "unknown";
}

ReplacementKind replacement_kind_from_string(std::string_view name) {
  if (name == "attn") return ReplacementKind::kAttn;
  if (name == "ffn") return ReplacementKind::kFfn;
  if (name == "ln1_ln2") return ReplacementKind::kLn1Ln2;
  throw std::invalid_argument("unknown sub-module kind '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  // n_layers == 0 is accepted: a degenerate stack where h^L == h^0.
  if (d_hidden == 0) throw std::invalid_argument("ModelConfig: d_hidden must be positive");
  if (n_heads == 0 || d_hidden % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_hidden must be divisible by n_heads");
  }
  if (d_ffn == 0) throw std::invalid_argument("ModelConfig: d_ffn must be positive");
  if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
  if (max_seq_len == 0) throw std::invalid_argument("ModelConfig: max_seq_len must be positive");
  if (mask_token_id) {
    if (mode != AttentionMode::kBidirectional) {
      throw std::invalid_argument("ModelConfig: mask_token_id requires bidirectional mode");
    }
    if (*mask_token_id >= vocab_size) {
      throw std::invalid_argument("ModelConfig: mask_token_id out of vocabulary");
    }
  }
  if (!(layer_norm_eps >= 0.0) || !std::isfinite(layer_norm_eps)) {
    throw std::invalid_argument("ModelConfig: layer_norm_eps must be finite and >= 0");
  }
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["n_layers"] = n_layers;
  j["d_hidden"] = d_hidden;
  j["n_heads"] = n_heads;
  j["d_ffn"] = d_ffn;
  j["vocab_size"] = vocab_size;
  j["max_seq_len"] = max_seq_len;
  j["mode"] = to_string(mode);
  j["final_layernorm"] = final_layernorm;
  j["mask_token_id"] = mask_token_id ? nlohmann::json(*mask_token_id) : nlohmann::json(nullptr);
  j["seed"] = seed;
  j["layer_norm_eps"] = layer_norm_eps;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_hidden = j.at("d_hidden").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ffn = j.at("d_ffn").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.mode = attention_mode_from_string(j.at("mode").get<std::string>());
  c.final_layernorm = j.at("final_layernorm").get<bool>();
  if (j.contains("mask_token_id") && !j.at("mask_token_id").is_null()) {
    c.mask_token_id = j.at("mask_token_id").get<TokenId>();
  }
  c.seed = j.value("seed", std::uint64_t{0});
  c.layer_norm_eps = j.value("layer_norm_eps", 1e-5);
  return c;
}

namespace {

ModelConfig shape(std::size_t layers, std::size_t d_h, std::size_t heads, std::size_t vocab,
                  std::size_t max_len, AttentionMode mode) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_hidden = d_h;
  c.n_heads = heads;
  c.d_ffn = 4 * d_h;
  c.vocab_size = vocab;
  c.max_seq_len = max_len;
  c.mode = mode;
  return c;
}

}  // namespace

ModelConfig preset(std::string_view name) {
  using enum AttentionMode;
  if (name == "desk") return shape(8, 64, 4, 256, 64, kCausal);
  if (name == "desk-bidirectional") {
    auto c = shape(8, 64, 4, 256, 64, kBidirectional);
    c.mask_token_id = 255;
    return c;
  }
  if (name == "gpt2") return shape(12, 768, 12, 50257, 1024, kCausal);
  if (name == "gpt2-medium") return shape(24, 1024, 16, 50257, 1024, kCausal);
  if (name == "gpt2-large") return shape(36, 1280, 20, 50257, 1024, kCausal);
  if (name == "gpt2-xl") return shape(48, 1600, 25, 50257, 1024, kCausal);
  if (name == "bert-base" || name == "bert-large") {
    auto c = name == "bert-base" ? shape(12, 768, 12, 30522, 512, kBidirectional)
                                 : shape(24, 1024, 16, 30522, 512, kBidirectional);
    c.mask_token_id = 103;
    c.layer_norm_eps = 1e-12;
    return c;
  }
  throw std::invalid_argument("unknown model preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  return {"desk", "desk-bidirectional", "gpt2", "gpt2-medium",
          "gpt2-large", "gpt2-xl", "bert-base", "bert-large"};
}

namespace {

void check_ln(const LayerNormParams& ln, std::size_t d, const std::string& what) {
  if (ln.scale.size() != d || ln.shift.size() != d) {
    throw DimensionError(what + ": layer norm width mismatch");
  }
  if (!all_finite(ln.scale) || !all_finite(ln.shift)) {
    throw NonFiniteError(what + ": non-finite layer norm parameters");
  }
}

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(what + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
  }
  if (!all_finite(m.values())) throw NonFiniteError(what + ": non-finite entries");
}

}  // namespace

void ModelWeights::validate() const {
  config.validate();
  const std::size_t d = config.d_hidden;
  check_matrix(token_embedding, d, config.vocab_size, "token_embedding");
  check_matrix(position_embedding, d, config.max_seq_len, "position_embedding");
  if (blocks.size() != config.n_layers) {
    throw DimensionError("ModelWeights: expected " + std::to_string(config.n_layers) +
                         " blocks, got " + std::to_string(blocks.size()));
  }
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "blocks." + std::to_string(l + 1);
    check_ln(b.ln1, d, p + ".ln1");
    check_ln(b.ln2, d, p + ".ln2");
    check_matrix(b.query, d, d, p + ".query");
    check_matrix(b.key, d, d, p + ".key");
    check_matrix(b.value, d, d, p + ".value");
    check_matrix(b.output, d, d, p + ".output");
    check_matrix(b.ffn_in, config.d_ffn, d, p + ".ffn_in");
    check_matrix(b.ffn_out, d, config.d_ffn, p + ".ffn_out");
    if (b.ffn_in_bias.size() != config.d_ffn || b.ffn_out_bias.size() != d) {
      throw DimensionError(p + ": FFN bias width mismatch");
    }
  }
  if (config.final_layernorm != final_ln.has_value()) {
    throw DimensionError("ModelWeights: final layer norm presence disagrees with config");
  }
  if (final_ln) check_ln(*final_ln, d, "final_ln");
}

ModelWeights init_random(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(config.d_hidden)));
  auto draw = [&](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = static_cast<double>(static_cast<float>(normal(rng)));
    return m;
  };
  const std::size_t d = config.d_hidden;
  const LayerNormParams unit{std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)};

  ModelWeights w;
  w.config = config;
  w.token_embedding = draw(d, config.vocab_size);
  w.position_embedding = draw(d, config.max_seq_len);
  w.blocks.reserve(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    BlockWeights b;
    b.ln1 = unit;
    b.query = draw(d, d);
    b.key = draw(d, d);
    b.value = draw(d, d);
    b.output = draw(d, d);
    b.ln2 = unit;
    b.ffn_in = draw(config.d_ffn, d);
    b.ffn_in_bias.assign(config.d_ffn, 0.0);
    b.ffn_out = draw(d, config.d_ffn);
    b.ffn_out_bias.assign(d, 0.0);
    w.blocks.push_back(std::move(b));
  }
  if (config.final_layernorm) w.final_ln = unit;
  return w;
}

void make_identity_blocks(ModelWeights& weights, std::size_t first_layer, std::size_t last_layer) {
  if (first_layer < 1 || last_layer > weights.blocks.size() || first_layer > last_layer) {
    throw std::out_of_range("make_identity_blocks: bad layer range");
  }
  for (std::size_t l = first_layer; l <= last_layer; ++l) {
    auto& b = weights.blocks[l - 1];
    for (Matrix* m : {&b.value, &b.output, &b.ffn_out}) {
      std::fill(m->values().begin(), m->values().end(), 0.0);
    }
    std::fill(b.ffn_out_bias.begin(), b.ffn_out_bias.end(), 0.0);
  }
}

std::vector<double> layer_norm(std::span<const double> x, const LayerNormParams& params,
                               double eps) {
  const std::size_t d = x.size();
  if (params.scale.size() != d || params.shift.size() != d) {
    throw DimensionError("layer_norm: width mismatch");
  }
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> y(d);
  for (std::size_t k = 0; k < d; ++k) {
    y[k] = (x[k] - mean) * inv * params.scale[k] + params.shift[k];
  }
  return y;
}

Matrix layer_norm(const Matrix& rows, const LayerNormParams& params, double eps) {
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    const auto y = layer_norm(rows.row(i), params, eps);
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

double gelu(double x) noexcept {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

namespace {

std::size_t head_width(const Matrix& normed, std::size_t n_heads) {
  if (n_heads == 0 || normed.cols() % n_heads != 0) {
    throw DimensionError("attention: width not divisible by head count");
  }
  return normed.cols() / n_heads;
}

// Softmax weights of query row i over key rows [0, limit) for one head.
void head_weights(const Matrix& q, const Matrix& k, std::size_t i, std::size_t limit,
                  std::size_t offset, std::size_t width, std::vector<double>& out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  out.assign(limit, 0.0);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < limit; ++j) {
    double s = 0.0;
    for (std::size_t c = offset; c < offset + width; ++c) s += q(i, c) * k(j, c);
    out[j] = s * scale;
    top = std::max(top, out[j]);
  }
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : out) v /= total;
}

}  // namespace

Matrix attention_pattern(const BlockWeights& block, const Matrix& normed, std::size_t n_heads,
                         std::size_t head, AttentionMode mode) {
  const std::size_t width = head_width(normed, n_heads);
  if (head >= n_heads) throw std::out_of_range("attention_pattern: head index");
  const Matrix q = matmul_transposed(normed, block.query);
  const Matrix k = matmul_transposed(normed, block.key);
  const std::size_t n = normed.rows();
  Matrix pattern(n, n);
  std::vector<double> w;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t limit = mode == AttentionMode::kCausal ? i + 1 : n;
    head_weights(q, k, i, limit, head * width, width, w);
    for (std::size_t j = 0; j < limit; ++j) pattern(i, j) = w[j];
  }
  return pattern;
}

Matrix attention(const BlockWeights& block, const Matrix& normed, std::size_t n_heads,
                 AttentionMode mode) {
  const std::size_t width = head_width(normed, n_heads);
  const std::size_t n = normed.rows();
  const Matrix q = matmul_transposed(normed, block.query);
  const Matrix k = matmul_transposed(normed, block.key);
  const Matrix v = matmul_transposed(normed, block.value);
  Matrix context(n, normed.cols());
  std::vector<double> w;
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t offset = h * width;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t limit = mode == AttentionMode::kCausal ? i + 1 : n;
      head_weights(q, k, i, limit, offset, width, w);
      for (std::size_t j = 0; j < limit; ++j) {
        for (std::size_t c = offset; c < offset + width; ++c) context(i, c) += w[j] * v(j, c);
      }
    }
  }
  return matmul_transposed(context, block.output);
}

Matrix feed_forward(const BlockWeights& block, const Matrix& normed) {
  Matrix hidden = matmul_transposed(normed, block.ffn_in);
  for (std::size_t i = 0; i < hidden.rows(); ++i) {
    auto row = hidden.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = gelu(row[c] + block.ffn_in_bias[c]);
  }
  Matrix out = matmul_transposed(hidden, block.ffn_out);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += block.ffn_out_bias[c];
  }
  return out;
}

namespace {

Matrix add(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  auto o = out.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(m.row(rows[r]).begin(), m.row(rows[r]).end(), out.row(r).begin());
  }
  return out;
}

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (tokens.size() > config.max_seq_len) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(tokens.size()) +
                                " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t >= config.vocab_size) {
      throw std::invalid_argument("forward: token id " + std::to_string(t) +
                                  " out of vocabulary");
    }
  }
}

Matrix run_block(const ModelConfig& cfg, const BlockWeights& block, const Matrix& h) {
  const Matrix m =
      add(h, attention(block, layer_norm(h, block.ln1, cfg.layer_norm_eps), cfg.n_heads, cfg.mode));
  return add(m, feed_forward(block, layer_norm(m, block.ln2, cfg.layer_norm_eps)));
}

const Matrix& replacement_map(const std::map<std::size_t, Matrix>& maps, std::size_t layer,
                              std::size_t d, const char* which) {
  const auto it = maps.find(layer);
  if (it == maps.end()) {
    throw std::invalid_argument(std::string("forward_from_layer: missing ") + which +
                                " map for layer " + std::to_string(layer));
  }
  if (it->second.rows() != d || it->second.cols() != d) {
    throw DimensionError(std::string("forward_from_layer: ") + which + " map for layer " +
                         std::to_string(layer) + " is not " + std::to_string(d) + "x" +
                         std::to_string(d));
  }
  return it->second;
}

}  // namespace

Matrix embed(const ModelWeights& weights, std::span<const TokenId> tokens) {
  check_tokens(weights.config, tokens);
  const std::size_t d = weights.config.d_hidden;
  Matrix h(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      h(i, k) = weights.token_embedding(k, tokens[i]) + weights.position_embedding(k, i);
    }
  }
  return h;
}

TapRecord forward_with_taps(const ModelWeights& weights, std::span<const TokenId> tokens,
                            std::span<const std::size_t> positions, bool tap_submodules) {
  const auto& cfg = weights.config;
  Matrix h = embed(weights, tokens);
  for (std::size_t p : positions) {
    if (p >= tokens.size()) throw std::out_of_range("forward_with_taps: position out of range");
  }
  TapRecord rec;
  rec.positions.assign(positions.begin(), positions.end());
  rec.hidden.reserve(cfg.n_layers + 1);
  rec.hidden.push_back(gather_rows(h, positions));
  for (const auto& block : weights.blocks) {
    const Matrix a = layer_norm(h, block.ln1, cfg.layer_norm_eps);
    const Matrix v = attention(block, a, cfg.n_heads, cfg.mode);
    const Matrix m = add(h, v);
    const Matrix b = layer_norm(m, block.ln2, cfg.layer_norm_eps);
    const Matrix f = feed_forward(block, b);
    Matrix next = add(m, f);
    if (tap_submodules) {
      rec.submodules.push_back(SubmoduleTaps{
          gather_rows(h, positions), gather_rows(a, positions), gather_rows(v, positions),
          gather_rows(m, positions), gather_rows(b, positions), gather_rows(f, positions)});
    }
    h = std::move(next);
    rec.hidden.push_back(gather_rows(h, positions));
  }
  return rec;
}

std::vector<Matrix> forward_all_layers(const ModelWeights& weights, std::span<const TokenId> tokens) {
  const auto& cfg = weights.config;
  std::vector<Matrix> out;
  out.reserve(cfg.n_layers + 1);
  out.push_back(embed(weights, tokens));
  for (const auto& block : weights.blocks) out.push_back(run_block(cfg, block, out.back()));
  return out;
}

Matrix forward_from_layer(const ModelWeights& weights, const Matrix& hidden,
                          std::size_t start_layer, const BlockReplacement& replacement) {
  const auto& cfg = weights.config;
  const std::size_t d = cfg.d_hidden;
  if (start_layer > cfg.n_layers) throw std::out_of_range("forward_from_layer: start layer > L");
  if (hidden.cols() != d || hidden.rows() == 0) {
    throw DimensionError("forward_from_layer: hidden states must be n x d_h");
  }
  // Validate every map up front so a bad grid fails before any compute.
  for (std::size_t l = start_layer + 1; l <= cfg.n_layers; ++l) {
    replacement_map(replacement.primary, l, d, "primary");
    if (replacement.kind == ReplacementKind::kLn1Ln2) {
      replacement_map(replacement.secondary, l, d, "secondary");
    }
  }

  Matrix h = hidden;
  for (std::size_t l = start_layer + 1; l <= cfg.n_layers; ++l) {
    const auto& block = weights.blocks[l - 1];
    const Matrix& first = replacement_map(replacement.primary, l, d, "primary");
    Matrix m;
    Matrix f;
    switch (replacement.kind) {
      case ReplacementKind::kAttn: {
        // A·ln1(h) + h acts on each position alone.
        m = add(h, matmul_transposed(layer_norm(h, block.ln1, cfg.layer_norm_eps), first));
        f = feed_forward(block, layer_norm(m, block.ln2, cfg.layer_norm_eps));
        break;
      }
      case ReplacementKind::kFfn: {
        m = add(h, attention(block, layer_norm(h, block.ln1, cfg.layer_norm_eps), cfg.n_heads,
                             cfg.mode));
        f = matmul_transposed(layer_norm(m, block.ln2, cfg.layer_norm_eps), first);
        break;
      }
      case ReplacementKind::kLn1Ln2: {
        const Matrix& second = replacement_map(replacement.secondary, l, d, "secondary");
        m = add(h, attention(block, matmul_transposed(h, first), cfg.n_heads, cfg.mode));
        f = feed_forward(block, matmul_transposed(m, second));
        break;
      }
    }
    h = add(m, f);
  }
  return h;
}

Matrix forward_with_replacements(const ModelWeights& weights, std::span<const TokenId> tokens,
                                 std::size_t start_layer, const BlockReplacement& replacement,
                                 std::span<const std::size_t> positions) {
  if (start_layer > weights.config.n_layers) {
    throw std::out_of_range("forward_with_replacements: start layer > L");
  }
  for (std::size_t p : positions) {
    if (p >= tokens.size()) {
      throw std::out_of_range("forward_with_replacements: position out of range");
    }
  }
  const auto& cfg = weights.config;
  Matrix h = embed(weights, tokens);
  for (std::size_t l = 1; l <= start_layer; ++l) h = run_block(cfg, weights.blocks[l - 1], h);
  return gather_rows(forward_from_layer(weights, h, start_layer, replacement), positions);
}

}  // namespace shortcut
