// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include <map>
#include <string>
#include <utility>

#include "shortcut/binary_io.hpp"
#include "shortcut/errors.hpp"
#include "shortcut/model.hpp"

namespace shortcut {
namespace {

constexpr std::string_view kMagic = "SCLM";

Matrix vector_tensor(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

FormatError malformed(const std::string& what) {
  return FormatError(FormatError::Kind::kMalformed, "weight file: " + what);
}

}  // namespace

std::string serialize_weights(const ModelWeights& weights) {
  weights.validate();
  // Vectors are written as 1×n tensors; keep them alive for the duration.
  std::vector<std::pair<std::string, Matrix>> owned;
  auto add_vec = [&](std::string name, const std::vector<double>& v) {
    owned.emplace_back(std::move(name), vector_tensor(v));
  };
  auto add_mat = [&](std::string name, const Matrix& m) { owned.emplace_back(std::move(name), m); };

  add_mat("token_embedding", weights.token_embedding);
  add_mat("position_embedding", weights.position_embedding);
  for (std::size_t l = 0; l < weights.blocks.size(); ++l) {
    const auto& b = weights.blocks[l];
    const std::string p = "blocks." + std::to_string(l + 1) + ".";
    add_vec(p + "ln1.scale", b.ln1.scale);
    add_vec(p + "ln1.shift", b.ln1.shift);
    add_mat(p + "attn.query", b.query);
    add_mat(p + "attn.key", b.key);
    add_mat(p + "attn.value", b.value);
    add_mat(p + "attn.output", b.output);
    add_vec(p + "ln2.scale", b.ln2.scale);
    add_vec(p + "ln2.shift", b.ln2.shift);
    add_mat(p + "ffn.in", b.ffn_in);
    add_vec(p + "ffn.in_bias", b.ffn_in_bias);
    add_mat(p + "ffn.out", b.ffn_out);
    add_vec(p + "ffn.out_bias", b.ffn_out_bias);
  }
  if (weights.final_ln) {
    add_vec("final_ln.scale", weights.final_ln->scale);
    add_vec("final_ln.shift", weights.final_ln->shift);
  }

  io::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kWeightFormatVersion);
  const std::string header = weights.config.to_json().dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  w.u32(static_cast<std::uint32_t>(owned.size()));
  for (const auto& [name, m] : owned) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) w.f32(static_cast<float>(v));
  }
  return w.release();
}

ModelWeights deserialize_weights(std::string_view bytes) {
  io::ByteReader r(bytes, "weight file");
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError(FormatError::Kind::kBadMagic, "weight file: bad magic (expected SCLM)");
  }
  const auto version = r.u16();
  if (version != kWeightFormatVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "weight file: version " + std::to_string(version) + ", expected " +
                          std::to_string(kWeightFormatVersion));
  }
  const auto header_len = r.u32();
  ModelConfig config;
  try {
    config = ModelConfig::from_json(nlohmann::json::parse(r.bytes(header_len)));
    config.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw malformed(std::string("config header: ") + e.what());
  }

  std::map<std::string, Matrix> tensors;
  const auto count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.u16();
    std::string name(r.bytes(name_len));
    const auto rows = r.u32();
    const auto cols = r.u32();
    r.require(std::size_t{rows} * cols * 4);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = r.f32();
    if (!tensors.emplace(std::move(name), std::move(m)).second) {
      throw malformed("duplicate tensor");
    }
  }
  if (r.remaining() != 0) throw malformed("trailing bytes after last tensor");

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw malformed("missing tensor '" + name + "'");
    Matrix m = std::move(it->second);
    tensors.erase(it);
    return m;
  };
  auto take_vec = [&](const std::string& name) {
    Matrix m = take(name);
    if (m.rows() != 1) throw malformed("tensor '" + name + "' is not a vector");
    return std::vector<double>(m.values().begin(), m.values().end());
  };

  ModelWeights w;
  w.config = config;
  w.token_embedding = take("token_embedding");
  w.position_embedding = take("position_embedding");
  for (std::size_t l = 1; l <= config.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockWeights b;
    b.ln1 = {take_vec(p + "ln1.scale"), take_vec(p + "ln1.shift")};
    b.query = take(p + "attn.query");
    b.key = take(p + "attn.key");
    b.value = take(p + "attn.value");
    b.output = take(p + "attn.output");
    b.ln2 = {take_vec(p + "ln2.scale"), take_vec(p + "ln2.shift")};
    b.ffn_in = take(p + "ffn.in");
    b.ffn_in_bias = take_vec(p + "ffn.in_bias");
    b.ffn_out = take(p + "ffn.out");
    b.ffn_out_bias = take_vec(p + "ffn.out_bias");
    w.blocks.push_back(std::move(b));
  }
  if (config.final_layernorm) {
    w.final_ln = LayerNormParams{take_vec("final_ln.scale"), take_vec("final_ln.shift")};
  }
  if (!tensors.empty()) throw malformed("unexpected tensor '" + tensors.begin()->first + "'");
  try {
    w.validate();
  } catch (const std::exception& e) {
    throw malformed(e.what());
  }
  return w;
}

void write_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  io::write_file(path, serialize_weights(weights));
}

ModelWeights read_weights(const std::filesystem::path& path) {
  return deserialize_weights(io::read_file(path));
}

}  // namespace shortcut
