// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <string>

#include "shortcut/binary_io.hpp"
#include "shortcut/errors.hpp"
#include "shortcut/traces.hpp"

namespace shortcut {
namespace {

constexpr std::string_view kMagic = "HTRC";

constexpr std::array<const char*, 14> kKnownKeys = {
    "n_layers", "d_hidden",      "vocab_size",      "mode",
    "split",    "source",        "top_m",           "max_tokens",
    "has_submodules", "has_full_distribution", "reference_final_ln",
    "n_records", "record_stride", "failures"};

bool is_known(const std::string& key) {
  for (const char* k : kKnownKeys) {
    if (key == k) return true;
  }
  return false;
}

FormatError malformed(const std::string& what) {
  return FormatError(FormatError::Kind::kMalformed, "trace file: " + what);
}

}  // namespace

std::size_t trace_record_stride(const TraceMetadata& m) {
  const std::size_t d = m.d_hidden;
  std::size_t stride = 8 + 4 + 4 + 4;  // sample_id, position, seq_len, target_token
  stride += 4 * m.max_tokens;
  stride += 4 * (m.n_layers + 1) * d;
  if (m.has_submodules) stride += 4 * m.n_layers * kTapSlots * d;
  stride += 8 * m.top_m;
  if (m.has_full_distribution) stride += 4 * m.vocab_size;
  return stride;
}

std::string serialize_traces(const TraceSet& set) {
  set.validate();
  const auto& m = set.meta;
  nlohmann::json j = m.extra.is_object() ? m.extra : nlohmann::json::object();
  j["n_layers"] = m.n_layers;
  j["d_hidden"] = m.d_hidden;
  j["vocab_size"] = m.vocab_size;
  j["mode"] = to_string(m.mode);
  j["split"] = to_string(m.split);
  j["source"] = m.source;
  j["top_m"] = m.top_m;
  j["max_tokens"] = m.max_tokens;
  j["has_submodules"] = m.has_submodules;
  j["has_full_distribution"] = m.has_full_distribution;
  j["reference_final_ln"] = m.reference_final_ln;
  j["n_records"] = set.records.size();
  j["record_stride"] = trace_record_stride(m);
  j["failures"] = nlohmann::json::array();
  for (const auto& f : set.failures) {
    j["failures"].push_back({{"sample_id", f.sample_id}, {"message", f.message}});
  }

  io::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kTraceFormatVersion);
  const std::string header = j.dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  for (const auto& r : set.records) {
    w.u64(r.sample_id);
    w.u32(r.position);
    w.u32(r.seq_len);
    w.u32(r.target_token);
    for (std::size_t t = 0; t < m.max_tokens; ++t) {
      w.u32(t < r.tokens.size() ? r.tokens[t] : kNoToken);
    }
    for (float v : r.layers) w.f32(v);
    for (float v : r.submodules) w.f32(v);
    for (const auto& top : r.reference_top) {
      w.u32(top.token);
      w.f32(top.log_prob);
    }
    for (float v : r.reference_log_probs) w.f32(v);
  }
  return w.release();
}

TraceSet deserialize_traces(std::string_view bytes) {
  io::ByteReader r(bytes, "trace file");
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError(FormatError::Kind::kBadMagic, "trace file: bad magic (expected HTRC)");
  }
  const auto version = r.u16();
  if (version != kTraceFormatVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "trace file: version " + std::to_string(version) + ", expected " +
                          std::to_string(kTraceFormatVersion));
  }
  const auto header_len = r.u32();
  const std::string_view header = r.bytes(header_len);

  TraceSet set;
  std::size_t n_records = 0;
  try {
    const auto j = nlohmann::json::parse(header);
    auto& m = set.meta;
    m.n_layers = j.at("n_layers").get<std::size_t>();
    m.d_hidden = j.at("d_hidden").get<std::size_t>();
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.mode = sample_mode_from_string(j.at("mode").get<std::string>());
    m.split = split_from_string(j.at("split").get<std::string>());
    m.source = j.value("source", std::string{});
    m.top_m = j.value("top_m", std::size_t{0});
    m.max_tokens = j.value("max_tokens", std::size_t{0});
    m.has_submodules = j.value("has_submodules", false);
    m.has_full_distribution = j.value("has_full_distribution", false);
    m.reference_final_ln = j.value("reference_final_ln", false);
    n_records = j.at("n_records").get<std::size_t>();
    if (j.contains("record_stride") &&
        j.at("record_stride").get<std::size_t>() != trace_record_stride(m)) {
      throw std::invalid_argument("record_stride disagrees with the declared shapes");
    }
    if (j.contains("failures")) {
      for (const auto& f : j.at("failures")) {
        set.failures.push_back(
            {f.at("sample_id").get<std::uint64_t>(), f.at("message").get<std::string>()});
      }
    }
    for (const auto& [key, value] : j.items()) {
      if (!is_known(key)) m.extra[key] = value;
    }
  } catch (const std::exception& e) {
    throw malformed(std::string("metadata: ") + e.what());
  }

  const auto& m = set.meta;
  const std::size_t stride = trace_record_stride(m);
  if (n_records > 0 && r.remaining() / stride < n_records) {
    throw FormatError(FormatError::Kind::kTruncated,
                      "trace file: truncated, header declares " + std::to_string(n_records) +
                          " records of " + std::to_string(stride) + " bytes but only " +
                          std::to_string(r.remaining()) + " bytes follow");
  }
  const std::size_t d = m.d_hidden;
  set.records.resize(n_records);
  for (auto& rec : set.records) {
    rec.sample_id = r.u64();
    rec.position = r.u32();
    rec.seq_len = r.u32();
    rec.target_token = r.u32();
    for (std::size_t t = 0; t < m.max_tokens; ++t) {
      const auto tok = r.u32();
      if (t < rec.seq_len) rec.tokens.push_back(tok);
    }
    rec.layers.resize((m.n_layers + 1) * d);
    for (float& v : rec.layers) v = r.f32();
    if (m.has_submodules) {
      rec.submodules.resize(m.n_layers * kTapSlots * d);
      for (float& v : rec.submodules) v = r.f32();
    }
    rec.reference_top.resize(m.top_m);
    for (auto& top : rec.reference_top) {
      top.token = r.u32();
      top.log_prob = r.f32();
    }
    if (m.has_full_distribution) {
      rec.reference_log_probs.resize(m.vocab_size);
      for (float& v : rec.reference_log_probs) v = r.f32();
    }
  }
  if (r.remaining() != 0) throw malformed("trailing bytes after last record");
  try {
    set.validate();
  } catch (const std::exception& e) {
    throw malformed(e.what());
  }
  return set;
}

void write_traces(const TraceSet& set, const std::filesystem::path& path) {
  io::write_file(path, serialize_traces(set));
}

TraceSet read_traces(const std::filesystem::path& path) {
  return deserialize_traces(io::read_file(path));
}

}  // namespace shortcut
