// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "shortcut/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "shortcut/errors.hpp"

namespace shortcut::io {
namespace {

template <typename T>
void put_le(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::string_view raw) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<std::uint8_t>(raw[i])) << (8 * i);
  }
  return v;
}

}  // namespace

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
void ByteWriter::u16(std::uint16_t v) { put_le(buf_, v); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::bytes(std::string_view raw) { buf_.append(raw); }

void ByteReader::require(std::size_t n) const {
  if (remaining() < n) {
    throw FormatError(FormatError::Kind::kTruncated,
                      context_ + ": truncated at byte " + std::to_string(pos_) + " (need " +
                          std::to_string(n) + ", have " + std::to_string(remaining()) + ")");
  }
}

std::string_view ByteReader::bytes(std::size_t n) {
  require(n);
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
std::uint16_t ByteReader::u16() { return get_le<std::uint16_t>(bytes(2)); }
std::uint32_t ByteReader::u32() { return get_le<std::uint32_t>(bytes(4)); }
std::uint64_t ByteReader::u64() { return get_le<std::uint64_t>(bytes(8)); }
float ByteReader::f32() { return std::bit_cast<float>(get_le<std::uint32_t>(bytes(4))); }
double ByteReader::f64() { return std::bit_cast<double>(get_le<std::uint64_t>(bytes(8))); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string() + " for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw FormatError(FormatError::Kind::kIo, "cannot open " + tmp.string() + " for writing");
    }
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError(FormatError::Kind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string content_hash(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : data) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace shortcut::io
