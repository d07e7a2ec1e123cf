// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace shortcut::io {

/// Appends little-endian scalars to an in-memory buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view raw);

  const std::string& buffer() const noexcept { return buf_; }
  std::string release() noexcept { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Reads little-endian scalars; any read past the end throws
/// FormatError(kTruncated) naming `context`.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  void require(std::size_t n) const;

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and renames, so readers never observe a
/// partial file.
void write_file(const std::filesystem::path& path, std::string_view data);

/// 64-bit FNV-1a, rendered as 16 hex digits. Used for manifest content
/// hashes, not for security.
std::string content_hash(std::string_view data);

}  // namespace shortcut::io
