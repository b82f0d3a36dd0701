#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ecgssl/common.hpp"

namespace ecgssl {

// Byte-buffer writer with explicit little-endian encoding.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void bytes(const void* p, size_t n);
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

// Cursor over a byte buffer; throws FormatError with the current offset on
// truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  std::string str(size_t n);
  size_t offset() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(msg, pos_);
  }

 private:
  void need(size_t n);
  std::string data_;
  size_t pos_ = 0;
};

// Whole-file helpers. Writes go to "<path>.tmp" and are renamed into place,
// so a failed run never leaves a partial output file.
std::string read_file(const std::filesystem::path& path);
void atomic_write_file(const std::filesystem::path& path,
                       const std::string& contents);

// Minimal CSV support: no quoting, fields must not contain commas/newlines.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);
std::string format_metric(double v);  // fixed, 6 decimals

}  // namespace ecgssl
