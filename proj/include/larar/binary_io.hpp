#pragma once

// Versioned binary container shared by checkpoints and data caches:
//
//   magic[8] | u32 version | u64 payload size | payload | u32 crc32(payload)
//
// All integers and doubles are little-endian; doubles are IEEE-754 binary64.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "larar/tensor.hpp"

namespace larar::io {

using Magic = std::array<char, 8>;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  void tensor(const Tensor& t);
  void f64s(std::span<const double> v);

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Reads a payload; any overrun raises CorruptFileError.
class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Tensor tensor();
  std::vector<double> f64s();
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_container(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
                     const Writer& payload);

// Validates magic, version and checksum, then returns the payload.
Reader read_container(const std::filesystem::path& path, const Magic& magic,
                      std::uint32_t expected_version);

}  // namespace larar::io
