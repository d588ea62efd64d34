#include "larar/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "larar/errors.hpp"

namespace larar::io {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

std::uint32_t checksum(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

void Writer::u32(std::uint32_t v) { put_le(bytes_, v); }
void Writer::u64(std::uint64_t v) { put_le(bytes_, v); }
void Writer::f64(double v) { put_le(bytes_, std::bit_cast<std::uint64_t>(v)); }

void Writer::str(std::string_view s) {
  u64(s.size());
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void Writer::tensor(const Tensor& t) {
  u64(t.rows());
  u64(t.cols());
  for (double v : t.values()) f64(v);
}

void Writer::f64s(std::span<const double> v) {
  u64(v.size());
  for (double x : v) f64(x);
}

void Reader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) throw CorruptFileError("unexpected end of payload");
}

std::uint8_t Reader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t Reader::u32() {
  need(4);
  auto v = get_le<std::uint32_t>(bytes_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  auto v = get_le<std::uint64_t>(bytes_.data() + pos_);
  pos_ += 8;
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  const std::uint64_t n = u64();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

Tensor Reader::tensor() {
  const std::uint64_t r = u64();
  const std::uint64_t c = u64();
  if (c != 0 && r > (bytes_.size() - pos_) / 8 / c) throw CorruptFileError("tensor larger than payload");
  need(r * c * 8);
  std::vector<double> v(r * c);
  for (double& x : v) x = f64();
  return Tensor(r, c, std::move(v));
}

std::vector<double> Reader::f64s() {
  const std::uint64_t n = u64();
  need(n * 8);
  std::vector<double> v(n);
  for (double& x : v) x = f64();
  return v;
}

void write_container(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
                     const Writer& payload) {
  std::vector<std::uint8_t> out(magic.begin(), magic.end());
  put_le(out, version);
  put_le(out, static_cast<std::uint64_t>(payload.bytes().size()));
  out.insert(out.end(), payload.bytes().begin(), payload.bytes().end());
  put_le(out, checksum(payload.bytes()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

Reader read_container(const std::filesystem::path& path, const Magic& magic,
                      std::uint32_t expected_version) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = 8 + 4 + 8;
  if (all.size() < header + 4 || std::memcmp(all.data(), magic.data(), magic.size()) != 0) {
    throw CorruptFileError("'" + path.string() + "' is not a " +
                           std::string(magic.data(), magic.size()) + " file");
  }
  const auto version = get_le<std::uint32_t>(all.data() + 8);
  if (version != expected_version) {
    throw VersionMismatchError("'" + path.string() + "' has format version " + std::to_string(version) +
                               ", expected " + std::to_string(expected_version));
  }
  const auto size = get_le<std::uint64_t>(all.data() + 12);
  if (size != all.size() - header - 4) throw CorruptFileError("'" + path.string() + "' is truncated");
  std::vector<std::uint8_t> payload(all.begin() + header, all.end() - 4);
  if (checksum(payload) != get_le<std::uint32_t>(all.data() + all.size() - 4)) {
    throw CorruptFileError("'" + path.string() + "' failed its checksum");
  }
  return Reader(std::move(payload));
}

}  // namespace larar::io
