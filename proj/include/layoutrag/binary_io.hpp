#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <span>
#include <vector>

#include "layoutrag/error.hpp"

// Little-endian byte streams shared by the index and checkpoint formats.
namespace layoutrag {

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const char> s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void list(const std::vector<std::uint32_t>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (auto x : v) u32(x);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool magic(std::span<const char> m) {
    need(m.size());
    const bool ok = std::equal(m.begin(), m.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; });
    pos_ += m.size();
    return ok;
  }
  std::vector<std::uint32_t> list(std::size_t max_len) {
    const std::uint32_t n = u32();
    if (n > max_len) throw CorruptFileError("list length out of range");
    need(std::size_t{n} * 4);
    std::vector<std::uint32_t> v(n);
    for (auto& x : v) x = u32();
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptFileError("unexpected end of file");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes,
                       const std::string& what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + what + " '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + what + " '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

}  // namespace layoutrag
