#pragma once

// Little-endian binary helpers shared by the epoch-set and model file formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "mifuse/error.hpp"

namespace mifuse::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

using Magic = std::array<char, 16>;

constexpr Magic make_magic(const char (&text)[17]) {
  Magic m{};
  for (std::size_t i = 0; i < 16; ++i) m[i] = text[i];
  return m;
}

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void put_bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }

  void put_doubles(const double* p, std::size_t n) { put_bytes(p, n * sizeof(double)); }

  void check(const std::string& what) const {
    if (!os_) throw DataError("write failed: " + what);
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T v{};
    get_bytes(&v, sizeof(T));
    return v;
  }

  void get_bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw DataError(what_ + ": truncated payload");
  }

  std::string get_string(std::uint32_t max_len = 1u << 20) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) throw DataError(what_ + ": corrupt string length");
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }

  void get_doubles(double* p, std::size_t n) { get_bytes(p, n * sizeof(double)); }

  void expect_magic(const Magic& magic) {
    Magic m{};
    is_.read(m.data(), 16);
    if (is_.gcount() != 16 || m != magic) throw DataError(what_ + ": corrupt header (bad magic)");
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace mifuse::detail
