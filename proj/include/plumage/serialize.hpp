#pragma once

// Minimal binary archive for checkpoints. Values are written in host byte
// order (little-endian is required) and doubles as raw IEEE-754 bits, so a
// save/load round trip is bit-exact.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "plumage/linalg.hpp"

namespace plumage {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  template <class T>
    requires std::is_arithmetic_v<T> || std::is_enum_v<T>
  void put(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void put(const std::string& s) {
    put<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void put(const Matrix& m) {
    put<std::int64_t>(m.rows());
    put<std::int64_t>(m.cols());
    os_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  }

  void put(const Vector& v) {
    put<std::int64_t>(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * v.size()));
  }

  void put(const std::vector<Index>& v) {
    put<std::uint64_t>(v.size());
    for (auto x : v) put<std::int64_t>(x);
  }

  void put(const std::vector<double>& v) {
    put<std::uint64_t>(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * v.size()));
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  template <class T>
    requires std::is_arithmetic_v<T> || std::is_enum_v<T>
  T get() {
    T v{};
    read(&v, sizeof(T));
    return v;
  }

  std::string get_string() {
    const auto n = checked_size(get<std::uint64_t>());
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  Matrix get_matrix() {
    const auto r = get<std::int64_t>();
    const auto c = get<std::int64_t>();
    if (r < 0 || c < 0) throw FormatError("checkpoint: negative matrix dimension");
    checked_size(static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(c));
    Matrix m(r, c);
    read(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }

  Vector get_vector() {
    const auto n = get<std::int64_t>();
    if (n < 0) throw FormatError("checkpoint: negative vector length");
    checked_size(static_cast<std::uint64_t>(n));
    Vector v(n);
    read(v.data(), sizeof(double) * static_cast<std::size_t>(n));
    return v;
  }

  std::vector<Index> get_indices() {
    const auto n = checked_size(get<std::uint64_t>());
    std::vector<Index> v(n);
    for (auto& x : v) x = get<std::int64_t>();
    return v;
  }

  std::vector<double> get_doubles() {
    const auto n = checked_size(get<std::uint64_t>());
    std::vector<double> v(n);
    read(v.data(), sizeof(double) * n);
    return v;
  }

 private:
  static std::size_t checked_size(std::uint64_t n) {
    if (n > (std::uint64_t{1} << 32)) throw FormatError("checkpoint: implausible length field");
    return static_cast<std::size_t>(n);
  }

  void read(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!is_) throw FormatError("checkpoint: truncated stream");
  }

  std::istream& is_;
};

}  // namespace plumage
