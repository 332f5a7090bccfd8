#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "midx/common.hpp"

// Little-endian binary helpers shared by the dataset, index and model caches.
namespace midx::io {

static_assert(std::endian::native == std::endian::little,
              "binary caches assume a little-endian host");

template <class T>
void write_pod(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("binary cache truncated");
  return v;
}

template <class T>
void write_vector(std::ostream& out, const std::vector<T>& v) {
  write_pod<std::uint64_t>(out, v.size());
  if (!v.empty())
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
std::vector<T> read_vector(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (std::uint64_t{1} << 40) / sizeof(T)) throw Error("binary cache: implausible length");
  std::vector<T> v(n);
  if (n != 0) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw Error("binary cache truncated");
  }
  return v;
}

inline void write_matrix(std::ostream& out, const Matrix& m) {
  write_pod<std::uint64_t>(out, m.rows());
  write_pod<std::uint64_t>(out, m.cols());
  write_vector(out, m.data());
}

inline Matrix read_matrix(std::istream& in) {
  const auto rows = read_pod<std::uint64_t>(in);
  const auto cols = read_pod<std::uint64_t>(in);
  Matrix m(rows, cols);
  auto data = read_vector<double>(in);
  if (data.size() != rows * cols) throw Error("binary cache: matrix shape mismatch");
  m.data() = std::move(data);
  return m;
}

inline void write_magic(std::ostream& out, const char* magic) {
  out.write(magic, static_cast<std::streamsize>(std::strlen(magic)));
}

inline void expect_magic(std::istream& in, const char* magic) {
  std::string buf(std::strlen(magic), '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!in || buf != magic) throw Error(std::string("bad file magic, expected ") + magic);
}

}  // namespace midx::io
