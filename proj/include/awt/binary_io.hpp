#pragma once

// Little-endian scalar I/O shared by the kernel dump and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace awt {

template <typename T>
  requires std::is_integral_v<T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
  requires std::is_integral_v<T>
T read_le(std::istream& is, const std::string& field) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw std::runtime_error(field + ": truncated");
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) u = static_cast<decltype(u)>((u << 8) | buf[i]);
  return static_cast<T>(u);
}

inline void write_le_doubles(std::ostream& os, const double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) write_le(os, std::bit_cast<std::uint64_t>(v[i]));
}

inline void read_le_doubles(std::istream& is, double* v, std::size_t n, const std::string& field) {
  for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(read_le<std::uint64_t>(is, field));
}

}  // namespace awt
