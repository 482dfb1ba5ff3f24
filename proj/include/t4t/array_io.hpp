#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "t4t/array.hpp"

// Raw array dump:
//   "T4TARR1" (7 bytes) | dtype u8 (1 = f32, 2 = f64) | rank u32 |
//   extents u64 x rank | row-major data
// All integers and values little-endian.

namespace t4t {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline constexpr char kArrayMagic[7] = {'T', '4', 'T', 'A', 'R', 'R', '1'};

template <Scalar T>
constexpr std::uint8_t dtype_code() {
  return std::same_as<T, float> ? 1 : 2;
}

namespace detail {

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const char* what) {
  U v{};
  const auto at = static_cast<long long>(is.tellg());
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw ParseError(std::string("truncated stream reading ") + what + " at byte " +
                     std::to_string(at));
  }
  return v;
}

}  // namespace detail

template <Scalar T>
void write_array(std::ostream& os, const Array<T>& a) {
  os.write(kArrayMagic, sizeof(kArrayMagic));
  detail::put<std::uint8_t>(os, dtype_code<T>());
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.rank()));
  for (auto e : a.shape()) detail::put<std::uint64_t>(os, e);
  os.write(reinterpret_cast<const char*>(a.data().data()),
           static_cast<std::streamsize>(a.size() * sizeof(T)));
}

using AnyArray = std::variant<Array<float>, Array<double>>;

inline AnyArray read_any_array(std::istream& is) {
  char magic[7];
  if (!is.read(magic, 7) || std::memcmp(magic, kArrayMagic, 7) != 0) {
    throw ParseError("array dump: bad magic at byte 0");
  }
  const auto code = detail::get<std::uint8_t>(is, "dtype");
  const auto rank = detail::get<std::uint32_t>(is, "rank");
  if (rank > 16) throw ParseError("array dump: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = detail::get<std::uint64_t>(is, "extent");
  auto read_data = [&](auto tag) -> AnyArray {
    using T = decltype(tag);
    std::vector<T> data(numel(shape));
    const auto at = static_cast<long long>(is.tellg());
    const auto want = static_cast<std::streamsize>(data.size() * sizeof(T));
    is.read(reinterpret_cast<char*>(data.data()), want);
    if (is.gcount() != want) {
      throw ParseError("array dump: payload at byte " + std::to_string(at) + " expected " +
                       std::to_string(want) + " bytes, got " + std::to_string(is.gcount()));
    }
    return Array<T>(shape, std::move(data));
  };
  if (code == 1) return read_data(float{});
  if (code == 2) return read_data(double{});
  throw ParseError("array dump: unknown dtype code " + std::to_string(code));
}

template <Scalar T>
Array<T> read_array(std::istream& is) {
  return std::visit([](auto&& a) { return a.template cast<T>(); }, read_any_array(is));
}

template <Scalar T>
void save_array(const std::string& path, const Array<T>& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  write_array(os, a);
}

template <Scalar T>
Array<T> load_array(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path);
  return read_array<T>(is);
}

}  // namespace t4t
