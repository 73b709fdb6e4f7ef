#pragma once

// Checkpoint container: the 7-byte magic "OPRLTR1", a u32 entry count, then
// per entry a u32 name length, the name bytes, a u32 rank, rank u64 dims and
// the float64 values. All integers and floats are little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace opr {

inline constexpr std::string_view kCheckpointMagic = "OPRLTR1";

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedTensor&) const = default;
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw DataError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& entries) {
  os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (shape_numel(e.shape) != e.values.size()) {
      throw DimensionError("checkpoint: entry '" + e.name + "' shape does not match values");
    }
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_le<std::uint64_t>(os, d);
    for (double v : e.values) detail::put_le<double>(os, v);
  }
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  std::string magic(kCheckpointMagic.size(), '\0');
  if (!is.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic");
  }
  const auto count = detail::get_le<std::uint32_t>(is);
  std::vector<NamedTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor e;
    e.name.resize(detail::get_le<std::uint32_t>(is));
    if (!is.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) {
      throw DataError("checkpoint: truncated file");
    }
    const auto rank = detail::get_le<std::uint32_t>(is);
    if (rank > 8) throw DataError("checkpoint: implausible rank for '" + e.name + "'");
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(is)));
    }
    const std::size_t n = shape_numel(e.shape);
    if (n > (std::size_t{1} << 28)) throw DataError("checkpoint: implausible size for '" + e.name + "'");
    e.values.resize(n);
    for (auto& v : e.values) v = detail::get_le<double>(is);
    out.push_back(std::move(e));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, entries);
  if (!os) throw DataError("failed writing checkpoint '" + path + "'");
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace opr
