#pragma once
// "GAUD" binary tensor container.
//
//   bytes 0..3   magic "GAUD"
//   u32 LE       format version (1)
//   u32 LE       ndim
//   u64 LE × ndim  shape
//   f64 LE × prod(shape)  payload, row-major
//
// A checkpoint file is a sequence of such records back to back; the JSON
// manifest next to it names them in order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gauda/tensor.hpp"

namespace gauda {

inline constexpr std::array<char, 4> kTensorMagic = {'G', 'A', 'U', 'D'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_unsigned_v<T>);
  std::array<char, sizeof(T)> b{};
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

template <class T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> b{};
  is.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!is) throw std::runtime_error("tensor container: truncated record");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{b[i]} << (8 * i));
  return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  detail::put_le<std::uint32_t>(os, kTensorFormatVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) detail::put_le<std::uint64_t>(os, d);
  for (double v : t.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("tensor container: write failed");
}

inline Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kTensorMagic) throw std::runtime_error("tensor container: bad magic");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kTensorFormatVersion)
    throw std::runtime_error("tensor container: unsupported version " + std::to_string(version));
  const auto ndim = detail::get_le<std::uint32_t>(is);
  if (ndim == 0 || ndim > 16) throw std::runtime_error("tensor container: bad ndim");
  Shape shape(ndim);
  for (auto& d : shape) d = detail::get_le<std::uint64_t>(is);
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& t : tensors) write_tensor(os, t);
}

inline std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("cannot open " + path.string());
  std::vector<Tensor> out;
  while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
  return out;
}

}  // namespace gauda
