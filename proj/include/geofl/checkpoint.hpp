#pragma once

// Model checkpoint file. Little-endian throughout:
//
//   offset  size  field
//        0     8  magic "GEOFLCK1"
//        8     4  u32 format version (1)
//       12     4  u32 bytes per value (4 or 8)
//       16     8  u64 input_dim
//       24     8  u64 hidden_dim
//       32     8  u64 output_dim
//       40     8  u64 with_bias (0 or 1)
//       48     8  u64 seed
//       56     8  u64 round (rounds completed when written)
//       64     8  u64 value count
//       72     -  values, IEEE-754 binary32 or binary64

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "geofl/errors.hpp"
#include "geofl/learner.hpp"

namespace geofl {

inline constexpr std::array<char, 8> checkpoint_magic{'G', 'E', 'O', 'F', 'L', 'C', 'K', '1'};
inline constexpr std::uint32_t checkpoint_version = 1;

template <class Real>
struct Checkpoint {
  ModelParams<Real> params;
  std::uint64_t seed = 0;
  std::uint64_t round = 0;
};

namespace detail {

template <class U>
void put_le(std::vector<char>& buf, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
  }
}

template <class U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return v;
}

template <class Real>
using bits_t = std::conditional_t<sizeof(Real) == 8, std::uint64_t, std::uint32_t>;

}  // namespace detail

template <class Real>
std::vector<char> encode_checkpoint(const Checkpoint<Real>& ck) {
  static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>);
  const auto& a = ck.params.arch;
  std::vector<char> buf(checkpoint_magic.begin(), checkpoint_magic.end());
  detail::put_le<std::uint32_t>(buf, checkpoint_version);
  detail::put_le<std::uint32_t>(buf, sizeof(Real));
  detail::put_le<std::uint64_t>(buf, a.input_dim);
  detail::put_le<std::uint64_t>(buf, a.hidden_dim);
  detail::put_le<std::uint64_t>(buf, a.output_dim);
  detail::put_le<std::uint64_t>(buf, a.with_bias ? 1 : 0);
  detail::put_le<std::uint64_t>(buf, ck.seed);
  detail::put_le<std::uint64_t>(buf, ck.round);
  detail::put_le<std::uint64_t>(buf, ck.params.values.size());
  buf.reserve(buf.size() + ck.params.values.size() * sizeof(Real));
  for (const Real v : ck.params.values) {
    detail::put_le(buf, std::bit_cast<detail::bits_t<Real>>(v));
  }
  return buf;
}

template <class Real>
Checkpoint<Real> decode_checkpoint(const std::vector<char>& buf) {
  constexpr std::size_t header = 72;
  if (buf.size() < header) throw DataError("checkpoint: truncated header");
  if (!std::equal(checkpoint_magic.begin(), checkpoint_magic.end(), buf.begin())) {
    throw DataError("checkpoint: bad magic");
  }
  const char* p = buf.data();
  if (detail::get_le<std::uint32_t>(p + 8) != checkpoint_version) {
    throw DataError("checkpoint: unsupported version");
  }
  if (detail::get_le<std::uint32_t>(p + 12) != sizeof(Real)) {
    throw DataError("checkpoint: stored precision differs from the requested one");
  }
  Checkpoint<Real> ck;
  MlpArchitecture a;
  a.input_dim = detail::get_le<std::uint64_t>(p + 16);
  a.hidden_dim = detail::get_le<std::uint64_t>(p + 24);
  a.output_dim = detail::get_le<std::uint64_t>(p + 32);
  a.with_bias = detail::get_le<std::uint64_t>(p + 40) != 0;
  ck.seed = detail::get_le<std::uint64_t>(p + 48);
  ck.round = detail::get_le<std::uint64_t>(p + 56);
  const auto count = detail::get_le<std::uint64_t>(p + 64);
  if (count != a.param_count()) throw DataError("checkpoint: value count does not match architecture");
  if (buf.size() != header + count * sizeof(Real)) throw DataError("checkpoint: truncated payload");
  ck.params = ModelParams<Real>(a);
  for (std::size_t i = 0; i < count; ++i) {
    ck.params.values[i] =
        std::bit_cast<Real>(detail::get_le<detail::bits_t<Real>>(p + header + i * sizeof(Real)));
  }
  return ck;
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Real>& ck) {
  const auto buf = encode_checkpoint(ck);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint<Real>(buf);
}

}  // namespace geofl
