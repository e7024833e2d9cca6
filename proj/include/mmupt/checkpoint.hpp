#pragma once

// Checkpoint layout (all integers little-endian):
//   "UPTCKPT1"          8-byte magic
//   version             u32
//   policy kind         u8   (0 bandit, 1 seq)
//   parameter count     u64
//   parameters          count x IEEE-754 binary64

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>

#include "policy.hpp"

namespace mmupt {

inline constexpr std::string_view kCheckpointMagic = "UPTCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  PolicyKind kind = PolicyKind::bandit;
  PolicyParams params;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("truncated checkpoint");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

}  // namespace detail

inline std::string encode_checkpoint(PolicyKind kind, const PolicyParams& params) {
  std::string out(kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
  detail::put_le<std::uint64_t>(out, params.dim());
  for (double v : params.values) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw CheckpointError("bad checkpoint magic");
  std::size_t pos = kCheckpointMagic.size();
  if (detail::get_le<std::uint32_t>(bytes, pos) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
  const auto tag = detail::get_le<std::uint8_t>(bytes, pos);
  if (tag > static_cast<std::uint8_t>(PolicyKind::seq)) throw CheckpointError("unknown policy kind tag");
  const auto count = detail::get_le<std::uint64_t>(bytes, pos);
  if (count > (bytes.size() - pos) / 8) throw CheckpointError("truncated checkpoint");
  Checkpoint c;
  c.kind = static_cast<PolicyKind>(tag);
  c.params.values.resize(count);
  for (auto& v : c.params.values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
  if (pos != bytes.size()) throw CheckpointError("trailing bytes in checkpoint");
  return c;
}

inline void write_checkpoint(const std::string& path, PolicyKind kind, const PolicyParams& params) {
  const std::string bytes = encode_checkpoint(kind, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mmupt
