#pragma once
// Object addressing: 64-bit address = (region id, byte offset), fat
// references carrying the object size, and commit timestamps.

#include <compare>
#include <cstdint>
#include <functional>

#include "a1/common.hpp"

namespace a1 {

// Commit timestamps come from a single monotonic oracle; 0 is "never".
using Timestamp = uint64_t;
inline constexpr Timestamp kNoTimestamp = 0;

using NodeId = uint32_t;
inline constexpr NodeId kNoNode = UINT32_MAX;

struct Addr {
  uint32_t region_id = 0;
  uint32_t offset = 0;

  auto operator<=>(const Addr&) const = default;

  uint64_t packed() const { return (uint64_t(region_id) << 32) | offset; }
  static Addr unpack(uint64_t v) { return Addr{uint32_t(v >> 32), uint32_t(v)}; }

  bool is_null() const { return region_id == 0 && offset == 0; }
  static Addr null() { return Addr{}; }
};

// Persisted form is 8 bytes big-endian, region id first.
inline void put_addr(Bytes& out, Addr a) {
  put_u32_be(out, a.region_id);
  put_u32_be(out, a.offset);
}
inline Addr read_addr(ByteReader& r) {
  Addr a;
  a.region_id = r.u32();
  a.offset = r.u32();
  return a;
}

// ⟨address, size⟩: size equals the exact object length so one read
// fetches the whole thing.
struct FatRef {
  Addr addr;
  uint32_t size = 0;

  auto operator<=>(const FatRef&) const = default;
  bool is_null() const { return addr.is_null() && size == 0; }
  static FatRef null() { return FatRef{}; }
};

inline constexpr size_t kFatRefBytes = 12;

inline void put_fatref(Bytes& out, FatRef f) {
  put_addr(out, f.addr);
  put_u32_be(out, f.size);
}
inline FatRef read_fatref(ByteReader& r) {
  FatRef f;
  f.addr = read_addr(r);
  f.size = r.u32();
  return f;
}

}  // namespace a1

template <>
struct std::hash<a1::Addr> {
  size_t operator()(const a1::Addr& a) const noexcept {
    return std::hash<uint64_t>()(a.packed());
  }
};
