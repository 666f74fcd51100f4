#pragma once
// Order-preserving key encoding. One comparator (bytewise) serves every
// index kind, so each component is encoded so that byte order equals
// logical order:
//   - integers: 8-byte big-endian with the sign bit flipped
//   - doubles:  IEEE bits, sign-flipped for positives, inverted for negatives
//   - strings:  raw bytes with 0x00 escaped as 0x00 0xFF, terminated 0x00 0x00
// Multi-component keys concatenate encoded components; fixed-width
// components need no terminator.

#include <cstring>
#include <string_view>

#include "a1/addr.hpp"
#include "a1/common.hpp"

namespace a1 {

inline void key_put_i64(Bytes& out, int64_t v) {
  put_u64_be(out, uint64_t(v) ^ (uint64_t(1) << 63));
}
inline int64_t key_read_i64(ByteReader& r) {
  return int64_t(r.u64() ^ (uint64_t(1) << 63));
}

inline void key_put_f64(Bytes& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  if (bits >> 63)
    bits = ~bits;  // negative: invert everything
  else
    bits ^= (uint64_t(1) << 63);
  put_u64_be(out, bits);
}

inline void key_put_str(Bytes& out, std::string_view s) {
  for (unsigned char c : s) {
    out.push_back(c);
    if (c == 0x00) out.push_back(0xFF);
  }
  out.push_back(0x00);
  out.push_back(0x00);
}
inline std::string key_read_str(ByteReader& r) {
  std::string s;
  for (;;) {
    uint8_t c = r.u8();
    if (c != 0x00) {
      s.push_back(char(c));
      continue;
    }
    uint8_t next = r.u8();
    if (next == 0x00) return s;
    if (next != 0xFF) throw A1Error(Err::CORRUPT_TABLE, "bad string escape in key");
    s.push_back('\0');
  }
}

inline void key_put_addr(Bytes& out, Addr a) { put_addr(out, a); }
inline void key_put_u32(Bytes& out, uint32_t v) { put_u32_be(out, v); }
inline void key_put_u64(Bytes& out, uint64_t v) { put_u64_be(out, v); }
inline void key_put_bool(Bytes& out, bool v) { out.push_back(v ? 1 : 0); }

// Smallest key strictly greater than every key with prefix `p`:
// p followed by 0xFF... doesn't work for arbitrary bytes, so instead
// increment the last non-0xFF byte and truncate.
inline Bytes key_prefix_upper_bound(const Bytes& p) {
  Bytes hi = p;
  while (!hi.empty()) {
    if (hi.back() != 0xFF) {
      hi.back()++;
      return hi;
    }
    hi.pop_back();
  }
  return hi;  // empty = no upper bound
}

}  // namespace a1
