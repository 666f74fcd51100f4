#pragma once
// Shared primitives: error codes, byte buffers, seeded RNG.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace a1 {

using Bytes = std::vector<uint8_t>;

enum class Err {
  INVALID_CONFIG,
  NODE_UNREACHABLE,
  STORE_PAUSED,
  OUT_OF_SPACE,
  BAD_SIZE,
  INVALID_ADDR,
  NAME_EXISTS,
  NOT_FOUND,
  DELETING,
  BAD_TRANSITION,
  DUPLICATE_KEY,
  DUPLICATE_EDGE,
  SCHEMA_VIOLATION,
  TYPE_DELETING,
  PARSE_ERROR,
  UNKNOWN_KEY,
  UNKNOWN_TYPE,
  UNKNOWN_FIELD,
  FAST_FAIL_BUDGET,
  SNAPSHOT_LOST,
  TOKEN_EXPIRED,
  TOKEN_INVALID,
  CLAIM_LOST,
  CORRUPT_TABLE,
  MISSING_WATERMARK,
  STALE_CACHE,
  INTERNAL,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::INVALID_CONFIG: return "INVALID_CONFIG";
    case Err::NODE_UNREACHABLE: return "NODE_UNREACHABLE";
    case Err::STORE_PAUSED: return "STORE_PAUSED";
    case Err::OUT_OF_SPACE: return "OUT_OF_SPACE";
    case Err::BAD_SIZE: return "BAD_SIZE";
    case Err::INVALID_ADDR: return "INVALID_ADDR";
    case Err::NAME_EXISTS: return "NAME_EXISTS";
    case Err::NOT_FOUND: return "NOT_FOUND";
    case Err::DELETING: return "DELETING";
    case Err::BAD_TRANSITION: return "BAD_TRANSITION";
    case Err::DUPLICATE_KEY: return "DUPLICATE_KEY";
    case Err::DUPLICATE_EDGE: return "DUPLICATE_EDGE";
    case Err::SCHEMA_VIOLATION: return "SCHEMA_VIOLATION";
    case Err::TYPE_DELETING: return "TYPE_DELETING";
    case Err::PARSE_ERROR: return "PARSE_ERROR";
    case Err::UNKNOWN_KEY: return "UNKNOWN_KEY";
    case Err::UNKNOWN_TYPE: return "UNKNOWN_TYPE";
    case Err::UNKNOWN_FIELD: return "UNKNOWN_FIELD";
    case Err::FAST_FAIL_BUDGET: return "FAST_FAIL_BUDGET";
    case Err::SNAPSHOT_LOST: return "SNAPSHOT_LOST";
    case Err::TOKEN_EXPIRED: return "TOKEN_EXPIRED";
    case Err::TOKEN_INVALID: return "TOKEN_INVALID";
    case Err::CLAIM_LOST: return "CLAIM_LOST";
    case Err::CORRUPT_TABLE: return "CORRUPT_TABLE";
    case Err::MISSING_WATERMARK: return "MISSING_WATERMARK";
    case Err::STALE_CACHE: return "STALE_CACHE";
    case Err::INTERNAL: return "INTERNAL";
  }
  return "UNKNOWN";
}

class A1Error : public std::runtime_error {
 public:
  A1Error(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}
  explicit A1Error(Err code) : A1Error(code, "") {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what = "") {
  throw A1Error(code, what);
}

// Deterministic RNG; everything that makes a random choice draws from one
// of these, seeded from the cluster seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  uint64_t next_u64() { return eng_(); }
  // Uniform in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : eng_() % n; }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline void put_u16_be(Bytes& out, uint16_t v) {
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}
inline void put_u32_be(Bytes& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}
inline void put_u64_be(Bytes& out, uint64_t v) {
  put_u32_be(out, uint32_t(v >> 32));
  put_u32_be(out, uint32_t(v));
}

// Bounds-checked big-endian reader.
class ByteReader {
 public:
  ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  explicit ByteReader(const Bytes& b) : ByteReader(b.data(), b.size()) {}

  uint8_t u8() { return need(1), p_[pos_++]; }
  uint16_t u16() {
    need(2);
    uint16_t v = (uint16_t(p_[pos_]) << 8) | p_[pos_ + 1];
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v = (v << 8) | p_[pos_ + i];
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    uint64_t hi = u32();
    return (hi << 32) | u32();
  }
  Bytes take(size_t n) {
    need(n);
    Bytes b(p_ + pos_, p_ + pos_ + n);
    pos_ += n;
    return b;
  }
  size_t remaining() const { return n_ - pos_; }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > n_) throw A1Error(Err::CORRUPT_TABLE, "short read in decoder");
  }
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

inline Bytes to_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

}  // namespace a1
