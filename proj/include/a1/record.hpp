#pragma once
// Typed attribute records for vertices and edges.
//
// Records are self-describing on the wire (field name + type tag per
// field) so durable copies survive without consulting a schema. Schemas
// validate field names and types at write time and declare which fields
// carry secondary indexes.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "a1/common.hpp"
#include "a1/keyenc.hpp"

namespace a1 {

using Json = nlohmann::json;

enum class FieldType : uint8_t {
  INT = 1,
  DOUBLE = 2,
  BOOL = 3,
  STRING = 4,
  STRING_LIST = 5,
  STRING_MAP = 6,
};

inline const char* field_type_name(FieldType t) {
  switch (t) {
    case FieldType::INT: return "int";
    case FieldType::DOUBLE: return "double";
    case FieldType::BOOL: return "bool";
    case FieldType::STRING: return "string";
    case FieldType::STRING_LIST: return "list<string>";
    case FieldType::STRING_MAP: return "map<string,string>";
  }
  return "?";
}

inline FieldType field_type_from_name(const std::string& s) {
  if (s == "int") return FieldType::INT;
  if (s == "double") return FieldType::DOUBLE;
  if (s == "bool") return FieldType::BOOL;
  if (s == "string") return FieldType::STRING;
  if (s == "list<string>") return FieldType::STRING_LIST;
  if (s == "map<string,string>") return FieldType::STRING_MAP;
  fail(Err::PARSE_ERROR, "unknown field type '" + s + "'");
}

class Value {
 public:
  using List = std::vector<std::string>;
  using Map = std::map<std::string, std::string>;

  Value() : v_(int64_t{0}) {}
  static Value of_int(int64_t i) { return Value(i); }
  static Value of_double(double d) { return Value(d); }
  static Value of_bool(bool b) { return Value(b); }
  static Value of_string(std::string s) { return Value(std::move(s)); }
  static Value of_list(List l) { return Value(std::move(l)); }
  static Value of_map(Map m) { return Value(std::move(m)); }

  FieldType type() const { return FieldType(uint8_t(v_.index() + 1)); }

  int64_t as_int() const { return get<int64_t>(); }
  double as_double() const { return get<double>(); }
  bool as_bool() const { return get<bool>(); }
  const std::string& as_string() const { return get<std::string>(); }
  const List& as_list() const { return get<List>(); }
  const Map& as_map() const { return get<Map>(); }

  bool operator==(const Value& o) const { return v_ == o.v_; }

  static Value from_json(const Json& j) {
    if (j.is_boolean()) return of_bool(j.get<bool>());
    if (j.is_number_integer()) return of_int(j.get<int64_t>());
    if (j.is_number_float()) return of_double(j.get<double>());
    if (j.is_string()) return of_string(j.get<std::string>());
    if (j.is_array()) {
      List l;
      for (const auto& e : j) {
        if (!e.is_string()) fail(Err::PARSE_ERROR, "list fields hold strings only");
        l.push_back(e.get<std::string>());
      }
      return of_list(std::move(l));
    }
    if (j.is_object()) {
      Map m;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_string()) fail(Err::PARSE_ERROR, "map fields hold strings only");
        m[it.key()] = it.value().get<std::string>();
      }
      return of_map(std::move(m));
    }
    fail(Err::PARSE_ERROR, "unsupported JSON value for a field");
  }

  Json to_json() const {
    switch (type()) {
      case FieldType::INT: return as_int();
      case FieldType::DOUBLE: return as_double();
      case FieldType::BOOL: return as_bool();
      case FieldType::STRING: return as_string();
      case FieldType::STRING_LIST: return Json(as_list());
      case FieldType::STRING_MAP: return Json(as_map());
    }
    fail(Err::INTERNAL, "bad value type");
  }

  void encode(Bytes& out) const {
    out.push_back(uint8_t(type()));
    switch (type()) {
      case FieldType::INT:
        put_u64_be(out, uint64_t(as_int()));
        break;
      case FieldType::DOUBLE: {
        uint64_t bits;
        double d = as_double();
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, 8);
        put_u64_be(out, bits);
        break;
      }
      case FieldType::BOOL:
        out.push_back(as_bool() ? 1 : 0);
        break;
      case FieldType::STRING:
        put_str(out, as_string());
        break;
      case FieldType::STRING_LIST: {
        put_u16_be(out, uint16_t(as_list().size()));
        for (const auto& s : as_list()) put_str(out, s);
        break;
      }
      case FieldType::STRING_MAP: {
        put_u16_be(out, uint16_t(as_map().size()));
        for (const auto& [k, v] : as_map()) {
          put_str(out, k);
          put_str(out, v);
        }
        break;
      }
    }
  }

  static Value decode(ByteReader& r) {
    auto t = FieldType(r.u8());
    switch (t) {
      case FieldType::INT: return of_int(int64_t(r.u64()));
      case FieldType::DOUBLE: {
        uint64_t bits = r.u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return of_double(d);
      }
      case FieldType::BOOL: return of_bool(r.u8() != 0);
      case FieldType::STRING: return of_string(take_str(r));
      case FieldType::STRING_LIST: {
        uint16_t n = r.u16();
        List l;
        l.reserve(n);
        for (uint16_t i = 0; i < n; i++) l.push_back(take_str(r));
        return of_list(std::move(l));
      }
      case FieldType::STRING_MAP: {
        uint16_t n = r.u16();
        Map m;
        for (uint16_t i = 0; i < n; i++) {
          std::string k = take_str(r);
          m[k] = take_str(r);
        }
        return of_map(std::move(m));
      }
    }
    fail(Err::CORRUPT_TABLE, "bad value type tag");
  }

  // Order-preserving encoding for secondary index keys; scalars only.
  void key_encode(Bytes& out) const {
    switch (type()) {
      case FieldType::INT:
        key_put_i64(out, as_int());
        return;
      case FieldType::DOUBLE:
        key_put_f64(out, as_double());
        return;
      case FieldType::BOOL:
        out.push_back(as_bool() ? 1 : 0);
        return;
      case FieldType::STRING:
        key_put_str(out, as_string());
        return;
      default:
        fail(Err::SCHEMA_VIOLATION, "list and map fields are not indexable");
    }
  }

 private:
  template <typename T>
  explicit Value(T t) : v_(std::move(t)) {}

  template <typename T>
  const T& get() const {
    const T* p = std::get_if<T>(&v_);
    if (!p) fail(Err::SCHEMA_VIOLATION, "field has a different type");
    return *p;
  }

  static void put_str(Bytes& out, const std::string& s) {
    put_u32_be(out, uint32_t(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  static std::string take_str(ByteReader& r) {
    uint32_t len = r.u32();
    auto span = r.take(len);
    return std::string(span.begin(), span.end());
  }

  std::variant<int64_t, double, bool, std::string, List, Map> v_;
};

// An attribute record: ordered field name -> value. Self-describing wire
// format: [field_count:2] ([name_len:2][name][value])...
class Record {
 public:
  Record() = default;

  bool empty() const { return fields_.empty(); }
  size_t size() const { return fields_.size(); }

  void set(const std::string& name, Value v) { fields_[name] = std::move(v); }

  const Value* find(const std::string& name) const {
    auto it = fields_.find(name);
    return it == fields_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, Value>& fields() const { return fields_; }

  bool operator==(const Record& o) const { return fields_ == o.fields_; }

  Bytes encode() const {
    Bytes out;
    put_u16_be(out, uint16_t(fields_.size()));
    for (const auto& [name, value] : fields_) {
      put_u16_be(out, uint16_t(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      value.encode(out);
    }
    return out;
  }

  static Record decode(const Bytes& raw) {
    ByteReader r(raw);
    Record rec = decode_from(r);
    return rec;
  }

  static Record decode_from(ByteReader& r) {
    Record rec;
    uint16_t n = r.u16();
    for (uint16_t i = 0; i < n; i++) {
      uint16_t len = r.u16();
      auto span = r.take(len);
      std::string name(span.begin(), span.end());
      rec.fields_[name] = Value::decode(r);
    }
    return rec;
  }

  static Record from_json(const Json& j) {
    Record rec;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!it.key().empty() && it.key()[0] == '_') continue;  // directives, not fields
      rec.fields_[it.key()] = Value::from_json(it.value());
    }
    return rec;
  }

  Json to_json() const {
    Json j = Json::object();
    for (const auto& [name, value] : fields_) j[name] = value.to_json();
    return j;
  }

 private:
  std::map<std::string, Value> fields_;
};

// Declared shape of one vertex or edge type.
struct Schema {
  struct Field {
    std::string name;
    FieldType type;
    bool operator==(const Field&) const = default;
  };
  std::vector<Field> fields;
  std::vector<std::string> indexed;  // fields with secondary indexes

  const Field* find(const std::string& name) const {
    for (const auto& f : fields)
      if (f.name == name) return &f;
    return nullptr;
  }

  // Records may omit fields but never carry unknown names or wrong types.
  void validate(const Record& rec) const {
    for (const auto& [name, value] : rec.fields()) {
      const Field* f = find(name);
      if (!f) fail(Err::UNKNOWN_FIELD, "field '" + name + "' is not in the schema");
      if (f->type != value.type())
        fail(Err::SCHEMA_VIOLATION, "field '" + name + "' expects " +
                                        field_type_name(f->type) + ", got " +
                                        field_type_name(value.type()));
    }
  }

  Bytes encode() const {
    Bytes out;
    put_u16_be(out, uint16_t(fields.size()));
    for (const auto& f : fields) {
      put_u16_be(out, uint16_t(f.name.size()));
      out.insert(out.end(), f.name.begin(), f.name.end());
      out.push_back(uint8_t(f.type));
    }
    put_u16_be(out, uint16_t(indexed.size()));
    for (const auto& name : indexed) {
      put_u16_be(out, uint16_t(name.size()));
      out.insert(out.end(), name.begin(), name.end());
    }
    return out;
  }

  static Schema decode(const Bytes& raw) {
    ByteReader r(raw);
    Schema s;
    uint16_t n = r.u16();
    for (uint16_t i = 0; i < n; i++) {
      uint16_t len = r.u16();
      auto span = r.take(len);
      Field f;
      f.name.assign(span.begin(), span.end());
      f.type = FieldType(r.u8());
      s.fields.push_back(std::move(f));
    }
    uint16_t m = r.u16();
    for (uint16_t i = 0; i < m; i++) {
      uint16_t len = r.u16();
      auto span = r.take(len);
      s.indexed.emplace_back(span.begin(), span.end());
    }
    return s;
  }

  static Schema from_json(const Json& j) {
    Schema s;
    if (j.contains("fields"))
      for (const auto& f : j.at("fields"))
        s.fields.push_back(Field{f.at("name").get<std::string>(),
                                 field_type_from_name(f.at("type").get<std::string>())});
    if (j.contains("indexes"))
      for (const auto& name : j.at("indexes")) {
        std::string n = name.get<std::string>();
        const Field* f = s.find(n);
        if (!f) fail(Err::UNKNOWN_FIELD, "indexed field '" + n + "' is not declared");
        if (f->type == FieldType::STRING_LIST || f->type == FieldType::STRING_MAP)
          fail(Err::SCHEMA_VIOLATION, "list and map fields are not indexable");
        s.indexed.push_back(std::move(n));
      }
    return s;
  }
};

}  // namespace a1
