// Value/Record wire format, JSON bridging, schema validation, and the
// ordering contract of encoded keys derived from field values.

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "a1/record.hpp"

using namespace a1;
using nlohmann::json;

TEST(Value, RoundTripsEveryKind) {
  std::vector<Value> samples = {
      Value::of_int(-12345678901234LL),
      Value::of_double(3.25),
      Value::of_bool(true),
      Value::of_string(std::string("hello\0world", 11)),
      Value::of_list({"a", "b", ""}),
      Value::of_map({{"k1", "v1"}, {"k2", ""}}),
  };
  for (const Value& v : samples) {
    Bytes enc;
    v.encode(enc);
    ByteReader r(enc);
    Value back = Value::decode(r);
    EXPECT_EQ(back, v);
    EXPECT_EQ(r.remaining(), 0u);
  }
}

TEST(Value, AccessorsEnforceTypes) {
  Value v = Value::of_int(7);
  EXPECT_EQ(v.as_int(), 7);
  EXPECT_THROW(v.as_string(), A1Error);
  EXPECT_THROW(Value::of_string("x").as_int(), A1Error);
  Bytes sink;
  EXPECT_THROW(Value::of_list({"a"}).key_encode(sink), A1Error);
}

TEST(Value, JsonBridgeMatchesTypes) {
  json j = {
      {"n", 42},
      {"pi", 2.5},
      {"flag", false},
      {"name", "neo"},
      {"tags", json::array({"x", "y"})},
      {"attrs", json::object({{"a", "1"}})},
  };
  Record rec = Record::from_json(j);
  EXPECT_EQ(rec.find("n")->as_int(), 42);
  EXPECT_EQ(rec.find("pi")->as_double(), 2.5);
  EXPECT_EQ(rec.find("flag")->as_bool(), false);
  EXPECT_EQ(rec.find("name")->as_string(), "neo");
  EXPECT_EQ(rec.find("tags")->as_list().size(), 2u);
  EXPECT_EQ(rec.find("attrs")->as_map().at("a"), "1");

  json back = rec.to_json();
  EXPECT_EQ(back["n"], 42);
  EXPECT_EQ(back["tags"][1], "y");
}

TEST(Value, JsonIntegerVsDoubleDistinction) {
  // 2.0 written as a JSON float must stay a double, not collapse to int.
  json j = json::parse(R"({"a": 2.0, "b": 2})");
  Record rec = Record::from_json(j);
  EXPECT_EQ(rec.find("a")->type(), FieldType::DOUBLE);
  EXPECT_EQ(rec.find("b")->type(), FieldType::INT);
}

TEST(Record, UnderscoreKeysAreDirectives) {
  json j = {{"id", "v1"}, {"_type", "person"}, {"_place_near", "v0"}};
  Record rec = Record::from_json(j);
  EXPECT_NE(rec.find("id"), nullptr);
  EXPECT_EQ(rec.find("_type"), nullptr);
  EXPECT_EQ(rec.find("_place_near"), nullptr);
}

TEST(Record, EncodeDecodePreservesFieldOrderIndependence) {
  Record a;
  a.set("z", Value::of_int(1));
  a.set("a", Value::of_string("s"));
  Record b;
  b.set("a", Value::of_string("s"));
  b.set("z", Value::of_int(1));
  Bytes ea = a.encode();
  Bytes eb = b.encode();
  EXPECT_EQ(ea, eb);  // map ordering canonicalizes the wire form
  Record back = Record::decode(ea);
  EXPECT_EQ(back.find("z")->as_int(), 1);
}

TEST(Schema, ValidateCatchesMismatches) {
  Schema s;
  s.fields = {{"id", FieldType::STRING}, {"age", FieldType::INT}};
  s.indexed = {"age"};

  Record ok;
  ok.set("id", Value::of_string("p1"));
  ok.set("age", Value::of_int(3));
  EXPECT_NO_THROW(s.validate(ok));

  Record wrong_type = ok;
  wrong_type.set("age", Value::of_string("three"));
  EXPECT_THROW(s.validate(wrong_type), A1Error);

  Record unknown = ok;
  unknown.set("height", Value::of_int(180));
  try {
    s.validate(unknown);
    FAIL() << "unknown field accepted";
  } catch (const A1Error& e) {
    EXPECT_EQ(e.code(), Err::UNKNOWN_FIELD);
  }
}

TEST(Schema, FromJsonParsesTypesAndIndexes) {
  json j = json::parse(R"({
    "fields": [{"name": "id", "type": "string"},
               {"name": "name", "type": "list<string>"},
               {"name": "year", "type": "int"},
               {"name": "rating", "type": "double"},
               {"name": "active", "type": "bool"},
               {"name": "roles", "type": "map<string,string>"}],
    "indexes": ["year"]
  })");
  Schema s = Schema::from_json(j);
  EXPECT_EQ(s.find("name")->type, FieldType::STRING_LIST);
  EXPECT_EQ(s.find("roles")->type, FieldType::STRING_MAP);
  EXPECT_EQ(s.indexed, std::vector<std::string>{"year"});

  // Composite types cannot back an ordered index.
  json bad = j;
  bad["indexes"] = json::array({"roles"});
  EXPECT_THROW(Schema::from_json(bad), A1Error);

  Bytes enc = s.encode();
  Schema back = Schema::decode(enc);
  EXPECT_EQ(back.fields.size(), s.fields.size());
  EXPECT_EQ(back.find("rating")->type, FieldType::DOUBLE);
  EXPECT_EQ(back.indexed, s.indexed);
}

TEST(KeyEncode, ScalarKeysSortLikeValues) {
  // Mixed-sign ints and doubles must key-encode in value order.
  std::vector<int64_t> ints = {-500, -1, 0, 1, 73, 1 << 20};
  for (size_t i = 0; i + 1 < ints.size(); i++) {
    Bytes a, b;
    Value::of_int(ints[i]).key_encode(a);
    Value::of_int(ints[i + 1]).key_encode(b);
    EXPECT_LT(a, b) << ints[i] << " vs " << ints[i + 1];
  }
  std::vector<double> dbls = {-1e9, -2.5, -0.0, 0.5, 3.25, 1e18};
  for (size_t i = 0; i + 1 < dbls.size(); i++) {
    Bytes a, b;
    Value::of_double(dbls[i]).key_encode(a);
    Value::of_double(dbls[i + 1]).key_encode(b);
    EXPECT_LE(a, b) << dbls[i] << " vs " << dbls[i + 1];
  }
}
