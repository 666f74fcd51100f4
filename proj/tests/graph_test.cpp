// Graph layer: vertex/edge CRUD, half-edge symmetry, inline list growth
// and the spill to the edge tree, cascade deletes, index maintenance, and
// a randomized soup checked against a shadow model plus the audit.

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "a1/graph.hpp"

using namespace a1;

namespace {

Record vrec(const std::string& pk) {
  Record r;
  r.set("id", Value::of_string(pk));
  return r;
}

Record person(const std::string& pk, const std::string& name, int64_t age) {
  Record r = vrec(pk);
  r.set("name", Value::of_string(name));
  r.set("age", Value::of_int(age));
  return r;
}

struct Fixture {
  std::unique_ptr<Cluster> cluster;
  std::unique_ptr<Store> store;
  std::unique_ptr<Catalog> catalog;
  std::unique_ptr<GraphEngine> graph;

  explicit Fixture(ClusterConfig cfg = {}) {
    cluster = spawn_cluster(cfg);
    store = std::make_unique<Store>(*cluster);
    catalog = std::make_unique<Catalog>(*store);
    graph = std::make_unique<GraphEngine>(*store, *catalog);

    graph->create_graph("g");
    Schema person_schema;
    person_schema.fields = {{"id", FieldType::STRING},
                            {"name", FieldType::STRING},
                            {"age", FieldType::INT}};
    person_schema.indexed = {"age"};
    graph->create_vertex_type("g", "person", person_schema);
    Schema film_schema;
    film_schema.fields = {{"id", FieldType::STRING}, {"title", FieldType::STRING}};
    graph->create_vertex_type("g", "film", film_schema);
    Schema knows_schema;
    knows_schema.fields = {{"since", FieldType::INT}};
    graph->create_edge_type("g", "knows", "person", "person", knows_schema);
    graph->create_edge_type("g", "likes", "person", "film", Schema{});
  }

  Addr must_find(const std::string& t, const std::string& pk) {
    auto tx = store->begin(0, true);
    auto a = graph->find_vertex(*tx, "g", t, pk, false);
    tx->commit();
    EXPECT_TRUE(a.has_value()) << t << "/" << pk;
    return *a;
  }

  size_t out_degree(Addr v, std::optional<uint32_t> type = std::nullopt) {
    auto tx = store->begin(0, true);
    auto n = graph->out_edges(*tx, "g", v, type).size();
    tx->commit();
    return n;
  }

  size_t in_degree(Addr v) {
    auto tx = store->begin(0, true);
    auto n = graph->in_edges(*tx, "g", v).size();
    tx->commit();
    return n;
  }

  uint32_t etype_id(const std::string& et) {
    auto tx = store->begin(0, true);
    auto e = graph->require_etype(*tx, "g", et);
    tx->commit();
    return e.type_id;
  }
};

}  // namespace

TEST(Graph, VertexCrudRoundTrip) {
  Fixture f;
  Addr a = f.graph->add_vertex("g", "person", person("p1", "Ada", 36));

  auto tx = f.store->begin(0, true);
  Record back = f.graph->read_record_at(*tx, a);
  tx->commit();
  EXPECT_EQ(back.find("name")->as_string(), "Ada");
  EXPECT_EQ(back.find("age")->as_int(), 36);

  try {
    f.graph->add_vertex("g", "person", person("p1", "Imposter", 1));
    FAIL() << "duplicate pk accepted";
  } catch (const A1Error& e) {
    EXPECT_EQ(e.code(), Err::DUPLICATE_KEY);
  }

  f.graph->update_vertex("g", "person", "p1", person("p1", "Ada L.", 37));
  {
    auto ro = f.store->begin(1, true);
    Record r2 = f.graph->read_record_at(*ro, f.must_find("person", "p1"));
    ro->commit();
    EXPECT_EQ(r2.find("name")->as_string(), "Ada L.");
  }

  Record renamed = person("p2", "Eve", 1);
  EXPECT_THROW(f.graph->update_vertex("g", "person", "p1", renamed), A1Error);

  f.graph->delete_vertex("g", "person", "p1");
  auto ro = f.store->begin(0, true);
  EXPECT_FALSE(f.graph->find_vertex(*ro, "g", "person", "p1", false).has_value());
  ro->commit();
  EXPECT_THROW(f.graph->delete_vertex("g", "person", "p1"), A1Error);
}

TEST(Graph, SchemaIsEnforcedOnWrite) {
  Fixture f;
  Record bad = person("px", "X", 1);
  bad.set("height", Value::of_int(180));
  EXPECT_THROW(f.graph->add_vertex("g", "person", bad), A1Error);

  Record wrong = vrec("py");
  wrong.set("age", Value::of_string("old"));
  EXPECT_THROW(f.graph->add_vertex("g", "person", wrong), A1Error);

  Record no_id;
  no_id.set("name", Value::of_string("ghost"));
  EXPECT_THROW(f.graph->add_vertex("g", "person", no_id), A1Error);

  // unknown vertex type, unknown graph
  EXPECT_THROW(f.graph->add_vertex("g", "robot", vrec("r1")), A1Error);
  EXPECT_THROW(f.graph->add_vertex("nope", "person", vrec("p1")), A1Error);
}

TEST(Graph, EdgesLinkBothDirections) {
  Fixture f;
  Addr p1 = f.graph->add_vertex("g", "person", person("p1", "Ada", 36));
  Addr p2 = f.graph->add_vertex("g", "person", person("p2", "Bob", 44));
  Addr m1 = f.graph->add_vertex("g", "film", [] {
    Record r = vrec("m1");
    r.set("title", Value::of_string("Metropolis"));
    return r;
  }());

  Record since;
  since.set("since", Value::of_int(1999));
  f.graph->add_edge("g", "knows", "p1", "p2", since);
  f.graph->add_edge("g", "likes", "p1", "m1");

  auto tx = f.store->begin(0, true);
  auto out = f.graph->out_edges(*tx, "g", p1);
  ASSERT_EQ(out.size(), 2u);
  auto in2 = f.graph->in_edges(*tx, "g", p2);
  ASSERT_EQ(in2.size(), 1u);
  EXPECT_EQ(in2[0].peer, p1);

  // the edge payload is shared between the two halves
  auto knows_out = f.graph->out_edges(*tx, "g", p1, f.etype_id("knows"));
  ASSERT_EQ(knows_out.size(), 1u);
  EXPECT_EQ(knows_out[0].type_id, in2[0].type_id);
  EXPECT_EQ(knows_out[0].data, in2[0].data);
  EXPECT_EQ(knows_out[0].peer, p2);
  ASSERT_FALSE(knows_out[0].data.is_null());
  Record payload = f.graph->read_record(*tx, knows_out[0].data);
  EXPECT_EQ(payload.find("since")->as_int(), 1999);

  // typed filter excludes the other edge type
  EXPECT_EQ(f.graph->out_edges(*tx, "g", p1, f.etype_id("likes")).size(), 1u);
  tx->commit();

  try {
    f.graph->add_edge("g", "knows", "p1", "p2");
    FAIL() << "duplicate edge accepted";
  } catch (const A1Error& e) {
    EXPECT_EQ(e.code(), Err::DUPLICATE_EDGE);
  }

  // endpoint type mismatch: likes goes person -> film
  EXPECT_THROW(f.graph->add_edge("g", "likes", "p1", "p2"), A1Error);

  f.graph->delete_edge("g", "knows", "p1", "p2");
  EXPECT_EQ(f.out_degree(p1), 1u);
  EXPECT_EQ(f.in_degree(p2), 0u);
  EXPECT_THROW(f.graph->delete_edge("g", "knows", "p1", "p2"), A1Error);

  EXPECT_TRUE(f.graph->audit("g").clean());
}

TEST(Graph, ParallelEdgesOfDifferentTypesCoexist) {
  Fixture f;
  f.graph->add_vertex("g", "person", person("p1", "Ada", 36));
  f.graph->add_vertex("g", "person", person("p2", "Bob", 44));
  Schema s;
  s.fields = {};
  f.graph->create_edge_type("g", "mentors", "person", "person", s);

  f.graph->add_edge("g", "knows", "p1", "p2");
  f.graph->add_edge("g", "mentors", "p1", "p2");
  Addr p1 = f.must_find("person", "p1");
  EXPECT_EQ(f.out_degree(p1), 2u);
  f.graph->delete_edge("g", "knows", "p1", "p2");
  EXPECT_EQ(f.out_degree(p1), 1u);
  EXPECT_EQ(f.out_degree(p1, f.etype_id("mentors")), 1u);
  EXPECT_TRUE(f.graph->audit("g").clean());
}

TEST(Graph, SelfLoopsWorkAndCascadeCleanly) {
  Fixture f;
  Addr p1 = f.graph->add_vertex("g", "person", person("p1", "Self", 1));
  f.graph->add_edge("g", "knows", "p1", "p1");

  EXPECT_EQ(f.out_degree(p1), 1u);
  EXPECT_EQ(f.in_degree(p1), 1u);
  EXPECT_TRUE(f.graph->audit("g").clean());

  f.graph->delete_vertex("g", "person", "p1");
  auto audit = f.graph->audit("g");
  EXPECT_TRUE(audit.clean());
  EXPECT_EQ(audit.vertices, 0u);
  EXPECT_EQ(audit.half_edges, 0u);
}

TEST(Graph, CascadeDeleteDetachesPeers) {
  Fixture f;
  Addr p1 = f.graph->add_vertex("g", "person", person("p1", "A", 1));
  f.graph->add_vertex("g", "person", person("p2", "B", 2));
  Addr p3 = f.graph->add_vertex("g", "person", person("p3", "C", 3));
  Record payload;
  payload.set("since", Value::of_int(5));
  f.graph->add_edge("g", "knows", "p1", "p2", payload);
  f.graph->add_edge("g", "knows", "p2", "p3", payload);
  f.graph->add_edge("g", "knows", "p2", "p2", payload);  // self loop too

  f.graph->delete_vertex("g", "person", "p2");

  EXPECT_EQ(f.out_degree(p1), 0u);
  EXPECT_EQ(f.in_degree(p3), 0u);
  auto audit = f.graph->audit("g");
  EXPECT_TRUE(audit.clean()) << audit.dangling_halves << " dangling, "
                             << audit.count_mismatches << " count mismatches";
  EXPECT_EQ(audit.vertices, 2u);
  EXPECT_EQ(audit.half_edges, 0u);
}

TEST(Graph, InlineListGrowsThenSpillsToTree) {
  Fixture f;
  Addr hub = f.graph->add_vertex("g", "person", person("hub", "Hub", 1));
  uint32_t knows = f.etype_id("knows");

  // Degrees chosen around the growth and spill boundaries.
  const std::vector<size_t> checkpoints = {1, 8, 9, 64, 1024, 1025, 1400};
  size_t added = 0;
  for (size_t target : checkpoints) {
    while (added < target) {
      std::string pk = "fan" + std::to_string(added);
      f.graph->add_vertex("g", "person", person(pk, "F", int64_t(added)));
      f.graph->add_edge("g", "knows", "hub", pk);
      added++;
    }
    EXPECT_EQ(f.out_degree(hub, knows), target) << "at degree " << target;
  }

  // Big vertices keep answering point queries about specific neighbors.
  auto tx = f.store->begin(0, true);
  auto all = f.graph->out_edges(*tx, "g", hub);
  tx->commit();
  std::set<uint64_t> peers;
  for (auto& e : all) peers.insert(e.peer.packed());
  EXPECT_EQ(peers.size(), 1400u);

  auto audit = f.graph->audit("g");
  EXPECT_TRUE(audit.clean());
  // 1400 edges, two halves each
  EXPECT_EQ(audit.half_edges, 2800u);

  // Deleting from tree mode and shrinking back below the threshold keeps
  // the listing exact (there is deliberately no un-spill).
  for (size_t i = 0; i < 1000; i++)
    f.graph->delete_edge("g", "knows", "hub", "fan" + std::to_string(i));
  EXPECT_EQ(f.out_degree(hub, knows), 400u);
  EXPECT_TRUE(f.graph->audit("g").clean());

  // Cascade delete of a spilled vertex must clear the whole tree range.
  f.graph->delete_vertex("g", "person", "hub");
  auto final_audit = f.graph->audit("g");
  EXPECT_TRUE(final_audit.clean());
  EXPECT_EQ(final_audit.half_edges, 0u);
}

TEST(Graph, SecondaryIndexTracksUpdatesAndDeletes) {
  Fixture f;
  f.graph->add_vertex("g", "person", person("p1", "A", 30));
  f.graph->add_vertex("g", "person", person("p2", "B", 30));
  f.graph->add_vertex("g", "person", person("p3", "C", 99));

  auto ages_at = [&](int64_t age) {
    auto tx = f.store->begin(0, true);
    auto ie = f.catalog->lookup(*tx, GraphEngine::index_name("g", "person", "age"));
    EXPECT_TRUE(ie.has_value());
    BTree idx(*f.store, ie->root);
    Bytes prefix;
    Value::of_int(age).key_encode(prefix);
    auto hits = idx.scan_prefix(*tx, prefix);
    tx->commit();
    return hits.size();
  };

  EXPECT_EQ(ages_at(30), 2u);
  EXPECT_EQ(ages_at(99), 1u);

  f.graph->update_vertex("g", "person", "p2", person("p2", "B", 31));
  EXPECT_EQ(ages_at(30), 1u);
  EXPECT_EQ(ages_at(31), 1u);

  f.graph->delete_vertex("g", "person", "p1");
  EXPECT_EQ(ages_at(30), 0u);
  EXPECT_TRUE(f.graph->audit("g").clean());
}

TEST(Graph, DeclareIndexRegistersEmptyTree) {
  Fixture f;
  f.graph->declare_index("g", "person", "name");
  auto tx = f.store->begin(0, true);
  auto ie = f.catalog->lookup(*tx, GraphEngine::index_name("g", "person", "name"));
  ASSERT_TRUE(ie.has_value());
  BTree idx(*f.store, ie->root);
  EXPECT_EQ(idx.size(*tx), 0u);
  auto vt = f.catalog->lookup(*tx, GraphEngine::vtype_name("g", "person"));
  EXPECT_NE(std::find(vt->schema.indexed.begin(), vt->schema.indexed.end(), "name"),
            vt->schema.indexed.end());
  tx->commit();

  EXPECT_THROW(f.graph->declare_index("g", "person", "bogus"), A1Error);
}

TEST(Graph, RandomSoupMatchesShadowModel) {
  Fixture f;
  Rng rng(7);
  uint32_t knows = f.etype_id("knows");

  std::set<std::string> alive;                          // person pks
  std::map<std::pair<std::string, std::string>, bool> edges;  // src,dst -> exists
  int next_pk = 0;

  auto random_alive = [&]() -> std::string {
    auto it = alive.begin();
    std::advance(it, rng.below(alive.size()));
    return *it;
  };

  for (int op = 0; op < 1500; op++) {
    uint64_t roll = rng.below(100);
    if (roll < 30 || alive.size() < 2) {  // add vertex
      std::string pk = "v" + std::to_string(next_pk++);
      f.graph->add_vertex("g", "person", person(pk, "n" + pk, int64_t(rng.below(50))));
      alive.insert(pk);
    } else if (roll < 60) {  // add edge (maybe duplicate, maybe self loop)
      std::string a = random_alive(), b = random_alive();
      bool exists = edges.count({a, b}) && edges[{a, b}];
      if (exists) {
        EXPECT_THROW(f.graph->add_edge("g", "knows", a, b), A1Error);
      } else {
        f.graph->add_edge("g", "knows", a, b);
        edges[{a, b}] = true;
      }
    } else if (roll < 75) {  // delete edge
      std::string a = random_alive(), b = random_alive();
      bool exists = edges.count({a, b}) && edges[{a, b}];
      if (exists) {
        f.graph->delete_edge("g", "knows", a, b);
        edges[{a, b}] = false;
      } else {
        EXPECT_THROW(f.graph->delete_edge("g", "knows", a, b), A1Error);
      }
    } else if (roll < 85) {  // update vertex
      std::string a = random_alive();
      f.graph->update_vertex("g", "person", a,
                             person(a, "renamed", int64_t(rng.below(50))));
    } else {  // cascade delete vertex
      std::string a = random_alive();
      f.graph->delete_vertex("g", "person", a);
      alive.erase(a);
      for (auto& [k, v] : edges)
        if (k.first == a || k.second == a) v = false;
    }
  }

  // Shadow comparison: exact vertex set, exact out-adjacency per vertex.
  size_t live_edges = 0;
  auto tx = f.store->begin(0, true);
  for (const std::string& pk : alive) {
    auto va = f.graph->find_vertex(*tx, "g", "person", pk, false);
    ASSERT_TRUE(va.has_value()) << pk;
    std::set<std::string> expect;
    for (auto& [k, v] : edges)
      if (v && k.first == pk) expect.insert(k.second);
    auto out = f.graph->out_edges(*tx, "g", *va, knows);
    std::set<std::string> got;
    for (auto& e : out) got.insert(f.graph->read_record_at(*tx, e.peer).find("id")->as_string());
    EXPECT_EQ(got, expect) << "adjacency mismatch at " << pk;
    live_edges += expect.size();
  }
  tx->commit();

  auto audit = f.graph->audit("g");
  EXPECT_TRUE(audit.clean())
      << audit.dangling_halves << " dangling, " << audit.count_mismatches
      << " count, " << audit.index_mismatches << " index";
  EXPECT_EQ(audit.vertices, alive.size());
  EXPECT_EQ(audit.half_edges, 2 * live_edges);
}

namespace {

// Captures the logged mutation stream for comparison.
struct RecordingLogger : MutationLogger {
  std::vector<std::string> events;
  void vertex_upsert(Transaction&, const std::string&, const std::string& t,
                     const std::string& pk, const Record&) override {
    events.push_back("v+ " + t + "/" + pk);
  }
  void vertex_delete(Transaction&, const std::string&, const std::string& t,
                     const std::string& pk) override {
    events.push_back("v- " + t + "/" + pk);
  }
  void edge_upsert(Transaction&, const std::string&, const std::string& et,
                   const std::string&, const std::string& src, const std::string&,
                   const std::string& dst, const Record&) override {
    events.push_back("e+ " + et + " " + src + ">" + dst);
  }
  void edge_delete(Transaction&, const std::string&, const std::string& et,
                   const std::string&, const std::string& src, const std::string&,
                   const std::string& dst) override {
    events.push_back("e- " + et + " " + src + ">" + dst);
  }
};

}  // namespace

TEST(Graph, MutationLoggerSeesCascades) {
  Fixture f;
  RecordingLogger log;
  f.graph->set_logger(&log);

  f.graph->add_vertex("g", "person", person("p1", "A", 1));
  f.graph->add_vertex("g", "person", person("p2", "B", 2));
  f.graph->add_edge("g", "knows", "p1", "p2");
  f.graph->delete_vertex("g", "person", "p2");

  std::vector<std::string> expect = {
      "v+ person/p1",
      "v+ person/p2",
      "e+ knows p1>p2",
      "e- knows p1>p2",  // cascade logs the edge before the vertex
      "v- person/p2",
  };
  EXPECT_EQ(log.events, expect);
}

TEST(Graph, PlacementHintColocatesNeighbors) {
  Fixture f;
  Addr anchor = f.graph->add_vertex("g", "person", person("anchor", "A", 1));
  NodeId home = f.store->primary_of(anchor);
  size_t colocated = 0;
  for (int i = 0; i < 30; i++) {
    std::string pk = "n" + std::to_string(i);
    Addr a = f.graph->add_vertex("g", "person", person(pk, "N", 2), anchor);
    if (f.store->primary_of(a) == home) colocated++;
  }
  // Region overflow can spill a few allocations elsewhere, but the bulk
  // must land with the anchor.
  EXPECT_GE(colocated, 25u);
}
