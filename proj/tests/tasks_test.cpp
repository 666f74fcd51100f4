// Workflow engine: transactional enqueue, priority ordering, cursor-paged
// batches, DeleteGraph fan-out and finalization, lease-based recovery from
// worker loss, and exactly-once completion under racing workers.

#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <thread>

#include "a1/tasks.hpp"

using namespace a1;

namespace {

Record vrec(const std::string& pk) {
  Record r;
  r.set("id", Value::of_string(pk));
  return r;
}

Schema id_schema() {
  Schema s;
  s.fields = {{"id", FieldType::STRING}};
  return s;
}

Schema aged_schema() {
  Schema s;
  s.fields = {{"id", FieldType::STRING}, {"age", FieldType::INT}};
  return s;
}

struct Fixture {
  std::unique_ptr<Cluster> cluster;
  std::unique_ptr<Store> store;
  std::unique_ptr<Catalog> catalog;
  std::unique_ptr<GraphEngine> graph;
  std::unique_ptr<TaskEngine> tasks;

  Fixture() {
    cluster = spawn_cluster({});
    store = std::make_unique<Store>(*cluster);
    catalog = std::make_unique<Catalog>(*store);
    graph = std::make_unique<GraphEngine>(*store, *catalog);
    tasks = std::make_unique<TaskEngine>(*store, *catalog, *graph);
  }

  template <typename Fn>
  void apply(Fn&& fn) {
    graph->with_retry(0, std::forward<Fn>(fn));
  }

  std::optional<CatalogEntry> entry(const std::string& name) {
    auto tx = store->begin(0, true);
    auto e = catalog->lookup(*tx, name);
    tx->commit();
    return e;
  }

  size_t entries_under(const std::string& prefix) {
    auto tx = store->begin(0, true);
    auto v = catalog->list_prefix(*tx, prefix);
    tx->commit();
    return v.size();
  }

  bool vertex_exists(const std::string& t, const std::string& pk) {
    auto tx = store->begin(0, true);
    auto a = graph->find_vertex(*tx, "g", t, pk, false);
    tx->commit();
    return a.has_value();
  }

  size_t index_rows(const std::string& t, const std::string& field) {
    auto tx = store->begin(0, true);
    auto e = catalog->lookup(*tx, GraphEngine::index_name("g", t, field));
    EXPECT_TRUE(e.has_value());
    size_t n = BTree(*store, e->root).range(*tx, {}, {}).size();
    tx->commit();
    return n;
  }

  // Pumps one worker until idle, returning every batch report. Used where
  // a test cares about per-task progress, not just the end state.
  std::vector<TaskReport> drain_collecting() {
    std::vector<TaskReport> out;
    while (true) {
      auto r = tasks->claim_and_run(0);
      if (!r) return out;
      out.push_back(*r);
    }
  }

  // Rewrites a queue row as if a worker claimed it and then died: the row
  // sits in RUNNING with a live lease and no one is coming back for it.
  void wedge_claim(uint64_t task_id) {
    apply([&](Transaction& tx) {
      auto q = catalog->lookup(tx, TaskEngine::kQueueName);
      ASSERT_TRUE(q.has_value());
      BTree queue(*store, q->root);
      for (auto& [k, v] : queue.range(tx, {}, {})) {
        Task t = Task::decode(v);
        if (t.task_id != task_id) continue;
        t.state = TaskState::RUNNING;
        t.lease_expiry = cluster->tick() + kLeaseTicks;
        queue.put(tx, t.queue_key(), t.encode());
        return;
      }
      FAIL() << "task " << task_id << " not queued";
    });
  }
};

}  // namespace

TEST(Tasks, EnqueueIsVisibleOnlyAfterCommit) {
  Fixture f;
  Record args;
  args.set("graph", Value::of_string("g"));

  {
    auto tx = f.store->begin(0, false);
    f.tasks->enqueue_task(*tx, TaskKind::DELETE_GRAPH, args);
    tx->abort();
  }
  EXPECT_EQ(f.tasks->pending_count(), 0u);

  uint64_t id = 0;
  f.apply([&](Transaction& tx) {
    id = f.tasks->enqueue_task(tx, TaskKind::DELETE_GRAPH, args);
  });
  auto listed = f.tasks->list_tasks();
  ASSERT_EQ(listed.size(), 1u);
  EXPECT_EQ(listed[0].task_id, id);
  EXPECT_EQ(listed[0].state, TaskState::PENDING);
  EXPECT_EQ(listed[0].kind, TaskKind::DELETE_GRAPH);
  EXPECT_EQ(listed[0].arg("graph"), "g");
}

TEST(Tasks, TaskIdsStayMonotonicAcrossEngines) {
  Fixture f;
  uint64_t a = f.tasks->enqueue_sweep();
  uint64_t b = f.tasks->enqueue_sweep();
  EXPECT_LT(a, b);

  // A second engine on the same store attaches to the same queue and keeps
  // allocating from the shared counter instead of reusing ids.
  TaskEngine other(*f.store, *f.catalog, *f.graph);
  EXPECT_EQ(other.pending_count(), 2u);
  uint64_t c = other.enqueue_sweep();
  EXPECT_LT(b, c);
  EXPECT_EQ(f.tasks->pending_count(), 3u);
}

TEST(Tasks, NormalPriorityRunsBeforeOlderLowPriority) {
  Fixture f;
  std::vector<std::string> ran;
  f.tasks->set_sweep_handler([&](Transaction&, Record& args) {
    ran.push_back(args.find("tag")->as_string());
    return true;
  });

  Record low;
  low.set("tag", Value::of_string("backfill"));
  uint64_t low_id = f.tasks->enqueue_sweep(low);

  uint64_t norm_id = 0;
  f.apply([&](Transaction& tx) {
    Record norm;
    norm.set("tag", Value::of_string("cleanup"));
    norm_id = f.tasks->enqueue_task(tx, TaskKind::SWEEP_SEGMENT, norm, kPriorityNormal);
  });
  ASSERT_LT(low_id, norm_id);  // enqueued later, must still run first

  auto stats = f.tasks->run_until_idle();
  EXPECT_EQ(stats.pumps, 2u);
  ASSERT_EQ(ran.size(), 2u);
  EXPECT_EQ(ran[0], "cleanup");
  EXPECT_EQ(ran[1], "backfill");
  EXPECT_EQ(f.tasks->pending_count(), 0u);
}

TEST(Tasks, SweepHandlerPagesThroughBatchesViaArgs) {
  Fixture f;
  f.tasks->set_sweep_handler([](Transaction&, Record& args) {
    int64_t left = args.find("left")->as_int();
    args.set("left", Value::of_int(left - 1));
    return left <= 1;
  });
  Record args;
  args.set("left", Value::of_int(3));
  f.tasks->enqueue_sweep(args);

  auto reports = f.drain_collecting();
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_TRUE(reports[0].requeued);
  EXPECT_TRUE(reports[1].requeued);
  EXPECT_TRUE(reports[2].finished);
  EXPECT_EQ(f.tasks->pending_count(), 0u);
}

TEST(Tasks, SweepWithoutHandlerIsDropped) {
  Fixture f;
  f.tasks->enqueue_sweep();
  auto stats = f.tasks->run_until_idle();
  EXPECT_EQ(stats.pumps, 1u);
  EXPECT_EQ(f.tasks->pending_count(), 0u);
}

TEST(Tasks, DeleteGraphRejectsNewWritesImmediately) {
  Fixture f;
  f.graph->create_graph("g");
  f.graph->create_vertex_type("g", "person", id_schema());
  f.graph->create_edge_type("g", "knows", "person", "person", Schema{});
  f.graph->add_vertex("g", "person", vrec("p1"));
  f.graph->add_vertex("g", "person", vrec("p2"));

  f.tasks->delete_graph("g");

  // The catalog flip lands with the enqueue; no worker has run yet.
  try {
    f.graph->add_vertex("g", "person", vrec("p3"));
    FAIL() << "write into a deleting graph accepted";
  } catch (const A1Error& e) {
    EXPECT_EQ(e.code(), Err::DELETING);
  }
  try {
    f.graph->add_edge("g", "knows", "p1", "p2");
    FAIL() << "edge into a deleting graph accepted";
  } catch (const A1Error& e) {
    EXPECT_EQ(e.code(), Err::DELETING);
  }

  f.tasks->run_until_idle();
  EXPECT_EQ(f.tasks->pending_count(), 0u);
  EXPECT_EQ(f.entries_under("default/g"), 0u);
}

TEST(Tasks, DeleteGraphFansOutAndReturnsEveryObject) {
  Fixture f;
  size_t baseline = f.store->live_object_count();

  f.graph->create_graph("g");
  f.graph->create_vertex_type("g", "person", id_schema());
  f.graph->create_vertex_type("g", "film", id_schema());
  f.graph->create_vertex_type("g", "studio", id_schema());
  f.graph->create_edge_type("g", "likes", "person", "film", Schema{});
  f.graph->create_edge_type("g", "made", "studio", "film", Schema{});
  for (int i = 0; i < 12; i++) f.graph->add_vertex("g", "person", vrec("p" + std::to_string(i)));
  for (int i = 0; i < 6; i++) f.graph->add_vertex("g", "film", vrec("f" + std::to_string(i)));
  for (int i = 0; i < 3; i++) f.graph->add_vertex("g", "studio", vrec("s" + std::to_string(i)));
  for (int i = 0; i < 12; i++)
    f.graph->add_edge("g", "likes", "p" + std::to_string(i), "f" + std::to_string(i % 6));
  for (int i = 0; i < 6; i++)
    f.graph->add_edge("g", "made", "s" + std::to_string(i % 3), "f" + std::to_string(i));

  f.tasks->delete_graph("g");
  auto reports = f.drain_collecting();

  // One fan-out, one batch per type, one finalize.
  ASSERT_EQ(reports.size(), 5u);
  EXPECT_EQ(reports[0].kind, TaskKind::DELETE_GRAPH);
  EXPECT_TRUE(reports[0].waiting);
  EXPECT_EQ(reports[0].items, 3u);
  for (int i = 1; i <= 3; i++) {
    EXPECT_EQ(reports[i].kind, TaskKind::DELETE_TYPE);
    EXPECT_TRUE(reports[i].finished);
  }
  EXPECT_EQ(reports[1].items + reports[2].items + reports[3].items, 21u);
  EXPECT_EQ(reports[4].kind, TaskKind::DELETE_GRAPH);
  EXPECT_TRUE(reports[4].finished);

  EXPECT_EQ(f.tasks->pending_count(), 0u);
  EXPECT_EQ(f.entries_under("default/g"), 0u);
  f.store->run_gc();
  EXPECT_EQ(f.store->live_object_count(), baseline);
}

TEST(Tasks, LargeTypeDeletionPagesWithACursor) {
  Fixture f;
  size_t baseline = f.store->live_object_count();

  f.graph->create_graph("g");
  Schema person = aged_schema();
  person.indexed = {"age"};
  f.graph->create_vertex_type("g", "person", person);
  f.graph->create_vertex_type("g", "film", id_schema());
  f.graph->create_edge_type("g", "likes", "person", "film", Schema{});
  for (int i = 0; i < 30; i++) f.graph->add_vertex("g", "film", vrec("f" + std::to_string(i)));
  for (int i = 0; i < 350; i++) {
    Record r = vrec("p" + std::to_string(i));
    r.set("age", Value::of_int(20 + i % 50));
    f.graph->add_vertex("g", "person", r);
    f.graph->add_edge("g", "likes", "p" + std::to_string(i), "f" + std::to_string(i % 30));
  }

  f.tasks->delete_graph("g");
  auto reports = f.drain_collecting();

  // 350 rows at 100 per batch: three requeues before the type drains. The
  // film type fits in one batch and never requeues.
  size_t requeues = 0;
  uint64_t deleted = 0;
  for (const auto& r : reports)
    if (r.kind == TaskKind::DELETE_TYPE) {
      if (r.requeued) requeues++;
      deleted += r.items;
    }
  EXPECT_EQ(requeues, 3u);
  EXPECT_EQ(deleted, 380u);

  EXPECT_FALSE(f.vertex_exists("person", "p0"));
  EXPECT_FALSE(f.vertex_exists("film", "f12"));
  EXPECT_EQ(f.entries_under("default/g"), 0u);
  EXPECT_EQ(f.tasks->pending_count(), 0u);
  f.store->run_gc();
  EXPECT_EQ(f.store->live_object_count(), baseline);
}

TEST(Tasks, LeaseExpiryLetsAnotherWorkerResume) {
  Fixture f;
  f.graph->create_graph("g");
  f.graph->create_vertex_type("g", "person", id_schema());
  for (int i = 0; i < 150; i++) f.graph->add_vertex("g", "person", vrec("p" + std::to_string(i)));

  f.tasks->delete_graph("g");
  auto fan_out = f.tasks->claim_and_run(0);
  ASSERT_TRUE(fan_out && fan_out->waiting);
  auto first_batch = f.tasks->claim_and_run(0);
  ASSERT_TRUE(first_batch && first_batch->requeued);
  EXPECT_EQ(first_batch->items, 100u);

  // The child is mid-flight when its next claimant dies silently.
  uint64_t child_id = first_batch->task_id;
  f.wedge_claim(child_id);

  // While the lease is live nothing is runnable: the parent waits on its
  // child and the child looks owned.
  auto stats = f.tasks->run_until_idle();
  EXPECT_EQ(stats.pumps, 0u);
  EXPECT_EQ(f.tasks->pending_count(), 2u);

  f.cluster->advance_tick(kLeaseTicks);
  auto resumed = f.tasks->run_until_idle();
  EXPECT_GE(resumed.pumps, 2u);  // surviving batch plus the parent finalize
  EXPECT_EQ(f.tasks->pending_count(), 0u);
  EXPECT_EQ(f.entries_under("default/g"), 0u);
  EXPECT_FALSE(f.vertex_exists("person", "p149"));
}

TEST(Tasks, ConcurrentWorkersFinishEveryTaskExactlyOnce) {
  Fixture f;
  constexpr int kTasks = 24;

  // Each completed sweep increments a shared in-store counter inside the
  // batch transaction, so the counter records committed completions only:
  // handler re-runs from claim races or conflicts leave no trace.
  Addr counter_addr;
  f.apply([&](Transaction& tx) {
    ObjBuf& c = tx.alloc(64);
    std::memset(c.data(), 0, 64);
    counter_addr = c.addr();
  });
  f.tasks->set_sweep_handler([&](Transaction& tx, Record&) {
    ObjBuf c = tx.read(counter_addr, 64);
    ByteReader r(c.bytes());
    uint64_t n = r.u64() + 1;
    Bytes enc;
    put_u64_be(enc, n);
    ObjBuf& w = tx.open_for_write(c);
    std::memcpy(w.data(), enc.data(), enc.size());
    return true;
  });
  for (int i = 0; i < kTasks; i++) f.tasks->enqueue_sweep();

  std::atomic<int> remaining{kTasks};
  std::atomic<uint64_t> claim_losses{0};
  auto nodes = f.cluster->live_nodes();
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; w++)
    workers.emplace_back([&, w] {
      while (remaining.load() > 0) {
        try {
          auto r = f.tasks->claim_and_run(nodes[w % nodes.size()]);
          if (r && r->finished) remaining.fetch_sub(1);
          if (!r) std::this_thread::yield();
        } catch (const A1Error& e) {
          if (e.code() != Err::CLAIM_LOST) throw;
          claim_losses.fetch_add(1);
        }
      }
    });
  for (auto& t : workers) t.join();

  EXPECT_EQ(f.tasks->pending_count(), 0u);
  uint64_t final_count = 0;
  {
    auto tx = f.store->begin(0, true);
    ObjBuf c = tx->read(counter_addr, 64);
    ByteReader r(c.bytes());
    final_count = r.u64();
    tx->commit();
  }
  EXPECT_EQ(final_count, uint64_t(kTasks));
}

TEST(Tasks, BuildIndexBackfillsWhileWritersKeepWriting) {
  Fixture f;
  f.graph->create_graph("g");
  f.graph->create_vertex_type("g", "person", aged_schema());
  for (int i = 0; i < 230; i++) {
    Record r = vrec("p" + std::to_string(i));
    r.set("age", Value::of_int(i % 70));
    f.graph->add_vertex("g", "person", r);
  }

  f.tasks->build_index("g", "person", "age");

  // Registration is synchronous: new writes maintain the index while the
  // backfill waits in the queue, and the overlap resolves by upsert.
  auto vt = f.entry(GraphEngine::vtype_name("g", "person"));
  ASSERT_TRUE(vt.has_value());
  EXPECT_EQ(vt->schema.indexed, std::vector<std::string>{"age"});
  for (int i = 230; i < 250; i++) {
    Record r = vrec("p" + std::to_string(i));
    r.set("age", Value::of_int(i % 70));
    f.graph->add_vertex("g", "person", r);
  }

  auto reports = f.drain_collecting();
  size_t requeues = 0;
  for (const auto& r : reports)
    if (r.kind == TaskKind::BUILD_INDEX && r.requeued) requeues++;
  EXPECT_EQ(requeues, 2u);  // 250 rows in batches of 100

  EXPECT_EQ(f.index_rows("person", "age"), 250u);
  auto audit = f.graph->audit("g");
  EXPECT_EQ(audit.index_mismatches, 0u);
  EXPECT_EQ(audit.vertices, 250u);
}

TEST(Tasks, DropIndexStopsMaintenanceThenReapsTheTree) {
  Fixture f;
  f.graph->create_graph("g");
  Schema person = aged_schema();
  person.indexed = {"age"};
  f.graph->create_vertex_type("g", "person", person);
  for (int i = 0; i < 40; i++) {
    Record r = vrec("p" + std::to_string(i));
    r.set("age", Value::of_int(i));
    f.graph->add_vertex("g", "person", r);
  }

  f.tasks->drop_index("g", "person", "age");

  auto vt = f.entry(GraphEngine::vtype_name("g", "person"));
  EXPECT_TRUE(vt->schema.indexed.empty());
  auto idx = f.entry(GraphEngine::index_name("g", "person", "age"));
  ASSERT_TRUE(idx.has_value());
  EXPECT_FALSE(idx->active());

  // Writers no longer touch the dying tree.
  Record r = vrec("p40");
  r.set("age", Value::of_int(99));
  f.graph->add_vertex("g", "person", r);
  f.graph->delete_vertex("g", "person", "p3");

  f.tasks->run_until_idle();
  EXPECT_FALSE(f.entry(GraphEngine::index_name("g", "person", "age")).has_value());
  EXPECT_EQ(f.graph->audit("g").index_mismatches, 0u);

  try {
    f.tasks->drop_index("g", "person", "age");
    FAIL() << "dropping a missing index should fail";
  } catch (const A1Error& e) {
    EXPECT_EQ(e.code(), Err::NOT_FOUND);
  }
}

TEST(Tasks, WritesIntoADyingTypeAreRejected) {
  Fixture f;
  f.graph->create_graph("g");
  f.graph->create_vertex_type("g", "person", id_schema());
  f.graph->create_vertex_type("g", "film", id_schema());
  f.graph->create_edge_type("g", "likes", "person", "film", Schema{});
  f.graph->add_vertex("g", "person", vrec("p1"));
  f.graph->add_vertex("g", "film", vrec("f1"));

  f.apply([&](Transaction& tx) {
    f.catalog->mark_deleting(tx, GraphEngine::vtype_name("g", "film"));
  });

  try {
    f.graph->add_vertex("g", "film", vrec("f2"));
    FAIL() << "vertex write into a dying type accepted";
  } catch (const A1Error& e) {
    EXPECT_EQ(e.code(), Err::TYPE_DELETING);
  }
  // The edge type itself is still active; the endpoint check has to reject.
  try {
    f.graph->add_edge("g", "likes", "p1", "f1");
    FAIL() << "edge into a dying endpoint type accepted";
  } catch (const A1Error& e) {
    EXPECT_EQ(e.code(), Err::TYPE_DELETING);
  }
}
