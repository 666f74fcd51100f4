#pragma once
// Asynchronous workflow engine. A single durable queue (a btree keyed by
// priority then task id) holds every outstanding task; workers on any node
// race to claim the first runnable entry through ordinary transactions and
// then perform one bounded batch of work before putting the task back.
// Long jobs survive worker loss because progress lives in the task row:
// a cursor for scans, a child counter for fan-out, a lease for liveness.

#include <algorithm>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "a1/btree.hpp"
#include "a1/catalog.hpp"
#include "a1/graph.hpp"
#include "a1/keyenc.hpp"
#include "a1/record.hpp"
#include "a1/store.hpp"

namespace a1 {

enum class TaskKind : uint8_t {
  DELETE_GRAPH = 1,
  DELETE_TYPE = 2,
  DELETE_INDEX = 3,
  BUILD_INDEX = 4,
  SWEEP_SEGMENT = 5,
};

enum class TaskState : uint8_t {
  PENDING = 1,
  RUNNING = 2,
  WAITING_CHILDREN = 3,
  DONE = 4,
};

inline const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::DELETE_GRAPH: return "DELETE_GRAPH";
    case TaskKind::DELETE_TYPE: return "DELETE_TYPE";
    case TaskKind::DELETE_INDEX: return "DELETE_INDEX";
    case TaskKind::BUILD_INDEX: return "BUILD_INDEX";
    case TaskKind::SWEEP_SEGMENT: return "SWEEP_SEGMENT";
  }
  return "?";
}

// Lower sorts first, so cleanup runs ahead of background index builds.
constexpr uint8_t kPriorityNormal = 1;
constexpr uint8_t kPriorityLow = 2;

constexpr uint64_t kLeaseTicks = 500;
constexpr uint32_t kTaskBatchSize = 100;

struct Task {
  uint64_t task_id = 0;
  TaskKind kind = TaskKind::DELETE_GRAPH;
  TaskState state = TaskState::PENDING;
  uint8_t priority = kPriorityNormal;
  uint64_t parent = 0;  // 0 = no parent
  uint32_t pending_children = 0;
  uint64_t lease_expiry = 0;
  Record args;

  Bytes queue_key() const {
    Bytes k;
    k.push_back(priority);
    key_put_u64(k, task_id);
    return k;
  }

  Bytes encode() const {
    Bytes out;
    out.push_back(uint8_t(kind));
    out.push_back(uint8_t(state));
    out.push_back(priority);
    put_u64_be(out, task_id);
    put_u64_be(out, parent);
    put_u32_be(out, pending_children);
    put_u64_be(out, lease_expiry);
    Bytes a = args.encode();
    out.insert(out.end(), a.begin(), a.end());
    return out;
  }

  static Task decode(const Bytes& raw) {
    ByteReader r(raw);
    Task t;
    t.kind = TaskKind(r.u8());
    t.state = TaskState(r.u8());
    t.priority = r.u8();
    t.task_id = r.u64();
    t.parent = r.u64();
    t.pending_children = r.u32();
    t.lease_expiry = r.u64();
    t.args = Record::decode_from(r);
    return t;
  }

  std::string arg(const std::string& name) const {
    const Value* v = args.find(name);
    return v ? v->as_string() : std::string{};
  }
};

// What one pump of a worker accomplished.
struct TaskReport {
  uint64_t task_id = 0;
  TaskKind kind = TaskKind::DELETE_GRAPH;
  bool finished = false;   // task row removed (or went DONE under a parent)
  bool requeued = false;   // more batches remain
  bool waiting = false;    // parked on children
  uint64_t items = 0;      // work units touched this batch
};

class TaskEngine {
 public:
  static constexpr const char* kQueueName = "default/__tasks";
  static constexpr const char* kIdsName = "default/__tasks/ids";

  // A pluggable batch handler, used by the segment sweeper. Returns true
  // when the task is finished, false to requeue it for another pass.
  using SweepHandler = std::function<bool(Transaction&, Record& args)>;

  TaskEngine(Store& store, Catalog& catalog, GraphEngine& graph)
      : store_(store), catalog_(catalog), graph_(graph) {
    attach();
  }

  void set_sweep_handler(SweepHandler fn) { sweep_ = std::move(fn); }

  // --- enqueueing ---

  // Durable enqueue inside the caller's transaction: the task becomes
  // visible only if the caller commits.
  uint64_t enqueue_task(Transaction& tx, TaskKind kind, Record args,
                        uint8_t priority = kPriorityNormal, uint64_t parent = 0) {
    Task t;
    t.task_id = next_task_id(tx);
    t.kind = kind;
    t.state = TaskState::PENDING;
    t.priority = priority;
    t.parent = parent;
    t.args = std::move(args);
    queue_tree().insert_new(tx, t.queue_key(), t.encode());
    return t.task_id;
  }

  // DeleteGraph: flip the graph to DELETING right away (the data plane
  // starts rejecting writes) and hand the actual teardown to a task.
  uint64_t delete_graph(const std::string& g) {
    uint64_t id = 0;
    retry(pick(), [&](Transaction& tx) {
      catalog_.mark_deleting(tx, GraphEngine::graph_name(g));
      Record args;
      args.set("graph", Value::of_string(g));
      id = enqueue_task(tx, TaskKind::DELETE_GRAPH, std::move(args));
    });
    return id;
  }

  // Registers the index synchronously (writers start maintaining it) and
  // backfills existing vertices at low priority in the background.
  uint64_t build_index(const std::string& g, const std::string& t,
                       const std::string& field) {
    graph_.declare_index(g, t, field);
    uint64_t id = 0;
    retry(pick(), [&](Transaction& tx) {
      Record args;
      args.set("graph", Value::of_string(g));
      args.set("type", Value::of_string(t));
      args.set("field", Value::of_string(field));
      id = enqueue_task(tx, TaskKind::BUILD_INDEX, std::move(args), kPriorityLow);
    });
    return id;
  }

  // Drops a secondary index: writers stop maintaining it immediately, the
  // tree itself dies in the background.
  uint64_t drop_index(const std::string& g, const std::string& t,
                      const std::string& field) {
    uint64_t id = 0;
    retry(pick(), [&](Transaction& tx) {
      CatalogEntry vt = catalog_.require_active(tx, GraphEngine::vtype_name(g, t));
      auto& idx = vt.schema.indexed;
      auto it = std::find(idx.begin(), idx.end(), field);
      if (it == idx.end()) fail(Err::NOT_FOUND, "'" + field + "' is not indexed");
      idx.erase(it);
      catalog_.update_schema(tx, vt.name, vt.schema);
      catalog_.mark_deleting(tx, GraphEngine::index_name(g, t, field));
      Record args;
      args.set("graph", Value::of_string(g));
      args.set("type", Value::of_string(t));
      args.set("field", Value::of_string(field));
      id = enqueue_task(tx, TaskKind::DELETE_INDEX, std::move(args));
    });
    return id;
  }

  uint64_t enqueue_sweep(Record args = {}) {
    uint64_t id = 0;
    retry(pick(), [&](Transaction& tx) {
      id = enqueue_task(tx, TaskKind::SWEEP_SEGMENT, std::move(args), kPriorityLow);
    });
    return id;
  }

  // --- running ---

  // One worker pump: claim the first runnable task and run one batch.
  // Returns nullopt when nothing is runnable. Throws CLAIM_LOST when a
  // rival worker beat us to the claim; callers just try again.
  std::optional<TaskReport> claim_and_run(NodeId worker) {
    store_.cluster().advance_tick(1);
    uint64_t now = store_.cluster().tick();

    std::optional<Task> claimed;
    {
      auto tx = store_.begin(worker, false);
      claimed = find_runnable(*tx, now);
      if (!claimed) {
        tx->abort();
        return std::nullopt;
      }
      Task lease_row = *claimed;
      lease_row.state = TaskState::RUNNING;
      lease_row.lease_expiry = now + kLeaseTicks;
      queue_tree().put(*tx, lease_row.queue_key(), lease_row.encode());
      if (!tx->commit().committed())
        fail(Err::CLAIM_LOST, "task " + std::to_string(claimed->task_id) +
                                  " was claimed by another worker");
    }
    // The batch sees the pre-claim state: the fan-out parent distinguishes
    // its first run from its wakeup by WAITING_CHILDREN.
    return run_batch(worker, *claimed);
  }

  // Pumps workers round-robin across live nodes until no task is runnable.
  // Returns the number of successful pumps; tests use this to drive
  // workflows to completion deterministically.
  struct DrainStats {
    uint64_t pumps = 0;
    uint64_t claim_losses = 0;
  };
  DrainStats run_until_idle(uint64_t max_pumps = 100000) {
    DrainStats stats;
    auto live = store_.cluster().live_nodes();
    if (live.empty()) fail(Err::STORE_PAUSED, "no live node can run tasks");
    size_t rr = 0;
    while (stats.pumps < max_pumps) {
      NodeId worker = live[rr++ % live.size()];
      try {
        if (!claim_and_run(worker)) break;
        stats.pumps++;
      } catch (const A1Error& e) {
        if (e.code() != Err::CLAIM_LOST) throw;
        stats.claim_losses++;
      }
    }
    return stats;
  }

  // --- inspection ---

  std::vector<Task> list_tasks() {
    auto tx = store_.begin(0, true);
    std::vector<Task> out;
    for (auto& [k, v] : queue_tree().range(*tx, {}, {})) out.push_back(Task::decode(v));
    tx->commit();
    return out;
  }

  size_t pending_count() { return list_tasks().size(); }

 private:
  Store& store_;
  Catalog& catalog_;
  GraphEngine& graph_;
  FatRef queue_anchor_;
  FatRef ids_ref_;
  SweepHandler sweep_;

  BTree queue_tree() { return BTree(store_, queue_anchor_); }

  void attach() {
    retry(pick(), [&](Transaction& tx) {
      auto q = catalog_.lookup(tx, kQueueName);
      if (!q) {
        FatRef anchor = BTree::create(tx);
        ObjBuf& ids = tx.alloc(64);
        q = catalog_.create(tx, kQueueName, EntryKind::QUEUE, anchor);
        catalog_.create(tx, kIdsName, EntryKind::QUEUE,
                        FatRef{ids.addr(), 64});
        queue_anchor_ = anchor;
        ids_ref_ = FatRef{ids.addr(), 64};
        return;
      }
      queue_anchor_ = q->root;
      ids_ref_ = catalog_.lookup(tx, kIdsName)->root;
    });
  }

  uint64_t next_task_id(Transaction& tx) {
    ObjBuf counter = tx.read(ids_ref_.addr, ids_ref_.size);
    ByteReader r(counter.bytes());
    uint64_t id = r.u64() + 1;
    ObjBuf& w = tx.open_for_write(counter);
    Bytes enc;
    put_u64_be(enc, id);
    std::memcpy(w.data(), enc.data(), enc.size());
    return id;
  }

  // First task in key order that a worker may take: PENDING with no unmet
  // requirements, an expired RUNNING lease, or a parent whose children all
  // finished.
  std::optional<Task> find_runnable(Transaction& tx, uint64_t now) {
    for (auto& [k, v] : queue_tree().range(tx, {}, {})) {
      Task t = Task::decode(v);
      switch (t.state) {
        case TaskState::PENDING:
          return t;
        case TaskState::RUNNING:
          if (t.lease_expiry <= now) return t;
          break;
        case TaskState::WAITING_CHILDREN:
          if (t.pending_children == 0) return t;
          break;
        case TaskState::DONE:
          break;  // parked until the parent sweeps it up
      }
    }
    return std::nullopt;
  }

  TaskReport run_batch(NodeId worker, Task task) {
    TaskReport report;
    report.task_id = task.task_id;
    report.kind = task.kind;
    switch (task.kind) {
      case TaskKind::DELETE_GRAPH: return run_delete_graph(worker, task);
      case TaskKind::DELETE_TYPE: return run_delete_type(worker, task);
      case TaskKind::DELETE_INDEX: return run_delete_index(worker, task);
      case TaskKind::BUILD_INDEX: return run_build_index(worker, task);
      case TaskKind::SWEEP_SEGMENT: return run_sweep(worker, task);
    }
    fail(Err::INTERNAL, "unknown task kind");
  }

  // Fan-out step: mark every type DELETING, spawn one DELETE_TYPE child
  // per vertex type, park until they finish. The finalize step (taken when
  // pending_children drains to zero) removes what the children left:
  // edge-type entries, the edge tree, the graph entry, and the DONE rows.
  TaskReport run_delete_graph(NodeId worker, Task task) {
    TaskReport report{task.task_id, task.kind};
    const std::string g = task.arg("graph");

    if (task.state == TaskState::WAITING_CHILDREN && task.pending_children == 0) {
      retry(worker, [&](Transaction& tx) {
        report = TaskReport{task.task_id, task.kind};
        if (!row_alive(tx, task)) {
          report.finished = true;
          return;
        }
        BTree queue = queue_tree();
        for (auto& [k, v] : queue.range(tx, {}, {})) {
          Task child = Task::decode(v);
          if (child.parent == task.task_id && child.state == TaskState::DONE)
            queue.erase(tx, child.queue_key());
        }
        for (auto& e : catalog_.list_prefix(tx, "default/" + g + "/edge/")) {
          catalog_.remove(tx, e.name);
          report.items++;
        }
        if (auto et = catalog_.lookup(tx, GraphEngine::edge_tree_name(g))) {
          BTree(store_, et->root).destroy(tx);
          catalog_.mark_deleting(tx, et->name);
          catalog_.remove(tx, et->name);
        }
        catalog_.remove(tx, GraphEngine::graph_name(g));
        queue.erase(tx, task.queue_key());
      });
      report.finished = true;
      return report;
    }

    retry(worker, [&](Transaction& tx) {
      report = TaskReport{task.task_id, task.kind};
      auto row = current_row(tx, task);
      if (!row) {
        report.finished = true;
        return;
      }
      if (row->state == TaskState::WAITING_CHILDREN) {
        // A rival incarnation (ours expired, theirs took over) fanned out
        // already; spawning a second wave of children would skew the count.
        report.waiting = true;
        return;
      }
      Task t = task;
      t.pending_children = 0;
      for (auto& e : catalog_.list_prefix(tx, "default/" + g + "/edge/"))
        if (e.active()) catalog_.mark_deleting(tx, e.name);
      for (auto& vt : catalog_.list_prefix(tx, "default/" + g + "/vertex/")) {
        if (vt.active()) catalog_.mark_deleting(tx, vt.name);
        Record args;
        args.set("graph", Value::of_string(g));
        args.set("type", Value::of_string(GraphEngine::short_name(vt.name)));
        enqueue_task(tx, TaskKind::DELETE_TYPE, std::move(args), task.priority,
                     task.task_id);
        t.pending_children++;
        report.items++;
      }
      t.state = TaskState::WAITING_CHILDREN;
      queue_tree().put(tx, t.queue_key(), t.encode());
    });
    report.waiting = true;
    return report;
  }

  // One batch of vertex deletions driven by a pk-index cursor saved in the
  // task row. Re-running a batch after a lease expiry is harmless: deleted
  // vertices are gone from the index, so the scan simply moves on.
  TaskReport run_delete_type(NodeId worker, Task task) {
    TaskReport report{task.task_id, task.kind};
    const std::string g = task.arg("graph");
    const std::string t = task.arg("type");

    retry(worker, [&](Transaction& tx) {
      report = TaskReport{task.task_id, task.kind};
      if (!row_alive(tx, task)) {
        report.finished = true;
        return;
      }
      auto pk_entry = catalog_.lookup(tx, GraphEngine::pk_index_name(g, t));
      if (!pk_entry) {  // a previous incarnation already finalized
        finish_task(tx, task);
        report.finished = true;
        return;
      }
      BTree pk_index(store_, pk_entry->root);
      Bytes cursor = to_bytes(task.arg("cursor"));
      auto batch = pk_index.range(tx, cursor, {}, kTaskBatchSize);

      for (auto& entry : batch) {
        ByteReader kr(entry.key);
        graph_.delete_vertex_in_tx(tx, g, t, key_read_str(kr));
        report.items++;
      }

      if (batch.size() < kTaskBatchSize) {
        // Index drained: drop the trees and catalog rows, then report to
        // the parent (or vanish if standalone).
        CatalogEntry vt = catalog_.lookup(tx, GraphEngine::vtype_name(g, t)).value();
        pk_index.destroy(tx);
        catalog_.mark_deleting(tx, pk_entry->name);
        catalog_.remove(tx, pk_entry->name);
        for (const auto& field : vt.schema.indexed)
          if (auto ie = catalog_.lookup(tx, GraphEngine::index_name(g, t, field))) {
            BTree(store_, ie->root).destroy(tx);
            if (ie->active()) catalog_.mark_deleting(tx, ie->name);
            catalog_.remove(tx, ie->name);
          }
        catalog_.remove(tx, vt.name);
        finish_task(tx, task);
        report.finished = true;
        return;
      }

      // More remains: save the cursor and requeue.
      Task t2 = task;
      Bytes next = batch.back().key;
      next.push_back(0);  // byte-order successor
      t2.args.set("cursor", Value::of_string(to_string(next)));
      t2.state = TaskState::PENDING;
      t2.lease_expiry = 0;
      queue_tree().put(tx, t2.queue_key(), t2.encode());
      report.requeued = true;
    });
    return report;
  }

  TaskReport run_delete_index(NodeId worker, Task task) {
    TaskReport report{task.task_id, task.kind};
    const std::string g = task.arg("graph");
    const std::string t = task.arg("type");
    const std::string field = task.arg("field");
    retry(worker, [&](Transaction& tx) {
      if (auto ie = catalog_.lookup(tx, GraphEngine::index_name(g, t, field))) {
        BTree(store_, ie->root).destroy(tx);
        if (ie->active()) catalog_.mark_deleting(tx, ie->name);
        catalog_.remove(tx, ie->name);
        report.items = 1;
      }
      finish_task(tx, task);
    });
    report.finished = true;
    return report;
  }

  // Backfills one batch of existing vertices into a declared index. New
  // writes maintain the index themselves, and the upsert below makes the
  // overlap idempotent.
  TaskReport run_build_index(NodeId worker, Task task) {
    TaskReport report{task.task_id, task.kind};
    const std::string g = task.arg("graph");
    const std::string t = task.arg("type");
    const std::string field = task.arg("field");

    retry(worker, [&](Transaction& tx) {
      report = TaskReport{task.task_id, task.kind};
      if (!row_alive(tx, task)) {
        report.finished = true;
        return;
      }
      auto pk_entry = catalog_.lookup(tx, GraphEngine::pk_index_name(g, t));
      auto ie = catalog_.lookup(tx, GraphEngine::index_name(g, t, field));
      if (!pk_entry || !ie || !ie->active()) {  // dropped mid-build
        finish_task(tx, task);
        report.finished = true;
        return;
      }
      BTree pk_index(store_, pk_entry->root);
      BTree idx(store_, ie->root);
      Bytes cursor = to_bytes(task.arg("cursor"));
      auto batch = pk_index.range(tx, cursor, {}, kTaskBatchSize);

      for (auto& entry : batch) {
        ByteReader vr(entry.value);
        FatRef href = read_fatref(vr);
        Record rec = graph_.read_record_at(tx, href.addr);
        ByteReader kr(entry.key);
        std::string pk = key_read_str(kr);
        if (const Value* v = rec.find(field)) {
          Bytes ref_val;
          put_fatref(ref_val, href);
          idx.put(tx, GraphEngine::secondary_key(*v, pk), ref_val);
          report.items++;
        }
      }

      if (batch.size() < kTaskBatchSize) {
        finish_task(tx, task);
        report.finished = true;
        return;
      }
      Task t2 = task;
      Bytes next = batch.back().key;
      next.push_back(0);
      t2.args.set("cursor", Value::of_string(to_string(next)));
      t2.state = TaskState::PENDING;
      t2.lease_expiry = 0;
      queue_tree().put(tx, t2.queue_key(), t2.encode());
      report.requeued = true;
    });
    return report;
  }

  TaskReport run_sweep(NodeId worker, Task task) {
    TaskReport report{task.task_id, task.kind};
    if (!sweep_) {  // nothing registered: drop the task
      retry(worker, [&](Transaction& tx) { finish_task(tx, task); });
      report.finished = true;
      return report;
    }
    retry(worker, [&](Transaction& tx) {
      report = TaskReport{task.task_id, task.kind};
      if (!row_alive(tx, task)) {
        report.finished = true;
        return;
      }
      Task t2 = task;
      bool done = sweep_(tx, t2.args);
      if (done) {
        finish_task(tx, task);
        report.finished = true;
        return;
      }
      t2.state = TaskState::PENDING;
      t2.lease_expiry = 0;
      queue_tree().put(tx, t2.queue_key(), t2.encode());
      report.requeued = true;
    });
    return report;
  }

  // A worker that lost its lease may still be applying a batch while the
  // reclaimer finishes the task and erases the row. Putting anything back
  // would resurrect finished work, so every batch rechecks its row first.
  std::optional<Task> current_row(Transaction& tx, const Task& task) {
    auto raw = queue_tree().get(tx, task.queue_key());
    if (!raw) return std::nullopt;
    return Task::decode(*raw);
  }

  bool row_alive(Transaction& tx, const Task& task) {
    return current_row(tx, task).has_value();
  }

  // Terminal bookkeeping: orphan tasks vanish; children go DONE and ping
  // the parent's counter so it can wake up.
  void finish_task(Transaction& tx, const Task& task) {
    if (!row_alive(tx, task)) return;
    BTree queue = queue_tree();
    if (task.parent == 0) {
      queue.erase(tx, task.queue_key());
      return;
    }
    Task t2 = task;
    t2.state = TaskState::DONE;
    t2.lease_expiry = 0;
    queue.put(tx, t2.queue_key(), t2.encode());
    for (auto& [k, v] : queue.range(tx, {}, {})) {
      Task parent = Task::decode(v);
      if (parent.task_id != task.parent) continue;
      if (parent.pending_children > 0) parent.pending_children--;
      queue.put(tx, parent.queue_key(), parent.encode());
      return;
    }
    fail(Err::CORRUPT_TABLE, "child task " + std::to_string(task.task_id) +
                                 " has no parent row");
  }

  // Transaction wrapper with the same contract as the graph layer: retry
  // on conflict, propagate real errors.
  template <typename Fn>
  void retry(NodeId origin, Fn&& fn) {
    for (int attempt = 0; attempt < 256; attempt++) {
      auto tx = store_.begin(origin, false);
      fn(*tx);
      if (tx->commit().committed()) return;
    }
    fail(Err::INTERNAL, "task transaction kept conflicting");
  }

  NodeId pick() {
    auto live = store_.cluster().live_nodes();
    if (live.empty()) fail(Err::STORE_PAUSED, "no live nodes");
    return live[store_.cluster().rand_below(live.size())];
  }
};

}  // namespace a1
