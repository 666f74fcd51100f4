#pragma once
// Region-based transactional object store.
//
// Objects live in fixed-size regions replicated 3-way across nodes in
// distinct fault domains; all reads and writes run inside transactions
// with optimistic concurrency control. Read-write transactions are
// strictly serializable: reads are validated unchanged at commit, and the
// transaction takes effect atomically at its write timestamp. Read-only
// transactions read a pinned MVCC snapshot and never conflict.
//
// Version chains are kept logically, divorced from region bytes: region
// segments (one per replica, harness-owned) hold the latest committed
// image, while the per-object chain serves snapshot reads and is trimmed
// up to the oldest active snapshot.

#include <algorithm>
#include <array>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "a1/addr.hpp"
#include "a1/common.hpp"
#include "a1/metrics.hpp"
#include "a1/simnet.hpp"

namespace a1 {

enum class CommitStatus { COMMITTED, ABORTED_CONFLICT };

struct CommitResult {
  CommitStatus status = CommitStatus::ABORTED_CONFLICT;
  Timestamp write_ts = kNoTimestamp;
  bool committed() const { return status == CommitStatus::COMMITTED; }
};

// Placement hint for allocation. NEAR is advisory: if the hinted region is
// full the allocator falls back to the same node, then anywhere.
struct Hint {
  enum class Kind { LOCAL, NEAR };
  Kind kind = Kind::LOCAL;
  Addr addr;

  static Hint local() { return Hint{}; }
  static Hint near_addr(Addr a) { return Hint{Kind::NEAR, a}; }
};

// Snapshot copy of an object. Read buffers are immutable; writable buffers
// exist only inside a transaction's write set.
class ObjBuf {
 public:
  ObjBuf() = default;
  ObjBuf(Addr addr, Bytes bytes, Timestamp version, bool writable)
      : addr_(addr), bytes_(std::move(bytes)), version_(version), writable_(writable) {}

  Addr addr() const { return addr_; }
  Timestamp version() const { return version_; }
  bool writable() const { return writable_; }
  size_t size() const { return bytes_.size(); }

  const uint8_t* data() const { return bytes_.data(); }
  uint8_t* data() {
    if (!writable_) fail(Err::INTERNAL, "writing through a read buffer");
    return bytes_.data();
  }
  const Bytes& bytes() const { return bytes_; }
  Bytes& mutable_bytes() {
    if (!writable_) fail(Err::INTERNAL, "writing through a read buffer");
    return bytes_;
  }

 private:
  friend class Transaction;
  Addr addr_;
  Bytes bytes_;
  Timestamp version_ = kNoTimestamp;
  bool writable_ = false;
};

struct StoreConfig {
  uint32_t min_object_bytes = 64;
  uint32_t max_object_bytes = 1u << 20;
  uint32_t version_chain_bound = 32;
};

class Transaction;

class Store {
 public:
  Store(Cluster& cluster, StoreConfig config = {})
      : cluster_(cluster), config_(config) {
    config_.max_object_bytes =
        std::min(config_.max_object_bytes, cluster.config().region_size_bytes);
    cluster_.on_fault([this](NodeId n, FaultKind k) { handle_fault(n, k); });
  }

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  std::unique_ptr<Transaction> begin(NodeId origin, bool read_only);
  // Read-only transaction at a caller-chosen snapshot (query workers read
  // at the coordinator's timestamp). The snapshot must still be pinned
  // somewhere, which the coordinator's own transaction guarantees.
  std::unique_ptr<Transaction> begin_at(NodeId origin, Timestamp snapshot);

  Cluster& cluster() { return cluster_; }
  const StoreConfig& config() const { return config_; }

  bool paused() const {
    std::lock_guard lk(mu_);
    return paused_;
  }

  size_t region_count() const {
    std::lock_guard lk(mu_);
    return regions_.size();
  }

  // Latest timestamp at which every commit has fully installed.
  Timestamp stable_ts() const {
    std::lock_guard lk(oracle_mu_);
    return stable_;
  }

  // Maps an address to the node serving it. Local metadata, no reads.
  NodeId primary_of(Addr a) const {
    std::lock_guard lk(mu_);
    const Region* r = find_region(a.region_id);
    if (!r) fail(Err::INVALID_ADDR, "no such region");
    return r->members[r->primary_idx];
  }

  // Timestamp of the newest committed version visible at `snapshot`.
  // Metadata peek used for cache validation; does not count as a read.
  Timestamp object_version_at(Addr a, Timestamp snapshot) const {
    std::lock_guard lk(mu_);
    const Region* r = find_region(a.region_id);
    if (!r) fail(Err::INVALID_ADDR, "no such region");
    auto it = r->chains.find(a.offset);
    if (it == r->chains.end()) fail(Err::INVALID_ADDR, "no object at address");
    const Version* v = visible_version(it->second, snapshot);
    if (!v || v->freed) fail(Err::INVALID_ADDR, "object not visible at snapshot");
    return v->ts;
  }

  // --- introspection for tests, audits and recovery tooling ---

  struct ObjectRecord {
    Addr addr;
    uint32_t size;
  };

  std::vector<ObjectRecord> live_objects() const {
    std::lock_guard lk(mu_);
    std::vector<ObjectRecord> out;
    for (const auto& [rid, r] : regions_)
      for (const auto& [off, obj] : r->objects)
        if (obj.state == ObjectState::LIVE)
          out.push_back({Addr{rid, off}, obj.size});
    return out;
  }

  size_t live_object_count() const { return live_objects().size(); }

  std::vector<NodeId> region_members(uint32_t region_id) const {
    std::lock_guard lk(mu_);
    const Region* r = find_region(region_id);
    if (!r) fail(Err::INVALID_ADDR, "no such region");
    return {r->members.begin(), r->members.end()};
  }

  NodeId region_primary(uint32_t region_id) const {
    std::lock_guard lk(mu_);
    const Region* r = find_region(region_id);
    if (!r) fail(Err::INVALID_ADDR, "no such region");
    return r->members[r->primary_idx];
  }

  std::vector<uint32_t> region_ids() const {
    std::lock_guard lk(mu_);
    std::vector<uint32_t> out;
    for (const auto& [rid, r] : regions_) out.push_back(rid);
    return out;
  }

  // True when every replica that should be current holds identical bytes
  // over all live object extents.
  bool replicas_identical(uint32_t region_id) const {
    std::lock_guard lk(mu_);
    const Region* r = find_region(region_id);
    if (!r) fail(Err::INVALID_ADDR, "no such region");
    int base = -1;
    for (int i = 0; i < 3; i++)
      if (r->in_sync[i]) {
        base = i;
        break;
      }
    if (base < 0) return false;
    for (const auto& [off, obj] : r->objects) {
      if (obj.state != ObjectState::LIVE) continue;
      for (int i = 0; i < 3; i++) {
        if (!r->in_sync[i] || i == base) continue;
        if (std::memcmp(r->segments[base].data() + off, r->segments[i].data() + off,
                        obj.size) != 0)
          return false;
      }
    }
    return true;
  }

  size_t max_chain_length() const {
    std::lock_guard lk(mu_);
    size_t m = 0;
    for (const auto& [rid, r] : regions_)
      for (const auto& [off, chain] : r->chains) m = std::max(m, chain.size());
    return m;
  }

  // Trim version chains and reclaim freed slots up to the oldest active
  // snapshot. Commits do this incrementally for the chains they touch;
  // this is the full sweep used before audits.
  void run_gc() {
    Timestamp horizon = min_active_snapshot();
    std::lock_guard lk(mu_);
    for (auto& [rid, r] : regions_) {
      for (auto& [off, chain] : r->chains) trim_chain(chain, horizon);
      reclaim_locked(*r, horizon);
    }
  }

 private:
  friend class Transaction;

  struct Version {
    Timestamp ts;
    Bytes bytes;
    bool freed = false;
  };

  enum class ObjectState { RESERVED, LIVE, FREED };

  struct ObjectInfo {
    uint32_t size = 0;       // exact object length
    uint32_t slot_size = 0;  // size-class slot the object occupies
    ObjectState state = ObjectState::RESERVED;
    Timestamp free_ts = kNoTimestamp;
  };

  struct Region {
    uint32_t id = 0;
    uint32_t size = 0;
    std::array<NodeId, 3> members{};
    int primary_idx = 0;
    std::array<Bytes, 3> segments;
    std::array<bool, 3> in_sync{true, true, true};
    std::array<bool, 3> retained{true, true, true};
    uint32_t bump = 0;
    std::map<uint32_t, std::vector<uint32_t>> free_lists;  // slot size → offsets
    std::map<uint32_t, ObjectInfo> objects;                // offset → info
    std::unordered_map<uint32_t, std::vector<Version>> chains;

    bool node_is_member(NodeId n, int* idx = nullptr) const {
      for (int i = 0; i < 3; i++)
        if (members[i] == n) {
          if (idx) *idx = i;
          return true;
        }
      return false;
    }
  };

  static uint32_t slot_size_for(uint32_t size) {
    uint32_t s = 64;
    while (s < size) s <<= 1;
    return s;
  }

  static const Version* visible_version(const std::vector<Version>& chain, Timestamp at) {
    const Version* best = nullptr;
    for (const auto& v : chain) {
      if (v.ts <= at)
        best = &v;
      else
        break;  // chains are appended in timestamp order
    }
    return best;
  }

  static void trim_chain(std::vector<Version>& chain, Timestamp horizon) {
    // Keep the newest version at or below the horizon plus everything newer.
    size_t keep_from = 0;
    for (size_t i = 0; i < chain.size(); i++)
      if (chain[i].ts <= horizon) keep_from = i;
    if (keep_from > 0) chain.erase(chain.begin(), chain.begin() + keep_from);
  }

  Region* find_region(uint32_t id) {
    auto it = regions_.find(id);
    return it == regions_.end() ? nullptr : it->second.get();
  }
  const Region* find_region(uint32_t id) const {
    auto it = regions_.find(id);
    return it == regions_.end() ? nullptr : it->second.get();
  }

  // --- timestamp oracle + snapshot pins (single global clock at the CM) ---

  Timestamp acquire_read_ts_and_pin() {
    std::lock_guard lk(oracle_mu_);
    Timestamp ts = stable_;
    pins_.insert(ts);
    return ts;
  }

  void pin_snapshot(Timestamp ts) {
    std::lock_guard lk(oracle_mu_);
    pins_.insert(ts);
  }

  void unpin_snapshot(Timestamp ts) {
    {
      std::lock_guard lk(oracle_mu_);
      auto it = pins_.find(ts);
      if (it != pins_.end()) pins_.erase(it);
    }
    backpressure_cv_.notify_all();
  }

  Timestamp begin_commit_ts() {
    std::lock_guard lk(oracle_mu_);
    Timestamp ts = next_ts_++;
    in_flight_.insert(ts);
    return ts;
  }

  void end_commit_ts(Timestamp ts) {
    std::lock_guard lk(oracle_mu_);
    in_flight_.erase(ts);
    stable_ = in_flight_.empty() ? next_ts_ - 1 : *in_flight_.begin() - 1;
  }

  Timestamp min_active_snapshot() const {
    std::lock_guard lk(oracle_mu_);
    return pins_.empty() ? stable_ : *pins_.begin();
  }

  // Horizon for backpressure: the committer's own snapshot is released the
  // moment its commit finishes, so it must not count against itself.
  Timestamp min_active_excluding(Timestamp own) const {
    std::lock_guard lk(oracle_mu_);
    if (pins_.empty()) return stable_;
    auto it = pins_.begin();
    if (*it != own) return *it;
    ++it;  // skip exactly one instance; duplicates stay counted
    return it == pins_.end() ? stable_ : *it;
  }

  // --- allocation ---

  struct Reservation {
    Addr addr;
    uint32_t size;
    uint32_t slot_size;
  };

  Reservation reserve(NodeId origin, uint32_t size, const Hint& hint) {
    if (size < config_.min_object_bytes || size > config_.max_object_bytes)
      fail(Err::BAD_SIZE, "object size " + std::to_string(size) + " out of range");
    // A region just above the object's size class still has to hold it.
    uint32_t slot = std::min(slot_size_for(size), cluster_.config().region_size_bytes);
    std::lock_guard lk(mu_);

    if (hint.kind == Hint::Kind::NEAR) {
      Region* near = find_region(hint.addr.region_id);
      if (near) {
        if (auto off = try_reserve_in(*near, slot)) return {Addr{near->id, *off}, size, slot};
        // Hinted region full: fall back to the same node.
        NodeId owner = near->members[near->primary_idx];
        if (auto res = reserve_on_node(owner, size, slot)) return *res;
      }
    }
    if (auto res = reserve_on_node(origin, size, slot)) return *res;
    // Origin unusable (dead node): place anywhere live.
    for (NodeId n : cluster_.live_nodes())
      if (auto res = reserve_on_node(n, size, slot)) return *res;
    fail(Err::OUT_OF_SPACE, "no placement available");
  }

  std::optional<Reservation> reserve_on_node(NodeId node, uint32_t size, uint32_t slot) {
    if (node >= cluster_.node_count() || !cluster_.node(node).alive()) return std::nullopt;
    for (auto& [rid, r] : regions_) {
      if (r->members[r->primary_idx] != node) continue;
      if (auto off = try_reserve_in(*r, slot)) return Reservation{Addr{rid, *off}, size, slot};
    }
    Region* fresh = create_region(node);
    if (!fresh) return std::nullopt;
    auto off = try_reserve_in(*fresh, slot);
    if (!off) return std::nullopt;  // object larger than a region
    return Reservation{Addr{fresh->id, *off}, size, slot};
  }

  std::optional<uint32_t> try_reserve_in(Region& r, uint32_t slot) {
    reclaim_locked(r, min_active_snapshot());
    auto fl = r.free_lists.find(slot);
    if (fl != r.free_lists.end() && !fl->second.empty()) {
      uint32_t off = fl->second.back();
      fl->second.pop_back();
      r.objects[off] = ObjectInfo{0, slot, ObjectState::RESERVED, kNoTimestamp};
      return off;
    }
    if (r.bump + slot > r.size) return std::nullopt;
    uint32_t off = r.bump;
    r.bump += slot;
    r.objects[off] = ObjectInfo{0, slot, ObjectState::RESERVED, kNoTimestamp};
    return off;
  }

  void release_reservation(Addr a) {
    std::lock_guard lk(mu_);
    Region* r = find_region(a.region_id);
    if (!r) return;
    auto it = r->objects.find(a.offset);
    if (it == r->objects.end() || it->second.state != ObjectState::RESERVED) return;
    r->free_lists[it->second.slot_size].push_back(a.offset);
    r->objects.erase(it);
  }

  // Replicas must land in three distinct fault domains; the primary's
  // domain is fixed by the hint, backups drawn randomly from the rest.
  Region* create_region(NodeId primary) {
    auto& cfg = cluster_.config();
    uint32_t pd = cluster_.node(primary).fault_domain();
    std::array<NodeId, 3> members{primary, kNoNode, kNoNode};
    std::vector<uint32_t> used_domains{pd};
    for (int slot = 1; slot < 3; slot++) {
      std::vector<NodeId> candidates;
      for (NodeId n : cluster_.live_nodes()) {
        uint32_t d = cluster_.node(n).fault_domain();
        if (std::find(used_domains.begin(), used_domains.end(), d) != used_domains.end())
          continue;
        candidates.push_back(n);
      }
      if (candidates.empty()) return nullptr;
      NodeId pick = candidates[cluster_.rand_below(candidates.size())];
      members[slot] = pick;
      used_domains.push_back(cluster_.node(pick).fault_domain());
    }
    auto r = std::make_unique<Region>();
    r->id = next_region_id_++;
    r->size = cfg.region_size_bytes;
    r->members = members;
    r->primary_idx = 0;
    for (auto& seg : r->segments) seg.assign(r->size, 0);
    Region* out = r.get();
    regions_[r->id] = std::move(r);
    return out;
  }

  void reclaim_locked(Region& r, Timestamp horizon) {
    for (auto it = r.objects.begin(); it != r.objects.end();) {
      if (it->second.state == ObjectState::FREED && it->second.free_ts <= horizon) {
        r.chains.erase(it->first);
        r.free_lists[it->second.slot_size].push_back(it->first);
        it = r.objects.erase(it);
      } else {
        ++it;
      }
    }
  }

  // --- read/validate/install, called by Transaction ---

  struct ReadResult {
    Bytes bytes;
    Timestamp version;
    bool local;
  };

  ReadResult read_at(Addr a, Timestamp snapshot, NodeId origin) {
    std::lock_guard lk(mu_);
    Region* r = find_region(a.region_id);
    if (!r) fail(Err::INVALID_ADDR, "no such region");
    if (live_member_count(*r) == 0) fail(Err::STORE_PAUSED, "region lost all live replicas");
    auto it = r->chains.find(a.offset);
    if (it == r->chains.end()) fail(Err::INVALID_ADDR, "no object at address");
    const Version* v = visible_version(it->second, snapshot);
    if (!v) fail(Err::INVALID_ADDR, "object not yet visible at snapshot");
    if (v->freed) fail(Err::INVALID_ADDR, "object freed at snapshot");
    return {v->bytes, v->ts, r->members[r->primary_idx] == origin};
  }

  // Latest committed version (freed objects and missing chains report as
  // changed, which is what validation wants).
  std::optional<Timestamp> latest_version(Addr a) const {
    std::lock_guard lk(mu_);
    const Region* r = find_region(a.region_id);
    if (!r) return std::nullopt;
    auto it = r->chains.find(a.offset);
    if (it == r->chains.end() || it->second.empty()) return std::nullopt;
    const Version& v = it->second.back();
    if (v.freed) return std::nullopt;
    return v.ts;
  }

  bool chain_has_room(Addr a, Timestamp horizon) const {
    std::lock_guard lk(mu_);
    const Region* r = find_region(a.region_id);
    if (!r) return true;
    auto it = r->chains.find(a.offset);
    if (it == r->chains.end()) return true;
    auto chain = it->second;  // copy; trim is cheap at bound size
    trim_chain(chain, horizon);
    return chain.size() < config_.version_chain_bound;
  }

  void install_write(Addr a, const Bytes& bytes, Timestamp ts, bool is_alloc, uint32_t size) {
    std::lock_guard lk(mu_);
    Region* r = find_region(a.region_id);
    if (!r) return;  // region lost to power failure mid-commit; data is gone
    if (is_alloc) {
      auto obj = r->objects.find(a.offset);
      if (obj == r->objects.end()) return;
      obj->second.size = size;
      obj->second.state = ObjectState::LIVE;
    }
    auto& chain = r->chains[a.offset];
    chain.push_back(Version{ts, bytes, false});
    trim_chain(chain, min_active_snapshot());
    for (int i = 0; i < 3; i++) {
      NodeId n = r->members[i];
      if (cluster_.node(n).alive() && r->in_sync[i])
        std::memcpy(r->segments[i].data() + a.offset, bytes.data(), bytes.size());
      else
        r->in_sync[i] = false;
    }
  }

  void install_free(Addr a, Timestamp ts) {
    std::lock_guard lk(mu_);
    Region* r = find_region(a.region_id);
    if (!r) return;
    auto obj = r->objects.find(a.offset);
    if (obj == r->objects.end()) return;
    obj->second.state = ObjectState::FREED;
    obj->second.free_ts = ts;
    auto& chain = r->chains[a.offset];
    chain.push_back(Version{ts, {}, true});
    trim_chain(chain, min_active_snapshot());
  }

  // --- fault plumbing ---

  int live_member_count(const Region& r) const {
    int n = 0;
    for (int i = 0; i < 3; i++)
      if (cluster_.node(r.members[i]).alive() && r.in_sync[i]) n++;
    return n;
  }

  void handle_fault(NodeId node, FaultKind kind) {
    std::unique_lock lk(mu_);
    switch (kind) {
      case FaultKind::PROCESS_CRASH:
        repoint_primaries_locked();
        break;
      case FaultKind::POWER_LOSS: {
        for (auto it = regions_.begin(); it != regions_.end();) {
          Region& r = *it->second;
          int idx;
          if (r.node_is_member(node, &idx)) {
            r.retained[idx] = false;
            r.in_sync[idx] = false;
            r.segments[idx].assign(r.segments[idx].size(), 0);
          }
          bool any_retained = r.retained[0] || r.retained[1] || r.retained[2];
          if (!any_retained) {
            it = regions_.erase(it);  // all copies gone, the region is lost
            continue;
          }
          ++it;
        }
        repoint_primaries_locked();
        break;
      }
      case FaultKind::RESTART: {
        for (auto& [rid, r] : regions_) {
          int idx;
          if (!r->node_is_member(node, &idx)) continue;
          if (r->in_sync[idx] && r->retained[idx]) continue;  // fast restart: bytes still good
          int src = -1;
          for (int i = 0; i < 3; i++)
            if (i != idx && r->in_sync[i] && cluster_.node(r->members[i]).alive()) {
              src = i;
              break;
            }
          if (src >= 0) {
            r->segments[idx] = r->segments[src];
            r->in_sync[idx] = true;
            r->retained[idx] = true;
          }
        }
        repoint_primaries_locked();
        break;
      }
      case FaultKind::PARTITION:
        break;  // RPC-level only; the store keeps serving
    }
    bool still_paused = false;
    for (auto& [rid, r] : regions_)
      if (live_member_count(*r) == 0) still_paused = true;
    paused_ = still_paused;
    lk.unlock();
    backpressure_cv_.notify_all();
  }

  void repoint_primaries_locked() {
    for (auto& [rid, r] : regions_) {
      NodeId p = r->members[r->primary_idx];
      if (cluster_.node(p).alive() && r->in_sync[r->primary_idx]) continue;
      for (int i = 0; i < 3; i++)
        if (cluster_.node(r->members[i]).alive() && r->in_sync[i]) {
          r->primary_idx = i;
          break;
        }
    }
  }

  Cluster& cluster_;
  StoreConfig config_;

  mutable std::mutex mu_;  // regions, allocator, chains, pause flag
  std::map<uint32_t, std::unique_ptr<Region>> regions_;
  uint32_t next_region_id_ = 0;
  bool paused_ = false;

  mutable std::mutex oracle_mu_;
  Timestamp next_ts_ = 1;
  Timestamp stable_ = 0;
  std::set<Timestamp> in_flight_;
  std::multiset<Timestamp> pins_;

  std::mutex lock_table_mu_;
  std::unordered_map<uint64_t, std::shared_ptr<std::mutex>> lock_table_;
  std::condition_variable_any backpressure_cv_;
  std::mutex backpressure_mu_;

  std::shared_ptr<std::mutex> write_lock_for(Addr a) {
    std::lock_guard lk(lock_table_mu_);
    auto& slot = lock_table_[a.packed()];
    if (!slot) slot = std::make_shared<std::mutex>();
    return slot;
  }
};

enum class TxnState { ACTIVE, COMMITTED, ABORTED };

// Single-driver transaction context. May be handed between threads but
// must not be used concurrently. Destruction aborts if still active.
class Transaction {
 public:
  Transaction(Store& store, NodeId origin, bool read_only, Timestamp read_ts)
      : store_(store), origin_(origin), read_only_(read_only), read_ts_(read_ts) {}

  ~Transaction() {
    if (state_ == TxnState::ACTIVE) abort();
  }

  Transaction(const Transaction&) = delete;
  Transaction& operator=(const Transaction&) = delete;

  Timestamp read_ts() const { return read_ts_; }
  bool read_only() const { return read_only_; }
  TxnState state() const { return state_; }
  NodeId origin() const { return origin_; }

  void set_read_stats(ReadStats* stats) { read_stats_ = stats; }

  ObjBuf& alloc(uint32_t size, Hint hint = Hint::local()) {
    require_active();
    require_writable();
    auto res = store_.reserve(origin_, size, hint);
    auto& p = write_set_[res.addr];
    p.kind = Pending::Kind::ALLOC;
    p.obj_size = res.size;
    p.buf = std::make_unique<ObjBuf>(res.addr, Bytes(res.size, 0), kNoTimestamp, true);
    return *p.buf;
  }

  ObjBuf read(Addr addr, uint32_t size = 0) {
    require_active();
    auto it = write_set_.find(addr);
    if (it != write_set_.end()) {
      const Pending& p = it->second;
      if (p.kind == Pending::Kind::FREE) fail(Err::INVALID_ADDR, "freed in this transaction");
      check_size(size, uint32_t(p.buf->size()));
      return ObjBuf(addr, p.buf->bytes(), p.buf->version(), false);
    }
    auto res = store_.read_at(addr, read_ts_, origin_);
    check_size(size, uint32_t(res.bytes.size()));
    store_.cluster().metrics().count_read(res.local);
    if (read_stats_) read_stats_->count(res.local);
    read_set_.emplace(addr, res.version);
    return ObjBuf(addr, std::move(res.bytes), res.version, false);
  }

  ObjBuf& open_for_write(const ObjBuf& buf) {
    require_active();
    require_writable();
    auto it = write_set_.find(buf.addr());
    if (it != write_set_.end()) {
      if (it->second.kind == Pending::Kind::FREE)
        fail(Err::INVALID_ADDR, "freed in this transaction");
      return *it->second.buf;  // idempotent open
    }
    auto& p = write_set_[buf.addr()];
    p.kind = Pending::Kind::WRITE;
    p.obj_size = uint32_t(buf.size());
    p.buf = std::make_unique<ObjBuf>(buf.addr(), buf.bytes(), buf.version(), true);
    read_set_.emplace(buf.addr(), buf.version());
    return *p.buf;
  }

  void free_obj(const ObjBuf& buf) { free_addr(buf.addr(), buf.version()); }

  void free_addr(Addr addr, Timestamp known_version = kNoTimestamp) {
    require_active();
    require_writable();
    auto it = write_set_.find(addr);
    if (it != write_set_.end()) {
      if (it->second.kind == Pending::Kind::ALLOC) {
        store_.release_reservation(addr);
        write_set_.erase(it);  // free of own alloc cancels it
        return;
      }
      it->second.kind = Pending::Kind::FREE;  // double free is idempotent
      it->second.buf.reset();
      return;
    }
    Timestamp v = known_version;
    if (v == kNoTimestamp) v = read(addr).version();
    auto& p = write_set_[addr];
    p.kind = Pending::Kind::FREE;
    read_set_.emplace(addr, v);
  }

  // Arrange for the commit timestamp to be written big-endian into this
  // pending object at `byte_offset` during install (replication log
  // entries carry the timestamp of the transaction that produced them).
  void patch_commit_ts(Addr addr, size_t byte_offset) {
    require_active();
    auto it = write_set_.find(addr);
    if (it == write_set_.end() || !it->second.buf)
      fail(Err::INTERNAL, "patch target is not a pending write");
    it->second.ts_patches.push_back(byte_offset);
  }

  // Extra predicate validated during commit, under the same write locks as
  // read-set validation; failure aborts with ABORTED_CONFLICT.
  void add_commit_check(std::function<bool()> check) {
    commit_checks_.push_back(std::move(check));
  }

  // Runs after a successful commit, outside commit locks.
  void on_commit(std::function<void(Timestamp)> hook) {
    commit_hooks_.push_back(std::move(hook));
  }

  CommitResult commit() {
    require_active();
    if (read_only_ || write_set_.empty()) {
      finish(TxnState::COMMITTED);
      return {CommitStatus::COMMITTED, kNoTimestamp};
    }

    for (;;) {
      if (store_.paused()) fail(Err::STORE_PAUSED, "transactions halted");

      std::vector<std::pair<Addr, std::shared_ptr<std::mutex>>> locks;
      locks.reserve(write_set_.size());
      for (const auto& [addr, p] : write_set_) locks.emplace_back(addr, store_.write_lock_for(addr));
      // write_set_ is an ordered map, so this acquires in canonical order
      for (auto& [addr, m] : locks) m->lock();
      auto unlock_all = [&] {
        for (auto it = locks.rbegin(); it != locks.rend(); ++it) it->second->unlock();
      };

      bool valid = true;
      for (const auto& [addr, version] : read_set_) {
        auto latest = store_.latest_version(addr);
        if (!latest || *latest != version) {
          valid = false;
          break;
        }
      }
      if (valid)
        for (const auto& check : commit_checks_)
          if (!check()) {
            valid = false;
            break;
          }
      if (!valid) {
        unlock_all();
        store_.cluster().metrics().count_abort();
        finish(TxnState::ABORTED);
        return {CommitStatus::ABORTED_CONFLICT, kNoTimestamp};
      }

      // Version-chain backpressure: wait for old snapshots rather than
      // growing a chain past its bound.
      Timestamp horizon = store_.min_active_excluding(read_ts_);
      bool room = true;
      for (const auto& [addr, p] : write_set_)
        if (p.kind != Pending::Kind::ALLOC && !store_.chain_has_room(addr, horizon)) {
          room = false;
          break;
        }
      if (!room) {
        unlock_all();
        std::unique_lock bp(store_.backpressure_mu_);
        store_.backpressure_cv_.wait_for(bp, std::chrono::milliseconds(1));
        continue;  // revalidate from scratch
      }

      Timestamp ts = store_.begin_commit_ts();
      for (auto& [addr, p] : write_set_) {
        switch (p.kind) {
          case Pending::Kind::ALLOC:
          case Pending::Kind::WRITE: {
            for (size_t off : p.ts_patches) {
              Bytes& b = p.buf->mutable_bytes();
              if (off + 8 > b.size()) fail(Err::INTERNAL, "timestamp patch out of range");
              for (int i = 0; i < 8; i++) b[off + i] = uint8_t(ts >> (8 * (7 - i)));
            }
            store_.install_write(addr, p.buf->bytes(), ts,
                                 p.kind == Pending::Kind::ALLOC, p.obj_size);
            break;
          }
          case Pending::Kind::FREE:
            store_.install_free(addr, ts);
            break;
        }
      }
      store_.end_commit_ts(ts);
      unlock_all();
      store_.cluster().metrics().count_commit();
      finish(TxnState::COMMITTED);
      for (auto& hook : commit_hooks_) hook(ts);
      return {CommitStatus::COMMITTED, ts};
    }
  }

  void abort() {
    if (state_ != TxnState::ACTIVE) return;
    for (const auto& [addr, p] : write_set_)
      if (p.kind == Pending::Kind::ALLOC) store_.release_reservation(addr);
    finish(TxnState::ABORTED);
  }

 private:
  struct Pending {
    enum class Kind { WRITE, ALLOC, FREE };
    Kind kind = Kind::WRITE;
    uint32_t obj_size = 0;
    std::unique_ptr<ObjBuf> buf;
    std::vector<size_t> ts_patches;
  };

  void require_active() const {
    if (state_ != TxnState::ACTIVE) fail(Err::INTERNAL, "transaction is not active");
  }
  void require_writable() const {
    if (read_only_) fail(Err::INTERNAL, "read-only transaction cannot write");
  }
  static void check_size(uint32_t requested, uint32_t actual) {
    if (requested != 0 && requested > actual)
      fail(Err::BAD_SIZE, "read size exceeds object size");
  }

  void finish(TxnState s) {
    state_ = s;
    store_.unpin_snapshot(read_ts_);
  }

  Store& store_;
  NodeId origin_;
  bool read_only_;
  Timestamp read_ts_;
  TxnState state_ = TxnState::ACTIVE;
  std::map<Addr, Pending> write_set_;
  std::map<Addr, Timestamp> read_set_;
  std::vector<std::function<bool()>> commit_checks_;
  std::vector<std::function<void(Timestamp)>> commit_hooks_;
  ReadStats* read_stats_ = nullptr;
};

inline std::unique_ptr<Transaction> Store::begin(NodeId origin, bool read_only) {
  if (paused()) fail(Err::STORE_PAUSED, "transactions halted");
  Timestamp ts = acquire_read_ts_and_pin();
  return std::make_unique<Transaction>(*this, origin, read_only, ts);
}

inline std::unique_ptr<Transaction> Store::begin_at(NodeId origin, Timestamp snapshot) {
  if (paused()) fail(Err::STORE_PAUSED, "transactions halted");
  pin_snapshot(snapshot);
  return std::make_unique<Transaction>(*this, origin, true, snapshot);
}

}  // namespace a1
