#pragma once
// Catalog of named roots.
//
// Every long-lived structure (graph, vertex/edge type, index, tree, task
// queue, replication log) registers here under a path-style name, e.g.
// "default/films/vertex/actor". Entries live in a B-tree whose anchor is
// recorded in a directory object at a well-known address, so a process
// can find everything from nothing but the store.
//
// Each proxy (node) keeps a read cache with a logical-tick TTL. Cached
// resolution costs no reads and may be stale up to the TTL; mutation
// paths resolve uncached through their transaction, which puts the
// catalog entry in the read set and lets optimistic validation abort
// transactions built on a stale view.

#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "a1/btree.hpp"
#include "a1/record.hpp"
#include "a1/store.hpp"

namespace a1 {

inline constexpr uint64_t kCatalogTtlTicks = 1000;
inline constexpr Addr kDirectoryAddr{0, 0};
inline constexpr uint32_t kDirectorySize = 64;
inline constexpr uint32_t kDirectoryMagic = 0xA1C47106;

enum class EntryState : uint8_t { ACTIVE = 1, DELETING = 2 };
enum class EntryKind : uint8_t {
  GRAPH = 1,
  VERTEX_TYPE = 2,
  EDGE_TYPE = 3,
  INDEX = 4,
  TREE = 5,
  QUEUE = 6,
  LOG = 7,
};

struct CatalogEntry {
  std::string name;
  EntryState state = EntryState::ACTIVE;
  EntryKind kind = EntryKind::TREE;
  uint32_t type_id = 0;
  uint64_t version = 0;  // bumped on every entry rewrite
  FatRef root;
  Schema schema;          // vertex and edge types
  std::string src_type;   // edge types
  std::string dst_type;

  bool active() const { return state == EntryState::ACTIVE; }

  Bytes encode() const {
    Bytes out;
    out.push_back(uint8_t(state));
    out.push_back(uint8_t(kind));
    put_u32_be(out, type_id);
    put_u64_be(out, version);
    put_fatref(out, root);
    Bytes extra;
    if (kind == EntryKind::VERTEX_TYPE || kind == EntryKind::EDGE_TYPE) {
      extra = schema.encode();
      if (kind == EntryKind::EDGE_TYPE) {
        put_u16_be(extra, uint16_t(src_type.size()));
        extra.insert(extra.end(), src_type.begin(), src_type.end());
        put_u16_be(extra, uint16_t(dst_type.size()));
        extra.insert(extra.end(), dst_type.begin(), dst_type.end());
      }
    }
    put_u32_be(out, uint32_t(extra.size()));
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
  }

  static CatalogEntry decode(const std::string& name, const Bytes& raw) {
    ByteReader r(raw);
    CatalogEntry e;
    e.name = name;
    e.state = EntryState(r.u8());
    e.kind = EntryKind(r.u8());
    e.type_id = r.u32();
    e.version = r.u64();
    e.root = read_fatref(r);
    uint32_t extra_len = r.u32();
    auto span = r.take(extra_len);
    if (e.kind == EntryKind::VERTEX_TYPE || e.kind == EntryKind::EDGE_TYPE) {
      Bytes extra(span.begin(), span.end());
      e.schema = Schema::decode(extra);
      // The schema encoding is canonical, so its size locates the tail.
      size_t schema_len = e.schema.encode().size();
      ByteReader tail(extra);
      tail.take(schema_len);
      if (e.kind == EntryKind::EDGE_TYPE) {
        uint16_t sl = tail.u16();
        auto ss = tail.take(sl);
        e.src_type.assign(ss.begin(), ss.end());
        uint16_t dl = tail.u16();
        auto ds = tail.take(dl);
        e.dst_type.assign(ds.begin(), ds.end());
      }
    }
    return e;
  }
};

class Catalog {
 public:
  explicit Catalog(Store& store) : store_(store), caches_(store.cluster().node_count()) {
    attach_or_bootstrap();
  }

  Store& store() { return store_; }

  // --- mutations; all run inside the caller's transaction ---

  CatalogEntry create(Transaction& tx, const std::string& name, EntryKind kind,
                      FatRef root, Schema schema = {}, const std::string& src_type = "",
                      const std::string& dst_type = "") {
    BTree tree = tree_for();
    CatalogEntry e;
    e.name = name;
    e.state = EntryState::ACTIVE;
    e.kind = kind;
    e.type_id = next_type_id(tx);
    e.version = 1;
    e.root = root;
    e.schema = std::move(schema);
    e.src_type = src_type;
    e.dst_type = dst_type;
    if (!tree.insert_new(tx, name_key(name), e.encode()))
      fail(Err::NAME_EXISTS, "'" + name + "' already exists");
    invalidate(name);
    return e;
  }

  // ACTIVE -> DELETING is the only legal transition.
  CatalogEntry mark_deleting(Transaction& tx, const std::string& name) {
    CatalogEntry e = require_exists(tx, name);
    if (e.state != EntryState::ACTIVE)
      fail(Err::BAD_TRANSITION, "'" + name + "' is already being deleted");
    e.state = EntryState::DELETING;
    rewrite(tx, e);
    return e;
  }

  // Final removal; legal only once the entry is DELETING.
  void remove(Transaction& tx, const std::string& name) {
    CatalogEntry e = require_exists(tx, name);
    if (e.state != EntryState::DELETING)
      fail(Err::BAD_TRANSITION, "'" + name + "' must be DELETING before removal");
    BTree tree = tree_for();
    tree.erase(tx, name_key(name));
    invalidate(name);
  }

  void update_root(Transaction& tx, const std::string& name, FatRef root) {
    CatalogEntry e = require_exists(tx, name);
    e.root = root;
    rewrite(tx, e);
  }

  void update_schema(Transaction& tx, const std::string& name, Schema schema) {
    CatalogEntry e = require_exists(tx, name);
    e.schema = std::move(schema);
    rewrite(tx, e);
  }

  // --- resolution ---

  // Cached resolve: serves from this proxy's cache when fresh, otherwise
  // reads through the transaction and refreshes the cache.
  std::optional<CatalogEntry> resolve(Transaction& tx, const std::string& name) {
    NodeId proxy = tx.origin();
    uint64_t now = store_.cluster().tick();
    {
      std::lock_guard lk(mu_);
      auto& cache = caches_.at(proxy);
      auto it = cache.find(name);
      if (it != cache.end()) {
        if (it->second.expires > now) {
          if (it->second.missing) return std::nullopt;
          return it->second.entry;
        }
        cache.erase(it);
      }
    }
    auto e = lookup(tx, name);
    std::lock_guard lk(mu_);
    auto& cache = caches_.at(proxy);
    Slot slot;
    slot.expires = now + kCatalogTtlTicks;
    slot.missing = !e.has_value();
    if (e) slot.entry = *e;
    cache[name] = std::move(slot);
    return e;
  }

  // Uncached resolve through the transaction: the entry joins the read
  // set, so commits race correctly with catalog changes.
  std::optional<CatalogEntry> lookup(Transaction& tx, const std::string& name) {
    BTree tree = tree_for();
    auto raw = tree.get(tx, name_key(name));
    if (!raw) return std::nullopt;
    return CatalogEntry::decode(name, *raw);
  }

  CatalogEntry require_active(Transaction& tx, const std::string& name, bool cached = false) {
    auto e = cached ? resolve(tx, name) : lookup(tx, name);
    if (!e) fail(Err::NOT_FOUND, "'" + name + "' does not exist");
    if (!e->active()) {
      if (e->kind == EntryKind::VERTEX_TYPE || e->kind == EntryKind::EDGE_TYPE)
        fail(Err::TYPE_DELETING, "'" + name + "' is being deleted");
      fail(Err::DELETING, "'" + name + "' is being deleted");
    }
    return *e;
  }

  std::vector<CatalogEntry> list_prefix(Transaction& tx, const std::string& prefix) {
    BTree tree = tree_for();
    std::vector<CatalogEntry> out;
    for (auto& [k, v] : tree.scan_prefix(tx, name_key(prefix)))
      out.push_back(CatalogEntry::decode(std::string(k.begin(), k.end()), v));
    return out;
  }

  void invalidate(const std::string& name) {
    std::lock_guard lk(mu_);
    for (auto& cache : caches_) cache.erase(name);
  }

  void drop_caches() {
    std::lock_guard lk(mu_);
    for (auto& cache : caches_) cache.clear();
  }

  FatRef catalog_tree_anchor() const { return anchor_; }

 private:
  struct Slot {
    CatalogEntry entry;
    uint64_t expires = 0;
    bool missing = false;
  };

  static Bytes name_key(const std::string& name) {
    return Bytes(name.begin(), name.end());
  }

  BTree tree_for() { return BTree(store_, anchor_); }

  CatalogEntry require_exists(Transaction& tx, const std::string& name) {
    auto e = lookup(tx, name);
    if (!e) fail(Err::NOT_FOUND, "'" + name + "' does not exist");
    return *e;
  }

  void rewrite(Transaction& tx, CatalogEntry& e) {
    e.version++;
    BTree tree = tree_for();
    tree.put(tx, name_key(e.name), e.encode());
    invalidate(e.name);
  }

  uint32_t next_type_id(Transaction& tx) {
    ObjBuf dir = tx.read(kDirectoryAddr, kDirectorySize);
    ByteReader r(dir.bytes());
    uint32_t magic = r.u32();
    if (magic != kDirectoryMagic) fail(Err::CORRUPT_TABLE, "directory magic mismatch");
    read_fatref(r);
    uint32_t id = r.u32();
    ObjBuf& w = tx.open_for_write(dir);
    Bytes body;
    put_u32_be(body, kDirectoryMagic);
    put_fatref(body, anchor_);
    put_u32_be(body, id + 1);
    body.resize(kDirectorySize, 0);
    std::memcpy(w.data(), body.data(), body.size());
    return id;
  }

  void attach_or_bootstrap() {
    // An existing store carries its directory at the well-known address.
    try {
      auto tx = store_.begin(0, true);
      ObjBuf dir = tx->read(kDirectoryAddr, kDirectorySize);
      ByteReader r(dir.bytes());
      if (r.u32() != kDirectoryMagic) fail(Err::CORRUPT_TABLE, "directory magic mismatch");
      anchor_ = read_fatref(r);
      tx->commit();
      return;
    } catch (const A1Error& e) {
      if (e.code() != Err::INVALID_ADDR) throw;
    }
    auto tx = store_.begin(0, false);
    ObjBuf& dir = tx->alloc(kDirectorySize, Hint::local());
    if (!(dir.addr() == kDirectoryAddr))
      fail(Err::INTERNAL, "directory must be the first allocation");
    anchor_ = BTree::create(*tx, Hint::near_addr(dir.addr()));
    Bytes body;
    put_u32_be(body, kDirectoryMagic);
    put_fatref(body, anchor_);
    put_u32_be(body, 1);  // type ids start at 1; 0 means "none"
    body.resize(kDirectorySize, 0);
    std::memcpy(dir.data(), body.data(), body.size());
    auto res = tx->commit();
    if (!res.committed()) fail(Err::INTERNAL, "catalog bootstrap aborted");
  }

  Store& store_;
  FatRef anchor_;
  mutable std::mutex mu_;
  std::vector<std::unordered_map<std::string, Slot>> caches_;
};

}  // namespace a1
