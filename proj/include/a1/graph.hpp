#pragma once
// Property graph engine.
//
// A vertex is two objects: a fixed-size header whose address never
// changes, and a data object holding the attribute record. Half-edges
// hang off the header per direction, inline while the list is small
// (initial capacity 8, doubling up to 1024) and spilled into the graph's
// single edge tree beyond that. Every edge exists as two half-edges, an
// out-half at the source and an in-half at the destination, written in
// one transaction so neither side can dangle.
//
// Vertices are reachable by primary key through a per-type index; declared
// secondary indexes map (field value, pk) to the vertex header. Mutations
// run as implicit transactions with conflict retry; a mutation logger can
// observe committed changes for replication.

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "a1/btree.hpp"
#include "a1/catalog.hpp"
#include "a1/record.hpp"
#include "a1/store.hpp"

namespace a1 {

inline constexpr uint32_t kVertexHeaderSize = 64;
inline constexpr uint32_t kInlineInitialCap = 8;
inline constexpr uint32_t kInlineSpillThreshold = 1024;
inline constexpr uint32_t kHalfEdgeBytes = 24;  // type_id:4 + peer:8 + data FatRef:12
inline constexpr uint8_t kDirOut = 0;
inline constexpr uint8_t kDirIn = 1;

struct HalfEdge {
  uint32_t type_id = 0;
  Addr peer;
  FatRef data;

  bool operator==(const HalfEdge& o) const {
    return type_id == o.type_id && peer == o.peer && data == o.data;
  }
};

// Header wire layout (fixed 64-byte object):
//   [type_id:4][data FatRef:12]
//   [out_mode:1][out_count:4][out_ref FatRef:12]
//   [in_mode:1][in_count:4][in_ref FatRef:12]
struct VertexHeader {
  static constexpr uint8_t kInline = 0;
  static constexpr uint8_t kTree = 1;

  uint32_t type_id = 0;
  FatRef data;
  uint8_t out_mode = kInline;
  uint32_t out_count = 0;
  FatRef out_ref;
  uint8_t in_mode = kInline;
  uint32_t in_count = 0;
  FatRef in_ref;

  Bytes encode() const {
    Bytes out;
    put_u32_be(out, type_id);
    put_fatref(out, data);
    out.push_back(out_mode);
    put_u32_be(out, out_count);
    put_fatref(out, out_ref);
    out.push_back(in_mode);
    put_u32_be(out, in_count);
    put_fatref(out, in_ref);
    out.resize(kVertexHeaderSize, 0);
    return out;
  }

  static VertexHeader decode(const Bytes& raw) {
    ByteReader r(raw);
    VertexHeader h;
    h.type_id = r.u32();
    h.data = read_fatref(r);
    h.out_mode = r.u8();
    h.out_count = r.u32();
    h.out_ref = read_fatref(r);
    h.in_mode = r.u8();
    h.in_count = r.u32();
    h.in_ref = read_fatref(r);
    return h;
  }

  uint8_t mode(uint8_t dir) const { return dir == kDirOut ? out_mode : in_mode; }
  uint32_t count(uint8_t dir) const { return dir == kDirOut ? out_count : in_count; }
  FatRef ref(uint8_t dir) const { return dir == kDirOut ? out_ref : in_ref; }
  void set(uint8_t dir, uint8_t mode, uint32_t count, FatRef ref) {
    if (dir == kDirOut) {
      out_mode = mode;
      out_count = count;
      out_ref = ref;
    } else {
      in_mode = mode;
      in_count = count;
      in_ref = ref;
    }
  }
};

// Observes committed graph mutations from inside the committing
// transaction; the disaster-recovery store hangs its replication log off
// this. Calls happen before commit, in the same transaction, so a logged
// mutation and its log entry are atomic.
class MutationLogger {
 public:
  virtual ~MutationLogger() = default;
  virtual void vertex_upsert(Transaction& tx, const std::string& graph,
                             const std::string& type, const std::string& pk,
                             const Record& rec) = 0;
  virtual void vertex_delete(Transaction& tx, const std::string& graph,
                             const std::string& type, const std::string& pk) = 0;
  virtual void edge_upsert(Transaction& tx, const std::string& graph,
                           const std::string& edge_type, const std::string& src_type,
                           const std::string& src_pk, const std::string& dst_type,
                           const std::string& dst_pk, const Record& rec) = 0;
  virtual void edge_delete(Transaction& tx, const std::string& graph,
                           const std::string& edge_type, const std::string& src_type,
                           const std::string& src_pk, const std::string& dst_type,
                           const std::string& dst_pk) = 0;
};

struct GraphAudit {
  size_t vertices = 0;
  size_t half_edges = 0;
  size_t dangling_halves = 0;   // peer missing or reverse half absent
  size_t count_mismatches = 0;  // header count disagrees with list/tree
  size_t index_mismatches = 0;  // primary or secondary index out of step
  bool clean() const {
    return dangling_halves == 0 && count_mismatches == 0 && index_mismatches == 0;
  }
};

class GraphEngine {
 public:
  GraphEngine(Store& store, Catalog& catalog)
      : store_(store), catalog_(catalog), rng_(store.cluster().config().rng_seed ^ 0x9e3779b9) {}

  void set_logger(MutationLogger* logger) { logger_ = logger; }
  Catalog& catalog() { return catalog_; }
  Store& store() { return store_; }

  // --- naming ---

  static std::string graph_name(const std::string& g) { return "default/" + g; }
  static std::string vtype_name(const std::string& g, const std::string& t) {
    return "default/" + g + "/vertex/" + t;
  }
  static std::string etype_name(const std::string& g, const std::string& t) {
    return "default/" + g + "/edge/" + t;
  }
  static std::string index_name(const std::string& g, const std::string& t,
                                const std::string& field) {
    return "default/" + g + "/index/" + t + "/" + field;
  }
  static std::string pk_index_name(const std::string& g, const std::string& t) {
    return index_name(g, t, "__pk");
  }
  static std::string edge_tree_name(const std::string& g) {
    return "default/" + g + "/tree/__edges";
  }

  // --- DDL ---

  void create_graph(const std::string& g) {
    with_retry(pick_node(), [&](Transaction& tx) {
      catalog_.create(tx, graph_name(g), EntryKind::GRAPH, FatRef{});
      FatRef edges = BTree::create(tx);
      catalog_.create(tx, edge_tree_name(g), EntryKind::TREE, edges);
    });
  }

  void create_vertex_type(const std::string& g, const std::string& t, Schema schema) {
    if (!schema.find("id")) fail(Err::SCHEMA_VIOLATION, "vertex schemas must declare 'id'");
    with_retry(pick_node(), [&](Transaction& tx) {
      catalog_.require_active(tx, graph_name(g));
      catalog_.create(tx, vtype_name(g, t), EntryKind::VERTEX_TYPE, FatRef{}, schema);
      FatRef pk = BTree::create(tx);
      catalog_.create(tx, pk_index_name(g, t), EntryKind::INDEX, pk);
      for (const auto& field : schema.indexed) {
        FatRef idx = BTree::create(tx);
        catalog_.create(tx, index_name(g, t, field), EntryKind::INDEX, idx);
      }
    });
  }

  void create_edge_type(const std::string& g, const std::string& t,
                        const std::string& src_type, const std::string& dst_type,
                        Schema schema) {
    with_retry(pick_node(), [&](Transaction& tx) {
      catalog_.require_active(tx, graph_name(g));
      require_vtype(tx, g, src_type);
      require_vtype(tx, g, dst_type);
      catalog_.create(tx, etype_name(g, t), EntryKind::EDGE_TYPE, FatRef{}, schema,
                      src_type, dst_type);
    });
  }

  // Registers a secondary index on an existing type; rows are backfilled
  // by a BUILD_INDEX task, not here.
  void declare_index(const std::string& g, const std::string& t, const std::string& field) {
    with_retry(pick_node(), [&](Transaction& tx) {
      CatalogEntry vt = require_vtype(tx, g, t);
      const Schema::Field* f = vt.schema.find(field);
      if (!f) fail(Err::UNKNOWN_FIELD, "field '" + field + "' is not in the schema");
      if (f->type == FieldType::STRING_LIST || f->type == FieldType::STRING_MAP)
        fail(Err::SCHEMA_VIOLATION, "list and map fields are not indexable");
      FatRef idx = BTree::create(tx);
      catalog_.create(tx, index_name(g, t, field), EntryKind::INDEX, idx);
      if (std::find(vt.schema.indexed.begin(), vt.schema.indexed.end(), field) ==
          vt.schema.indexed.end()) {
        vt.schema.indexed.push_back(field);
        catalog_.update_schema(tx, vt.name, vt.schema);
      }
    });
  }

  // --- DML (implicit transactions with retry) ---

  Addr add_vertex(const std::string& g, const std::string& t, const Record& rec,
                  std::optional<Addr> place_near = std::nullopt) {
    std::string pk = pk_of(rec);
    NodeId origin = place_near ? safe_primary(*place_near) : pick_node();
    Addr header_addr;
    with_retry(origin, [&](Transaction& tx) {
      catalog_.require_active(tx, graph_name(g));
      CatalogEntry vt = require_vtype(tx, g, t);
      vt.schema.validate(rec);
      BTree pk_index = index_tree(tx, g, t, "__pk");
      Bytes pk_key = str_key(pk);
      if (pk_index.contains(tx, pk_key))
        fail(Err::DUPLICATE_KEY, "'" + pk + "' already exists in " + t);

      Hint hint = place_near ? Hint::near_addr(*place_near) : Hint::local();
      ObjBuf& hdr = tx.alloc(kVertexHeaderSize, hint);
      VertexHeader h;
      h.type_id = vt.type_id;
      h.data = write_record(tx, rec, hdr.addr());
      std::memcpy(hdr.data(), h.encode().data(), kVertexHeaderSize);

      Bytes ref_val;
      put_fatref(ref_val, FatRef{hdr.addr(), kVertexHeaderSize});
      pk_index.insert_new(tx, pk_key, ref_val);
      for (const auto& field : vt.schema.indexed)
        if (const Value* v = rec.find(field)) {
          BTree idx = index_tree(tx, g, t, field);
          idx.put(tx, secondary_key(*v, pk), ref_val);
        }
      if (logger_) logger_->vertex_upsert(tx, g, t, pk, rec);
      header_addr = hdr.addr();
    });
    bump_tick();
    return header_addr;
  }

  // Replaces the attribute record wholesale; the primary key is immutable.
  void update_vertex(const std::string& g, const std::string& t, const std::string& pk,
                     const Record& rec) {
    if (const Value* id = rec.find("id"); id && id->as_string() != pk)
      fail(Err::SCHEMA_VIOLATION, "primary keys cannot change");
    with_retry(pick_node(), [&](Transaction& tx) {
      catalog_.require_active(tx, graph_name(g));
      CatalogEntry vt = require_vtype(tx, g, t);
      Record full = rec;
      full.set("id", Value::of_string(pk));
      vt.schema.validate(full);
      Addr va = require_vertex(tx, g, t, pk);
      ObjBuf hdr = tx.read(va, kVertexHeaderSize);
      VertexHeader h = VertexHeader::decode(hdr.bytes());
      Record old = read_record(tx, h.data);

      Bytes ref_val;
      put_fatref(ref_val, FatRef{va, kVertexHeaderSize});
      for (const auto& field : vt.schema.indexed) {
        const Value* ov = old.find(field);
        const Value* nv = full.find(field);
        if (ov && nv && *ov == *nv) continue;
        BTree idx = index_tree(tx, g, t, field);
        if (ov) idx.erase(tx, secondary_key(*ov, pk));
        if (nv) idx.put(tx, secondary_key(*nv, pk), ref_val);
      }

      FatRef nd = rewrite_record(tx, h.data, full, va);
      if (!(nd == h.data)) {
        h.data = nd;
        write_header(tx, hdr, h);
      }
      if (logger_) logger_->vertex_upsert(tx, g, t, pk, full);
    });
    bump_tick();
  }

  // Removes the vertex and every incident edge, both halves, atomically.
  void delete_vertex(const std::string& g, const std::string& t, const std::string& pk) {
    with_retry(pick_node(), [&](Transaction& tx) {
      catalog_.require_active(tx, graph_name(g));
      require_vtype(tx, g, t);
      delete_vertex_in_tx(tx, g, t, pk);
    });
    bump_tick();
  }

  // Same as delete_vertex but callable while the graph or type is already
  // DELETING (deletion task workers run after the state flip).
  void delete_vertex_in_tx(Transaction& tx, const std::string& g, const std::string& t,
                           const std::string& pk) {
    CatalogEntry vt = lookup_vtype(tx, g, t);
    Addr va = require_vertex(tx, g, t, pk);
    Record rec = read_record_at(tx, va);
    auto etypes = edge_types_by_id(tx, g);

    // Detach each incident edge from the peer side and free shared data.
    // The header is re-read per direction: a self-loop's removal above
    // already shrank the in-list this pass is about to walk.
    for (uint8_t dir : {kDirOut, kDirIn}) {
      ObjBuf hdr = tx.read(va, kVertexHeaderSize);
      VertexHeader h = VertexHeader::decode(hdr.bytes());
      for (const HalfEdge& e : list_halves(tx, g, va, h, dir, std::nullopt)) {
        std::string peer_pk;
        if (logger_) peer_pk = pk_of(read_record_at(tx, e.peer));
        ObjBuf peer_hdr = tx.read(e.peer, kVertexHeaderSize);
        VertexHeader ph = VertexHeader::decode(peer_hdr.bytes());
        remove_half(tx, g, e.peer, peer_hdr, ph, uint8_t(1 - dir), e.type_id, va);
        if (!e.data.is_null()) tx.free_addr(e.data.addr);
        if (logger_) {
          auto et = etypes.find(e.type_id);
          if (et != etypes.end()) {
            const CatalogEntry& ee = et->second;
            std::string etn = short_name(ee.name);
            if (dir == kDirOut)
              logger_->edge_delete(tx, g, etn, ee.src_type, pk, ee.dst_type, peer_pk);
            else
              logger_->edge_delete(tx, g, etn, ee.src_type, peer_pk, ee.dst_type, pk);
          }
        }
      }
    }
    ObjBuf hdr = tx.read(va, kVertexHeaderSize);
    VertexHeader h = VertexHeader::decode(hdr.bytes());
    drop_halves_storage(tx, g, va, h);

    BTree pk_index = index_tree(tx, g, t, "__pk");
    pk_index.erase(tx, str_key(pk));
    for (const auto& field : vt.schema.indexed)
      if (const Value* v = rec.find(field)) {
        BTree idx = index_tree(tx, g, t, field);
        idx.erase(tx, secondary_key(*v, pk));
      }
    if (!h.data.is_null()) tx.free_addr(h.data.addr);
    tx.free_obj(hdr);
    if (logger_) logger_->vertex_delete(tx, g, t, pk);
  }

  void add_edge(const std::string& g, const std::string& et, const std::string& src_pk,
                const std::string& dst_pk, const Record& rec = {}) {
    with_retry(pick_node(), [&](Transaction& tx) {
      catalog_.require_active(tx, graph_name(g));
      CatalogEntry ee = require_etype(tx, g, et);
      ee.schema.validate(rec);
      // A dying endpoint type must not grow new edges, or the deletion scan
      // could finish while a fresh half still points into freed storage.
      require_vtype(tx, g, ee.src_type);
      require_vtype(tx, g, ee.dst_type);
      Addr src = require_vertex(tx, g, ee.src_type, src_pk);
      Addr dst = require_vertex(tx, g, ee.dst_type, dst_pk);

      ObjBuf src_hdr = tx.read(src, kVertexHeaderSize);
      VertexHeader sh = VertexHeader::decode(src_hdr.bytes());
      if (find_half(tx, g, src, sh, kDirOut, ee.type_id, dst))
        fail(Err::DUPLICATE_EDGE, et + " " + src_pk + " -> " + dst_pk + " already exists");

      FatRef data;
      if (!rec.empty()) data = write_record(tx, rec, src);
      add_half(tx, g, src, src_hdr, sh, kDirOut, HalfEdge{ee.type_id, dst, data});
      ObjBuf dst_hdr = tx.read(dst, kVertexHeaderSize);
      VertexHeader dh = VertexHeader::decode(dst_hdr.bytes());
      add_half(tx, g, dst, dst_hdr, dh, kDirIn, HalfEdge{ee.type_id, src, data});
      if (logger_)
        logger_->edge_upsert(tx, g, et, ee.src_type, src_pk, ee.dst_type, dst_pk, rec);
    });
    bump_tick();
  }

  void delete_edge(const std::string& g, const std::string& et, const std::string& src_pk,
                   const std::string& dst_pk) {
    with_retry(pick_node(), [&](Transaction& tx) {
      catalog_.require_active(tx, graph_name(g));
      CatalogEntry ee = require_etype(tx, g, et);
      Addr src = require_vertex(tx, g, ee.src_type, src_pk);
      Addr dst = require_vertex(tx, g, ee.dst_type, dst_pk);

      ObjBuf src_hdr = tx.read(src, kVertexHeaderSize);
      VertexHeader sh = VertexHeader::decode(src_hdr.bytes());
      auto data = remove_half(tx, g, src, src_hdr, sh, kDirOut, ee.type_id, dst);
      if (!data) fail(Err::NOT_FOUND, et + " " + src_pk + " -> " + dst_pk + " does not exist");
      ObjBuf dst_hdr = tx.read(dst, kVertexHeaderSize);
      VertexHeader dh = VertexHeader::decode(dst_hdr.bytes());
      remove_half(tx, g, dst, dst_hdr, dh, kDirIn, ee.type_id, src);
      if (!data->is_null()) tx.free_addr(data->addr);
      if (logger_)
        logger_->edge_delete(tx, g, et, ee.src_type, src_pk, ee.dst_type, dst_pk);
    });
    bump_tick();
  }

  // --- lookups (run inside the caller's transaction) ---

  std::optional<Addr> find_vertex(Transaction& tx, const std::string& g,
                                  const std::string& t, const std::string& pk,
                                  bool cached = true) {
    auto vt = cached ? catalog_.resolve(tx, pk_index_name(g, t))
                     : catalog_.lookup(tx, pk_index_name(g, t));
    if (!vt) return std::nullopt;
    BTree idx(store_, vt->root);
    auto raw = idx.get(tx, str_key(pk));
    if (!raw) return std::nullopt;
    ByteReader r(*raw);
    return read_fatref(r).addr;
  }

  Record read_record_at(Transaction& tx, Addr header) {
    ObjBuf hdr = tx.read(header, kVertexHeaderSize);
    VertexHeader h = VertexHeader::decode(hdr.bytes());
    return read_record(tx, h.data);
  }

  VertexHeader read_header(Transaction& tx, Addr header) {
    ObjBuf hdr = tx.read(header, kVertexHeaderSize);
    return VertexHeader::decode(hdr.bytes());
  }

  Record read_record(Transaction& tx, FatRef data) {
    if (data.is_null()) return Record{};
    ObjBuf buf = tx.read(data.addr, data.size);
    return Record::decode(buf.bytes());
  }

  std::vector<HalfEdge> list_halves(Transaction& tx, const std::string& g, Addr v,
                                    const VertexHeader& h, uint8_t dir,
                                    std::optional<uint32_t> type_filter) {
    std::vector<HalfEdge> out;
    if (h.mode(dir) == VertexHeader::kInline) {
      FatRef ref = h.ref(dir);
      if (ref.is_null()) return out;
      ObjBuf list = tx.read(ref.addr, ref.size);
      ByteReader r(list.bytes());
      for (uint32_t i = 0; i < h.count(dir); i++) {
        HalfEdge e;
        e.type_id = r.u32();
        e.peer = read_addr(r);
        e.data = read_fatref(r);
        if (!type_filter || e.type_id == *type_filter) out.push_back(e);
      }
      return out;
    }
    BTree tree = edge_tree(tx, g);
    Bytes prefix = edge_key_prefix(dir, v, type_filter);
    for (auto& [k, val] : tree.scan_prefix(tx, prefix)) {
      ByteReader kr(k);
      kr.u8();
      read_addr(kr);
      HalfEdge e;
      e.type_id = kr.u32();
      e.peer = read_addr(kr);
      ByteReader vr(val);
      e.data = read_fatref(vr);
      out.push_back(e);
    }
    return out;
  }

  std::vector<HalfEdge> out_edges(Transaction& tx, const std::string& g, Addr v,
                                  std::optional<uint32_t> type_filter = std::nullopt) {
    VertexHeader h = read_header(tx, v);
    return list_halves(tx, g, v, h, kDirOut, type_filter);
  }

  std::vector<HalfEdge> in_edges(Transaction& tx, const std::string& g, Addr v,
                                 std::optional<uint32_t> type_filter = std::nullopt) {
    VertexHeader h = read_header(tx, v);
    return list_halves(tx, g, v, h, kDirIn, type_filter);
  }

  CatalogEntry require_vtype(Transaction& tx, const std::string& g, const std::string& t) {
    auto e = catalog_.lookup(tx, vtype_name(g, t));
    if (!e) fail(Err::UNKNOWN_TYPE, "vertex type '" + t + "' does not exist");
    if (!e->active()) fail(Err::TYPE_DELETING, "vertex type '" + t + "' is being deleted");
    return *e;
  }

  CatalogEntry lookup_vtype(Transaction& tx, const std::string& g, const std::string& t) {
    auto e = catalog_.lookup(tx, vtype_name(g, t));
    if (!e) fail(Err::UNKNOWN_TYPE, "vertex type '" + t + "' does not exist");
    return *e;
  }

  CatalogEntry require_etype(Transaction& tx, const std::string& g, const std::string& t) {
    auto e = catalog_.lookup(tx, etype_name(g, t));
    if (!e) fail(Err::UNKNOWN_TYPE, "edge type '" + t + "' does not exist");
    if (!e->active()) fail(Err::TYPE_DELETING, "edge type '" + t + "' is being deleted");
    return *e;
  }

  // Edge type entries keyed by numeric id, for resolving stored half-edges.
  std::unordered_map<uint32_t, CatalogEntry> edge_types_by_id(Transaction& tx,
                                                              const std::string& g) {
    std::unordered_map<uint32_t, CatalogEntry> out;
    for (auto& e : catalog_.list_prefix(tx, "default/" + g + "/edge/"))
      out.emplace(e.type_id, e);
    return out;
  }

  std::vector<CatalogEntry> vertex_types(Transaction& tx, const std::string& g) {
    return catalog_.list_prefix(tx, "default/" + g + "/vertex/");
  }

  static std::string short_name(const std::string& full) {
    auto pos = full.rfind('/');
    return pos == std::string::npos ? full : full.substr(pos + 1);
  }

  static std::string pk_of(const Record& rec) {
    const Value* id = rec.find("id");
    if (!id || id->type() != FieldType::STRING)
      fail(Err::SCHEMA_VIOLATION, "records must carry a string 'id'");
    return id->as_string();
  }

  Addr require_vertex(Transaction& tx, const std::string& g, const std::string& t,
                      const std::string& pk) {
    auto a = find_vertex(tx, g, t, pk, false);
    if (!a) fail(Err::NOT_FOUND, t + " '" + pk + "' does not exist");
    return *a;
  }

  // Runs `fn` in fresh read-write transactions until one commits. Conflict
  // aborts retry; everything else propagates.
  template <typename F>
  void with_retry(NodeId origin, F&& fn) {
    for (int attempt = 0; attempt < 256; attempt++) {
      auto tx = store_.begin(origin, false);
      fn(*tx);
      if (tx->commit().committed()) return;
    }
    fail(Err::INTERNAL, "transaction kept conflicting after 256 attempts");
  }

  NodeId pick_node() {
    auto live = store_.cluster().live_nodes();
    if (live.empty()) fail(Err::STORE_PAUSED, "no live nodes");
    std::lock_guard lk(rng_mu_);
    return live[rng_.below(live.size())];
  }

  // --- audit ---

  GraphAudit audit(const std::string& g) {
    auto tx = store_.begin(pick_node(), true);
    GraphAudit report;
    std::unordered_map<uint64_t, uint32_t> vertex_type;  // header addr -> type_id
    std::vector<std::pair<Addr, std::string>> vertices;

    for (const auto& vt : vertex_types(*tx, g)) {
      auto pe = catalog_.lookup(*tx, pk_index_name(g, short_name(vt.name)));
      if (!pe) {
        report.index_mismatches++;
        continue;
      }
      BTree pk_index(store_, pe->root);
      auto c = pk_index.cursor(*tx);
      for (c.seek_first(); c.valid(); c.advance()) {
        auto [k, v] = c.entry();
        ByteReader r(v);
        Addr va = read_fatref(r).addr;
        vertex_type[va.packed()] = vt.type_id;
        vertices.emplace_back(va, short_name(vt.name));
        report.vertices++;
      }
    }

    for (const auto& [va, tname] : vertices) {
      VertexHeader h = read_header(*tx, va);
      if (vertex_type.at(va.packed()) != h.type_id) report.index_mismatches++;
      for (uint8_t dir : {kDirOut, kDirIn}) {
        auto halves = list_halves(*tx, g, va, h, dir, std::nullopt);
        if (halves.size() != h.count(dir)) report.count_mismatches++;
        report.half_edges += halves.size();
        for (const HalfEdge& e : halves) {
          auto peer = vertex_type.find(e.peer.packed());
          if (peer == vertex_type.end()) {
            report.dangling_halves++;
            continue;
          }
          VertexHeader ph = read_header(*tx, e.peer);
          auto reverse = find_half(*tx, g, e.peer, ph, uint8_t(1 - dir), e.type_id, va);
          if (!reverse || !(*reverse == e.data)) report.dangling_halves++;
        }
      }
    }

    // Secondary indexes: every entry points at a live vertex whose field
    // value matches, and every vertex appears under its current value.
    for (const auto& vt : vertex_types(*tx, g)) {
      std::string t = short_name(vt.name);
      for (const auto& field : vt.schema.indexed) {
        auto ie = catalog_.lookup(*tx, index_name(g, t, field));
        if (!ie) {
          report.index_mismatches++;
          continue;
        }
        BTree idx(store_, ie->root);
        size_t entries = 0;
        auto c = idx.cursor(*tx);
        for (c.seek_first(); c.valid(); c.advance()) {
          entries++;
          auto ent = c.entry();
          ByteReader r(ent.value);
          Addr va = read_fatref(r).addr;
          if (!vertex_type.count(va.packed())) report.index_mismatches++;
        }
        size_t expected = 0;
        for (const auto& [va, tname] : vertices) {
          if (tname != t) continue;
          Record rec = read_record_at(*tx, va);
          if (const Value* v = rec.find(field)) {
            expected++;
            BTree check(store_, ie->root);
            if (!check.contains(*tx, secondary_key(*v, pk_of(rec))))
              report.index_mismatches++;
          }
        }
        if (entries != expected) report.index_mismatches++;
      }
    }
    tx->commit();
    return report;
  }

  // --- half-edge plumbing (shared with deletion tasks) ---

  BTree edge_tree(Transaction& tx, const std::string& g) {
    auto e = catalog_.lookup(tx, edge_tree_name(g));
    if (!e) fail(Err::INTERNAL, "graph is missing its edge tree");
    return BTree(store_, e->root);
  }

  static Bytes edge_key(uint8_t dir, Addr v, uint32_t type_id, Addr peer) {
    Bytes k;
    k.push_back(dir);
    put_addr(k, v);
    put_u32_be(k, type_id);
    put_addr(k, peer);
    return k;
  }

  static Bytes edge_key_prefix(uint8_t dir, Addr v, std::optional<uint32_t> type_id) {
    Bytes k;
    k.push_back(dir);
    put_addr(k, v);
    if (type_id) put_u32_be(k, *type_id);
    return k;
  }

  std::optional<FatRef> find_half(Transaction& tx, const std::string& g, Addr v,
                                  const VertexHeader& h, uint8_t dir, uint32_t type_id,
                                  Addr peer) {
    if (h.mode(dir) == VertexHeader::kInline) {
      for (const HalfEdge& e : list_halves(tx, g, v, h, dir, type_id))
        if (e.peer == peer) return e.data;
      return std::nullopt;
    }
    BTree tree = edge_tree(tx, g);
    auto raw = tree.get(tx, edge_key(dir, v, type_id, peer));
    if (!raw) return std::nullopt;
    ByteReader r(*raw);
    return read_fatref(r);
  }

  void add_half(Transaction& tx, const std::string& g, Addr v, ObjBuf& hdr_buf,
                VertexHeader& h, uint8_t dir, const HalfEdge& e) {
    if (h.mode(dir) == VertexHeader::kInline) {
      uint32_t count = h.count(dir);
      FatRef ref = h.ref(dir);
      uint32_t cap = ref.is_null() ? 0 : ref.size / kHalfEdgeBytes;
      if (count < cap) {
        ObjBuf list = tx.read(ref.addr, ref.size);
        ObjBuf& w = tx.open_for_write(list);
        write_half_at(w, count, e);
        h.set(dir, VertexHeader::kInline, count + 1, ref);
        write_header(tx, hdr_buf, h);
        return;
      }
      if (count < kInlineSpillThreshold) {
        uint32_t new_cap = cap == 0 ? kInlineInitialCap : cap * 2;
        if (new_cap > kInlineSpillThreshold) new_cap = kInlineSpillThreshold;
        ObjBuf& fresh = tx.alloc(new_cap * kHalfEdgeBytes, Hint::near_addr(v));
        if (!ref.is_null()) {
          ObjBuf old = tx.read(ref.addr, ref.size);
          std::memcpy(fresh.data(), old.bytes().data(), count * kHalfEdgeBytes);
          tx.free_obj(old);
        }
        write_half_at(fresh, count, e);
        h.set(dir, VertexHeader::kInline, count + 1,
              FatRef{fresh.addr(), new_cap * kHalfEdgeBytes});
        write_header(tx, hdr_buf, h);
        return;
      }
      // The list hit the spill threshold: move everything into the edge
      // tree and keep only the count in the header.
      BTree tree = edge_tree(tx, g);
      for (const HalfEdge& old : list_halves(tx, g, v, h, dir, std::nullopt)) {
        Bytes val;
        put_fatref(val, old.data);
        tree.insert_new(tx, edge_key(dir, v, old.type_id, old.peer), val);
      }
      if (!ref.is_null()) tx.free_addr(ref.addr);
      Bytes val;
      put_fatref(val, e.data);
      if (!tree.insert_new(tx, edge_key(dir, v, e.type_id, e.peer), val))
        fail(Err::DUPLICATE_EDGE, "half-edge already present");
      h.set(dir, VertexHeader::kTree, count + 1, FatRef{});
      write_header(tx, hdr_buf, h);
      return;
    }
    BTree tree = edge_tree(tx, g);
    Bytes val;
    put_fatref(val, e.data);
    if (!tree.insert_new(tx, edge_key(dir, v, e.type_id, e.peer), val))
      fail(Err::DUPLICATE_EDGE, "half-edge already present");
    h.set(dir, VertexHeader::kTree, h.count(dir) + 1, FatRef{});
    write_header(tx, hdr_buf, h);
  }

  std::optional<FatRef> remove_half(Transaction& tx, const std::string& g, Addr v,
                                    ObjBuf& hdr_buf, VertexHeader& h, uint8_t dir,
                                    uint32_t type_id, Addr peer) {
    uint32_t count = h.count(dir);
    if (h.mode(dir) == VertexHeader::kInline) {
      FatRef ref = h.ref(dir);
      if (ref.is_null()) return std::nullopt;
      ObjBuf list = tx.read(ref.addr, ref.size);
      ByteReader r(list.bytes());
      std::vector<HalfEdge> halves;
      std::optional<FatRef> removed;
      for (uint32_t i = 0; i < count; i++) {
        HalfEdge e;
        e.type_id = r.u32();
        e.peer = read_addr(r);
        e.data = read_fatref(r);
        if (!removed && e.type_id == type_id && e.peer == peer)
          removed = e.data;
        else
          halves.push_back(e);
      }
      if (!removed) return std::nullopt;
      ObjBuf& w = tx.open_for_write(list);
      for (uint32_t i = 0; i < halves.size(); i++) write_half_at(w, i, halves[i]);
      h.set(dir, VertexHeader::kInline, count - 1, ref);
      write_header(tx, hdr_buf, h);
      return removed;
    }
    BTree tree = edge_tree(tx, g);
    Bytes key = edge_key(dir, v, type_id, peer);
    auto raw = tree.get(tx, key);
    if (!raw) return std::nullopt;
    tree.erase(tx, key);
    h.set(dir, VertexHeader::kTree, count - 1, FatRef{});
    write_header(tx, hdr_buf, h);
    ByteReader r(*raw);
    return read_fatref(r);
  }

  // Frees inline lists or clears spilled entries when a vertex dies.
  void drop_halves_storage(Transaction& tx, const std::string& g, Addr v, VertexHeader& h) {
    for (uint8_t dir : {kDirOut, kDirIn}) {
      if (h.mode(dir) == VertexHeader::kInline) {
        if (!h.ref(dir).is_null()) tx.free_addr(h.ref(dir).addr);
      } else {
        BTree tree = edge_tree(tx, g);
        for (auto& [k, val] : tree.scan_prefix(tx, edge_key_prefix(dir, v, std::nullopt)))
          tree.erase(tx, k);
      }
      h.set(dir, VertexHeader::kInline, 0, FatRef{});
    }
  }

  // Key layouts shared with the workflow and query layers.
  static Bytes str_key(const std::string& s) {
    Bytes k;
    key_put_str(k, s);
    return k;
  }

  static Bytes secondary_key(const Value& v, const std::string& pk) {
    Bytes k;
    v.key_encode(k);
    key_put_str(k, pk);
    return k;
  }

 private:

  BTree index_tree(Transaction& tx, const std::string& g, const std::string& t,
                   const std::string& field) {
    auto e = catalog_.lookup(tx, index_name(g, t, field));
    if (!e) fail(Err::UNKNOWN_TYPE, "no index '" + field + "' on " + t);
    return BTree(store_, e->root);
  }

  FatRef write_record(Transaction& tx, const Record& rec, Addr near) {
    Bytes enc = rec.encode();
    uint32_t size = std::max<uint32_t>(64, uint32_t(enc.size()));
    ObjBuf& buf = tx.alloc(size, Hint::near_addr(near));
    std::memcpy(buf.data(), enc.data(), enc.size());
    return FatRef{buf.addr(), size};
  }

  FatRef rewrite_record(Transaction& tx, FatRef old, const Record& rec, Addr near) {
    Bytes enc = rec.encode();
    if (!old.is_null() && enc.size() <= old.size) {
      ObjBuf buf = tx.read(old.addr, old.size);
      ObjBuf& w = tx.open_for_write(buf);
      std::fill(w.mutable_bytes().begin(), w.mutable_bytes().end(), uint8_t(0));
      std::memcpy(w.data(), enc.data(), enc.size());
      return old;
    }
    if (!old.is_null()) tx.free_addr(old.addr);
    return write_record(tx, rec, near);
  }

  void write_header(Transaction& tx, ObjBuf& hdr_buf, const VertexHeader& h) {
    ObjBuf& w = tx.open_for_write(hdr_buf);
    Bytes enc = h.encode();
    std::memcpy(w.data(), enc.data(), enc.size());
  }

  static void write_half_at(ObjBuf& list, uint32_t idx, const HalfEdge& e) {
    Bytes enc;
    put_u32_be(enc, e.type_id);
    put_addr(enc, e.peer);
    put_fatref(enc, e.data);
    std::memcpy(list.data() + idx * kHalfEdgeBytes, enc.data(), kHalfEdgeBytes);
  }

  NodeId safe_primary(Addr a) {
    NodeId n = store_.primary_of(a);
    return store_.cluster().node(n).alive() ? n : pick_node();
  }

  void bump_tick() { store_.cluster().advance_tick(); }

  Store& store_;
  Catalog& catalog_;
  MutationLogger* logger_ = nullptr;
  std::mutex rng_mu_;
  Rng rng_;
};

}  // namespace a1
