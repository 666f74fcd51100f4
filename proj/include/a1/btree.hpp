#pragma once
// Transactional B-tree over store objects.
//
// Nodes are store objects addressed by fat references, so a lookup knows
// both where a child lives and how many bytes to read. Keys and values are
// opaque byte strings; callers produce order-preserving encodings. A small
// anchor object holds the root reference so the tree has one stable
// address for its whole life, however often the root splits or moves.
//
// Wire layout of a node, parsed sequentially inside the object:
//   [kind:1][key_count:2][(key_len:2, key)...]
//   [child FatRef(12B) x (key_count+1)]      internal nodes
//   [(val_len:4, value)...]                  leaf nodes
//   [node_version:8]
// Bytes past node_version are allocation padding and never read.
//
// Read descents may serve internal nodes from a cache; a cached copy is
// trusted only if the object's committed version at the transaction's
// snapshot still matches the cached one. Write descents bypass the cache
// so every touched node lands in the read set and structural races abort.

#include <cstring>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "a1/addr.hpp"
#include "a1/common.hpp"
#include "a1/keyenc.hpp"
#include "a1/store.hpp"

namespace a1 {

namespace detail {

inline constexpr size_t kMaxNodeKeys = 15;  // fanout 16: at most 16 children
inline constexpr uint8_t kLeafKind = 0;
inline constexpr uint8_t kInternalKind = 1;

struct BNode {
  uint8_t kind = kLeafKind;
  std::vector<Bytes> keys;
  std::vector<FatRef> children;  // internal: keys.size() + 1 entries
  std::vector<Bytes> values;     // leaf: keys.size() entries
  uint64_t node_version = 0;

  bool leaf() const { return kind == kLeafKind; }

  static BNode decode(const Bytes& raw) {
    ByteReader r(raw);
    BNode n;
    n.kind = r.u8();
    uint16_t count = r.u16();
    n.keys.reserve(count);
    for (uint16_t i = 0; i < count; i++) {
      uint16_t len = r.u16();
      auto span = r.take(len);
      n.keys.emplace_back(span.begin(), span.end());
    }
    if (n.kind == kInternalKind) {
      n.children.reserve(count + 1);
      for (uint16_t i = 0; i <= count; i++) n.children.push_back(read_fatref(r));
    } else {
      n.values.reserve(count);
      for (uint16_t i = 0; i < count; i++) {
        uint32_t len = r.u32();
        auto span = r.take(len);
        n.values.emplace_back(span.begin(), span.end());
      }
    }
    n.node_version = r.u64();
    return n;
  }

  size_t encoded_size() const {
    size_t sz = 1 + 2 + 8;
    for (const auto& k : keys) sz += 2 + k.size();
    if (kind == kInternalKind)
      sz += children.size() * kFatRefBytes;
    else
      for (const auto& v : values) sz += 4 + v.size();
    return sz;
  }

  // Encodes into exactly `pad_to` bytes (zero padding after node_version).
  Bytes encode(size_t pad_to) const {
    Bytes out;
    out.reserve(pad_to);
    out.push_back(kind);
    put_u16_be(out, uint16_t(keys.size()));
    for (const auto& k : keys) {
      put_u16_be(out, uint16_t(k.size()));
      out.insert(out.end(), k.begin(), k.end());
    }
    if (kind == kInternalKind) {
      for (const auto& c : children) put_fatref(out, c);
    } else {
      for (const auto& v : values) {
        put_u32_be(out, uint32_t(v.size()));
        out.insert(out.end(), v.begin(), v.end());
      }
    }
    put_u64_be(out, node_version);
    if (out.size() > pad_to) fail(Err::INTERNAL, "btree node overflows its slot");
    out.resize(pad_to, 0);
    return out;
  }

  // Index of the first key > `key`; also the child to descend into.
  size_t child_index(const Bytes& key) const {
    size_t i = 0;
    while (i < keys.size() && !(key < keys[i])) i++;
    return i;
  }

  // Index of the first key >= `key`, keys.size() if none.
  size_t lower_bound(const Bytes& key) const {
    size_t i = 0;
    while (i < keys.size() && keys[i] < key) i++;
    return i;
  }
};

}  // namespace detail

// Shared cache of decoded internal nodes, validated per lookup against the
// store's committed version at the reader's snapshot. Sized generously for
// desk-scale datasets; eviction is random-ish via clearing when full.
class NodeCache {
 public:
  explicit NodeCache(size_t capacity = 4096) : capacity_(capacity) {}

  std::optional<detail::BNode> lookup(Store& store, Addr addr, Timestamp read_ts) {
    std::lock_guard lk(mu_);
    auto it = map_.find(addr.packed());
    if (it == map_.end()) return std::nullopt;
    Timestamp current;
    try {
      current = store.object_version_at(addr, read_ts);
    } catch (const A1Error&) {
      map_.erase(it);
      return std::nullopt;
    }
    if (current != it->second.version_ts) return std::nullopt;  // stale copy
    return it->second.node;
  }

  void put(Addr addr, Timestamp version_ts, detail::BNode node) {
    std::lock_guard lk(mu_);
    if (map_.size() >= capacity_) map_.clear();
    map_[addr.packed()] = Slot{version_ts, std::move(node)};
  }

  void invalidate(Addr addr) {
    std::lock_guard lk(mu_);
    map_.erase(addr.packed());
  }

  size_t size() const {
    std::lock_guard lk(mu_);
    return map_.size();
  }

 private:
  struct Slot {
    Timestamp version_ts;
    detail::BNode node;
  };
  mutable std::mutex mu_;
  size_t capacity_;
  std::unordered_map<uint64_t, Slot> map_;
};

class BTree {
 public:
  struct Entry {
    Bytes key;
    Bytes value;
  };

  BTree(Store& store, FatRef anchor, std::shared_ptr<NodeCache> cache = nullptr)
      : store_(store), anchor_(anchor), cache_(std::move(cache)) {}

  FatRef anchor() const { return anchor_; }

  // Allocates an empty tree (anchor + empty leaf) inside `tx`.
  static FatRef create(Transaction& tx, Hint hint = Hint::local()) {
    detail::BNode leaf;
    FatRef root = write_new_node(tx, leaf, hint);
    ObjBuf& a = tx.alloc(kAnchorSize, Hint::near_addr(root.addr));
    Bytes body;
    put_fatref(body, root);
    std::memcpy(a.data(), body.data(), body.size());
    return FatRef{a.addr(), kAnchorSize};
  }

  std::optional<Bytes> get(Transaction& tx, const Bytes& key) {
    detail::BNode node = load_node(tx, root_ref(tx));
    while (!node.leaf()) node = load_node(tx, node.children[node.child_index(key)]);
    size_t i = node.lower_bound(key);
    if (i < node.keys.size() && node.keys[i] == key) return node.values[i];
    return std::nullopt;
  }

  bool contains(Transaction& tx, const Bytes& key) { return get(tx, key).has_value(); }

  // Upsert. Returns false if the key already existed (value replaced).
  bool put(Transaction& tx, const Bytes& key, const Bytes& value) {
    return write_entry(tx, key, value, true);
  }

  // Insert-only; returns false and leaves the tree untouched if the key
  // already exists.
  bool insert_new(Transaction& tx, const Bytes& key, const Bytes& value) {
    return write_entry(tx, key, value, false);
  }

  bool erase(Transaction& tx, const Bytes& key) {
    auto path = descend_write(tx, key);
    auto& leaf = path.back();
    size_t i = leaf.node.lower_bound(key);
    if (i >= leaf.node.keys.size() || leaf.node.keys[i] != key) return false;
    leaf.node.keys.erase(leaf.node.keys.begin() + i);
    leaf.node.values.erase(leaf.node.values.begin() + i);
    // No merging on underflow; empty leaves are tolerated and skipped.
    propagate(tx, path);
    return true;
  }

  // Forward iteration positioned by seek(); snapshot-consistent within the
  // transaction. Do not mutate the tree while a cursor is live.
  class Cursor {
   public:
    Cursor(BTree& tree, Transaction& tx) : tree_(tree), tx_(tx) {}

    void seek_first() { seek(Bytes{}); }

    // Positions at the first entry with key >= `key`.
    void seek(const Bytes& key) {
      stack_.clear();
      detail::BNode node = tree_.load_node(tx_, tree_.root_ref(tx_));
      while (!node.leaf()) {
        size_t idx = node.child_index(key);
        FatRef child = node.children[idx];
        stack_.push_back(Frame{std::move(node), idx});
        node = tree_.load_node(tx_, child);
      }
      size_t start = node.lower_bound(key);
      stack_.push_back(Frame{std::move(node), start});
      skip_exhausted();
    }

    bool valid() const { return !stack_.empty(); }

    // Current entry; call only when valid().
    Entry entry() const {
      const Frame& f = stack_.back();
      return Entry{f.node.keys[f.idx], f.node.values[f.idx]};
    }

    void advance() {
      stack_.back().idx++;
      skip_exhausted();
    }

   private:
    struct Frame {
      detail::BNode node;
      size_t idx;  // leaf: next entry; internal: child currently inside
    };

    // Pops exhausted leaves and walks to the leftmost entry of the next
    // subtree to the right.
    void skip_exhausted() {
      while (!stack_.empty()) {
        Frame& top = stack_.back();
        if (top.node.leaf()) {
          if (top.idx < top.node.keys.size()) return;
          stack_.pop_back();
          continue;
        }
        if (top.idx + 1 < top.node.children.size()) {
          top.idx++;
          detail::BNode node = tree_.load_node(tx_, top.node.children[top.idx]);
          while (!node.leaf()) {
            FatRef child = node.children[0];
            stack_.push_back(Frame{std::move(node), 0});
            node = tree_.load_node(tx_, child);
          }
          stack_.push_back(Frame{std::move(node), 0});
          continue;
        }
        stack_.pop_back();
      }
    }

    BTree& tree_;
    Transaction& tx_;
    std::vector<Frame> stack_;
  };

  Cursor cursor(Transaction& tx) { return Cursor(*this, tx); }

  // Entries with key in [from, to_excl), up to `limit` (0 = unbounded).
  std::vector<Entry> range(Transaction& tx, const Bytes& from, const Bytes& to_excl,
                           size_t limit = 0) {
    std::vector<Entry> out;
    Cursor c(*this, tx);
    c.seek(from);
    while (c.valid()) {
      Entry e = c.entry();
      if (!to_excl.empty() && !(e.key < to_excl)) break;
      out.push_back(std::move(e));
      if (limit && out.size() >= limit) break;
      c.advance();
    }
    return out;
  }

  std::vector<Entry> scan_prefix(Transaction& tx, const Bytes& prefix, size_t limit = 0) {
    return range(tx, prefix, key_prefix_upper_bound(prefix), limit);
  }

  size_t size(Transaction& tx) {
    size_t n = 0;
    Cursor c(*this, tx);
    c.seek_first();
    while (c.valid()) {
      n++;
      c.advance();
    }
    return n;
  }

  // Frees every node and the anchor. The tree is unusable afterwards.
  void destroy(Transaction& tx) {
    ObjBuf a = tx.read(anchor_.addr, anchor_.size);
    ByteReader r(a.bytes());
    destroy_subtree(tx, read_fatref(r));
    tx.free_obj(a);
  }

  // Structural sanity: keys ordered, separators bound subtrees, all leaves
  // reachable. Used by tests.
  bool check(Transaction& tx) {
    Bytes lo, hi;
    return check_subtree(tx, root_ref(tx), lo, false, hi, false);
  }

 private:
  static constexpr uint32_t kAnchorSize = 64;

  FatRef root_ref(Transaction& tx) {
    // The anchor behaves like an internal node for caching purposes.
    if (cache_ && tx.read_only()) {
      if (auto hit = cache_->lookup(store_, anchor_.addr, tx.read_ts())) {
        ByteReader r(hit->keys[0]);
        return read_fatref(r);
      }
    }
    ObjBuf a = tx.read(anchor_.addr, anchor_.size);
    ByteReader r(a.bytes());
    FatRef root = read_fatref(r);
    if (cache_ && tx.read_only()) {
      detail::BNode holder;  // smuggle the 12 root bytes through a cache slot
      holder.keys.push_back(Bytes(a.bytes().begin(), a.bytes().begin() + kFatRefBytes));
      cache_->put(anchor_.addr, a.version(), std::move(holder));
    }
    return root;
  }

  detail::BNode load_node(Transaction& tx, FatRef ref) {
    if (cache_ && tx.read_only()) {
      if (auto hit = cache_->lookup(store_, ref.addr, tx.read_ts())) return std::move(*hit);
      ObjBuf buf = tx.read(ref.addr, ref.size);
      detail::BNode node = detail::BNode::decode(buf.bytes());
      if (!node.leaf()) cache_->put(ref.addr, buf.version(), node);
      return node;
    }
    ObjBuf buf = tx.read(ref.addr, ref.size);
    return detail::BNode::decode(buf.bytes());
  }

  struct PathEntry {
    ObjBuf buf;
    detail::BNode node;
    size_t child_idx = 0;  // which child the descent took (internal levels)
    FatRef ref;
  };

  std::vector<PathEntry> descend_write(Transaction& tx, const Bytes& key) {
    std::vector<PathEntry> path;
    FatRef ref = root_ref(tx);
    for (;;) {
      ObjBuf buf = tx.read(ref.addr, ref.size);
      detail::BNode node = detail::BNode::decode(buf.bytes());
      bool leaf = node.leaf();
      size_t idx = leaf ? 0 : node.child_index(key);
      FatRef next = leaf ? FatRef{} : node.children[idx];
      path.push_back(PathEntry{std::move(buf), std::move(node), idx, ref});
      if (leaf) return path;
      ref = next;
    }
  }

  bool write_entry(Transaction& tx, const Bytes& key, const Bytes& value, bool upsert) {
    if (key.size() > UINT16_MAX) fail(Err::BAD_SIZE, "btree key too long");
    auto path = descend_write(tx, key);
    auto& leaf = path.back();
    size_t i = leaf.node.lower_bound(key);
    bool existed = i < leaf.node.keys.size() && leaf.node.keys[i] == key;
    if (existed) {
      if (!upsert) return false;
      leaf.node.values[i] = value;
    } else {
      leaf.node.keys.insert(leaf.node.keys.begin() + i, key);
      leaf.node.values.insert(leaf.node.values.begin() + i, value);
    }
    propagate(tx, path);
    return !existed;
  }

  struct Up {
    std::optional<FatRef> replaced;                  // node moved to a new object
    std::optional<std::pair<Bytes, FatRef>> split;   // separator + right sibling
  };

  // Writes back a modified node, splitting on overflow, and bubbles the
  // consequences toward the root.
  void propagate(Transaction& tx, std::vector<PathEntry>& path) {
    Up up = apply_node(tx, path.back());
    for (size_t level = path.size() - 1; level-- > 0;) {
      PathEntry& parent = path[level];
      bool changed = false;
      if (up.replaced) {
        parent.node.children[parent.child_idx] = *up.replaced;
        changed = true;
      }
      if (up.split) {
        auto& [sep, right] = *up.split;
        parent.node.keys.insert(parent.node.keys.begin() + parent.child_idx, sep);
        parent.node.children.insert(parent.node.children.begin() + parent.child_idx + 1, right);
        changed = true;
      }
      if (!changed) return;
      up = apply_node(tx, parent);
    }
    if (up.split) {
      auto& [sep, right] = *up.split;
      detail::BNode root;
      root.kind = detail::kInternalKind;
      root.keys.push_back(sep);
      FatRef left = up.replaced ? *up.replaced : path.front().ref;
      root.children = {left, right};
      set_root(tx, write_new_node(tx, root, Hint::near_addr(left.addr)));
    } else if (up.replaced) {
      set_root(tx, *up.replaced);
    }
  }

  Up apply_node(Transaction& tx, PathEntry& entry) {
    if (entry.node.keys.size() > detail::kMaxNodeKeys) {
      detail::BNode right;
      right.kind = entry.node.kind;
      Bytes separator;
      size_t mid = entry.node.keys.size() / 2;
      if (entry.node.leaf()) {
        right.keys.assign(entry.node.keys.begin() + mid, entry.node.keys.end());
        right.values.assign(entry.node.values.begin() + mid, entry.node.values.end());
        separator = right.keys.front();
        entry.node.keys.resize(mid);
        entry.node.values.resize(mid);
      } else {
        separator = entry.node.keys[mid];
        right.keys.assign(entry.node.keys.begin() + mid + 1, entry.node.keys.end());
        right.children.assign(entry.node.children.begin() + mid + 1, entry.node.children.end());
        entry.node.keys.resize(mid);
        entry.node.children.resize(mid + 1);
      }
      FatRef right_ref = write_new_node(tx, right, Hint::near_addr(entry.ref.addr));
      Up up;
      up.split = std::make_pair(std::move(separator), right_ref);
      FatRef left_ref = write_back(tx, entry);
      if (!(left_ref == entry.ref)) up.replaced = left_ref;
      return up;
    }
    Up up;
    FatRef ref = write_back(tx, entry);
    if (!(ref == entry.ref)) up.replaced = ref;
    return up;
  }

  // Rewrites in place when the encoding still fits the object, otherwise
  // reallocates nearby and frees the old node.
  FatRef write_back(Transaction& tx, PathEntry& entry) {
    entry.node.node_version++;
    size_t need = entry.node.encoded_size();
    if (need <= entry.buf.size()) {
      Bytes enc = entry.node.encode(entry.buf.size());
      ObjBuf& w = tx.open_for_write(entry.buf);
      std::memcpy(w.data(), enc.data(), enc.size());
      if (cache_) cache_->invalidate(entry.ref.addr);
      return entry.ref;
    }
    tx.free_obj(entry.buf);
    if (cache_) cache_->invalidate(entry.ref.addr);
    return write_new_node(tx, entry.node, Hint::near_addr(entry.ref.addr), need);
  }

  static FatRef write_new_node(Transaction& tx, const detail::BNode& node,
                               Hint hint, size_t need = 0) {
    if (need == 0) need = node.encoded_size();
    uint32_t size = 64;
    while (size < need) size <<= 1;
    ObjBuf& buf = tx.alloc(size, hint);
    Bytes enc = node.encode(size);
    std::memcpy(buf.data(), enc.data(), enc.size());
    return FatRef{buf.addr(), size};
  }

  void set_root(Transaction& tx, FatRef root) {
    ObjBuf a = tx.read(anchor_.addr, anchor_.size);
    ObjBuf& w = tx.open_for_write(a);
    Bytes body;
    put_fatref(body, root);
    std::memcpy(w.data(), body.data(), body.size());
    if (cache_) cache_->invalidate(anchor_.addr);
  }

  void destroy_subtree(Transaction& tx, FatRef ref) {
    ObjBuf buf = tx.read(ref.addr, ref.size);
    detail::BNode node = detail::BNode::decode(buf.bytes());
    if (!node.leaf())
      for (const FatRef& c : node.children) destroy_subtree(tx, c);
    tx.free_obj(buf);
    if (cache_) cache_->invalidate(ref.addr);
  }

  bool check_subtree(Transaction& tx, FatRef ref, const Bytes& lo, bool has_lo,
                     const Bytes& hi, bool has_hi) {
    detail::BNode node = load_node(tx, ref);
    for (size_t i = 0; i + 1 < node.keys.size(); i++)
      if (!(node.keys[i] < node.keys[i + 1])) return false;
    for (const auto& k : node.keys) {
      if (has_lo && k < lo) return false;
      if (has_hi && !(k < hi)) return false;
    }
    if (node.leaf()) return node.values.size() == node.keys.size();
    if (node.children.size() != node.keys.size() + 1) return false;
    for (size_t i = 0; i < node.children.size(); i++) {
      const Bytes& clo = i == 0 ? lo : node.keys[i - 1];
      bool chas_lo = i == 0 ? has_lo : true;
      const Bytes& chi = i == node.keys.size() ? hi : node.keys[i];
      bool chas_hi = i == node.keys.size() ? has_hi : true;
      if (!check_subtree(tx, node.children[i], clo, chas_lo, chi, chas_hi)) return false;
    }
    return true;
  }

  Store& store_;
  FatRef anchor_;
  std::shared_ptr<NodeCache> cache_;
};

}  // namespace a1
