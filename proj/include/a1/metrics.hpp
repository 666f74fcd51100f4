#pragma once
// Read/RPC/transaction accounting. "Local vs. remote" is a counting
// distinction: a read is local when the invoking node is the primary of
// the region holding the object.

#include <atomic>
#include <cstdint>

namespace a1 {

struct MetricsSnapshot {
  uint64_t local_reads = 0;
  uint64_t remote_reads = 0;
  uint64_t rpc_count = 0;
  uint64_t tx_commits = 0;
  uint64_t tx_aborts = 0;

  uint64_t total_reads() const { return local_reads + remote_reads; }
};

class Metrics {
 public:
  void count_read(bool local) { (local ? local_reads_ : remote_reads_).fetch_add(1); }
  void count_rpc() { rpc_count_.fetch_add(1); }
  void count_commit() { tx_commits_.fetch_add(1); }
  void count_abort() { tx_aborts_.fetch_add(1); }

  MetricsSnapshot snapshot() const {
    MetricsSnapshot s;
    s.local_reads = local_reads_.load();
    s.remote_reads = remote_reads_.load();
    s.rpc_count = rpc_count_.load();
    s.tx_commits = tx_commits_.load();
    s.tx_aborts = tx_aborts_.load();
    return s;
  }

  void reset() {
    local_reads_ = 0;
    remote_reads_ = 0;
    rpc_count_ = 0;
    tx_commits_ = 0;
    tx_aborts_ = 0;
  }

 private:
  std::atomic<uint64_t> local_reads_{0};
  std::atomic<uint64_t> remote_reads_{0};
  std::atomic<uint64_t> rpc_count_{0};
  std::atomic<uint64_t> tx_commits_{0};
  std::atomic<uint64_t> tx_aborts_{0};
};

// Per-query (or per-phase) sink a transaction can be pointed at; the
// query engine uses one per hop batch to report locality.
struct ReadStats {
  std::atomic<uint64_t> local{0};
  std::atomic<uint64_t> remote{0};

  void count(bool is_local) { (is_local ? local : remote).fetch_add(1); }
  uint64_t total() const { return local.load() + remote.load(); }
  double local_fraction() const {
    uint64_t t = total();
    return t == 0 ? 1.0 : double(local.load()) / double(t);
  }
};

}  // namespace a1
