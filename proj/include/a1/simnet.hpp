#pragma once
// In-process simulated cluster: node lifecycle, message RPC onto per-node
// worker pools, fault injection. The simulation is logical, not timed:
// there is no latency model, and "local vs. remote" is accounting only.
//
// Region memory is owned by the harness, not by the simulated node
// processes, mirroring driver-held segments: a process crash keeps the
// bytes around for fast restart, a power loss wipes them.

#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "a1/addr.hpp"
#include "a1/common.hpp"
#include "a1/metrics.hpp"

namespace a1 {

struct ClusterConfig {
  uint32_t node_count = 3;
  uint32_t fault_domain_count = 3;
  uint32_t region_size_bytes = 1u << 20;  // 1 MiB, scaled down from production chunks
  uint32_t replication_factor = 3;        // fixed
  uint64_t rng_seed = 1;
  uint32_t worker_threads_per_node = 2;

  void validate() const {
    if (replication_factor != 3) fail(Err::INVALID_CONFIG, "replication factor is fixed at 3");
    if (node_count < replication_factor)
      fail(Err::INVALID_CONFIG, "node_count below replication factor");
    if (fault_domain_count < 3) fail(Err::INVALID_CONFIG, "need at least three fault domains");
    if (region_size_bytes < (64u << 10)) fail(Err::INVALID_CONFIG, "region size below 64 KiB");
    if (worker_threads_per_node == 0) fail(Err::INVALID_CONFIG, "need at least one worker");
  }
};

enum class FaultKind {
  PROCESS_CRASH,  // node stops serving; harness keeps its region bytes
  POWER_LOSS,     // node stops serving; its region bytes are gone
  PARTITION,      // node unreachable but running
  RESTART,        // crashed/partitioned node comes back
};

enum class NodeState { UP, CRASHED, POWERED_OFF, PARTITIONED };

struct Message {
  std::string kind;
  Bytes body;
};

using RpcHandler = std::function<Bytes(const Message&)>;

namespace detail {

// Bounded worker pool; one per node. Tasks are RPC handler invocations.
class WorkerPool {
 public:
  explicit WorkerPool(uint32_t threads) {
    for (uint32_t i = 0; i < threads; i++)
      threads_.emplace_back([this] { run(); });
  }

  ~WorkerPool() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::future<Bytes> submit(std::function<Bytes()> work) {
    auto task = std::make_shared<std::packaged_task<Bytes()>>(std::move(work));
    auto fut = task->get_future();
    {
      std::lock_guard lk(mu_);
      queue_.push_back([task] { (*task)(); });
    }
    cv_.notify_one();
    return fut;
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || !queue_.empty(); });
        if (stop_ && queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      job();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  bool stop_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace detail

class Cluster;
using FaultListener = std::function<void(NodeId, FaultKind)>;

class Node {
 public:
  Node(NodeId id, uint32_t fault_domain, uint32_t workers)
      : id_(id), fault_domain_(fault_domain), pool_(workers) {}

  NodeId id() const { return id_; }
  uint32_t fault_domain() const { return fault_domain_; }

  NodeState state() const {
    std::lock_guard lk(mu_);
    return state_;
  }
  bool alive() const {
    auto s = state();
    return s == NodeState::UP || s == NodeState::PARTITIONED;
  }
  bool reachable() const { return state() == NodeState::UP; }

  void register_handler(const std::string& kind, RpcHandler h) {
    std::lock_guard lk(mu_);
    handlers_[kind] = std::move(h);
  }

 private:
  friend class Cluster;

  void set_state(NodeState s) {
    std::lock_guard lk(mu_);
    state_ = s;
  }

  // Runs on this node's pool; dedups by request id (at-most-once), caching
  // the reply so a duplicate delivery observes the first execution.
  Bytes handle(uint64_t request_id, const Message& msg) {
    RpcHandler h;
    {
      std::lock_guard lk(mu_);
      auto cached = reply_cache_.find(request_id);
      if (cached != reply_cache_.end()) return cached->second;
      auto it = handlers_.find(msg.kind);
      if (it == handlers_.end()) fail(Err::UNKNOWN_KEY, "no handler for '" + msg.kind + "'");
      h = it->second;
    }
    Bytes reply = h(msg);
    {
      std::lock_guard lk(mu_);
      reply_cache_[request_id] = reply;
    }
    return reply;
  }

  NodeId id_;
  uint32_t fault_domain_;
  mutable std::mutex mu_;
  NodeState state_ = NodeState::UP;
  std::map<std::string, RpcHandler> handlers_;
  std::unordered_map<uint64_t, Bytes> reply_cache_;
  detail::WorkerPool pool_;
};

class Cluster {
 public:
  explicit Cluster(const ClusterConfig& config) : config_(config), rng_(config.rng_seed) {
    config_.validate();
    for (NodeId i = 0; i < config_.node_count; i++)
      nodes_.push_back(std::make_unique<Node>(i, i % config_.fault_domain_count,
                                              config_.worker_threads_per_node));
  }

  const ClusterConfig& config() const { return config_; }
  uint32_t node_count() const { return uint32_t(nodes_.size()); }
  Node& node(NodeId id) { return *nodes_.at(id); }
  const Node& node(NodeId id) const { return *nodes_.at(id); }

  // The configuration manager is the lowest-id live node; failover is
  // deterministic and instantaneous (liveness is harness-global).
  NodeId cm_node() const {
    for (const auto& n : nodes_)
      if (n->alive()) return n->id();
    return kNoNode;
  }

  std::vector<NodeId> live_nodes() const {
    std::vector<NodeId> out;
    for (const auto& n : nodes_)
      if (n->alive()) out.push_back(n->id());
    return out;
  }

  Bytes send_rpc(NodeId dest, const Message& msg) {
    return send_rpc_with_id(dest, next_request_id_.fetch_add(1), msg);
  }

  Bytes send_rpc_with_id(NodeId dest, uint64_t request_id, const Message& msg) {
    if (dest >= nodes_.size()) fail(Err::NODE_UNREACHABLE, "no such node");
    Node& n = *nodes_[dest];
    if (!n.reachable()) fail(Err::NODE_UNREACHABLE, "node " + std::to_string(dest) + " is down");
    metrics_.count_rpc();
    auto fut = n.pool_.submit([&n, request_id, msg] { return n.handle(request_id, msg); });
    return fut.get();
  }

  void inject_fault(NodeId id, FaultKind kind) {
    Node& n = node(id);
    switch (kind) {
      case FaultKind::PROCESS_CRASH:
        n.set_state(NodeState::CRASHED);
        break;
      case FaultKind::POWER_LOSS:
        n.set_state(NodeState::POWERED_OFF);
        break;
      case FaultKind::PARTITION:
        if (n.state() == NodeState::UP) n.set_state(NodeState::PARTITIONED);
        break;
      case FaultKind::RESTART:
        n.set_state(NodeState::UP);
        break;
    }
    std::vector<FaultListener> listeners;
    {
      std::lock_guard lk(listener_mu_);
      listeners = fault_listeners_;
    }
    for (auto& l : listeners) l(id, kind);
  }

  void on_fault(FaultListener l) {
    std::lock_guard lk(listener_mu_);
    fault_listeners_.push_back(std::move(l));
  }

  Metrics& metrics() { return metrics_; }
  MetricsSnapshot read_metrics() const { return metrics_.snapshot(); }

  // Logical time, advanced by data-plane operations and by tests.
  uint64_t tick() const { return tick_.load(); }
  uint64_t advance_tick(uint64_t n = 1) { return tick_.fetch_add(n) + n; }

  uint64_t rand_below(uint64_t n) {
    std::lock_guard lk(rng_mu_);
    return rng_.below(n);
  }
  uint64_t rand_u64() {
    std::lock_guard lk(rng_mu_);
    return rng_.next_u64();
  }

 private:
  ClusterConfig config_;
  std::vector<std::unique_ptr<Node>> nodes_;
  Metrics metrics_;
  std::atomic<uint64_t> tick_{0};
  std::atomic<uint64_t> next_request_id_{1};
  std::mutex rng_mu_;
  Rng rng_;
  std::mutex listener_mu_;
  std::vector<FaultListener> fault_listeners_;
};

inline std::unique_ptr<Cluster> spawn_cluster(const ClusterConfig& config) {
  return std::make_unique<Cluster>(config);
}

}  // namespace a1
