#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "disco/events.hpp"
#include "disco/time.hpp"

namespace disco::simnet {

using ActionHandle = std::uint64_t;

/// Deterministic discrete-event kernel. Strictly single-threaded: every
/// node callback runs from run() in (fire time, scheduling order) order.
class Kernel {
 public:
  explicit Kernel(std::uint64_t seed = 0) : rng_(seed) {}

  Kernel(const Kernel&) = delete;
  Kernel& operator=(const Kernel&) = delete;

  SimTime now() const { return now_; }

  /// Throws SchedulePast when `at` < now().
  ActionHandle schedule(SimTime at, std::function<void()> action);
  ActionHandle schedule_after(Duration delay, std::function<void()> action) {
    return schedule(now_ + delay, std::move(action));
  }
  /// Returns false when the action already fired or was cancelled.
  bool cancel(ActionHandle handle);

  /// Fires every action due at or before `until`. The clock ends at `until`
  /// unless the queue drains first, in which case it stays at the last fired
  /// action.
  void run(SimTime until);
  /// Runs until the queue is empty.
  void run();

  bool idle() const { return live_ == 0; }
  std::size_t pending() const { return live_; }
  std::uint64_t executed() const { return executed_; }

  std::mt19937_64& rng() { return rng_; }

  /// Trace sink; each line is "time<TAB>node<TAB>kind<TAB>detail".
  void set_trace(std::ostream* out) { trace_ = out; }
  bool tracing() const { return trace_ != nullptr; }
  void trace(NodeId node, std::string_view kind, std::string_view detail);

 private:
  struct Entry {
    SimTime at;
    std::uint64_t seq;
    bool operator>(const Entry& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  bool step(SimTime until);

  SimTime now_{};
  std::uint64_t next_seq_ = 1;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
  std::unordered_map<std::uint64_t, std::function<void()>> actions_;
  std::size_t live_ = 0;
  std::uint64_t executed_ = 0;
  std::mt19937_64 rng_;
  std::ostream* trace_ = nullptr;
};

struct LinkModel {
  Duration per_hop_latency{1000};
  Duration jitter{0};  // uniform in [0, jitter], off by default
};

/// Point-to-point message delivery between overlay nodes with per-link byte
/// accounting. Latency is per_hop_latency (+ seeded jitter) for every link.
class Network {
 public:
  Network(Kernel& kernel, LinkModel model, std::uint64_t jitter_seed = 0);

  void add_node(NodeId id) { nodes_.insert(id); }
  bool has_node(NodeId id) const { return nodes_.contains(id); }
  const std::set<NodeId>& nodes() const { return nodes_; }

  /// Schedules `on_deliver` at now + latency and charges `bytes` to the
  /// (src, dst) link. Throws UnknownNode. A message to oneself is delivered
  /// at now without being charged.
  void send(NodeId src, NodeId dst, std::size_t bytes, std::function<void()> on_deliver);

  std::uint64_t bytes(NodeId src, NodeId dst) const;
  const std::map<std::pair<NodeId, NodeId>, std::uint64_t>& byte_counters() const { return bytes_; }
  std::uint64_t total_bytes() const { return total_bytes_; }
  std::uint64_t messages() const { return messages_; }

  const LinkModel& model() const { return model_; }
  Kernel& kernel() { return kernel_; }

 private:
  Kernel& kernel_;
  LinkModel model_;
  std::mt19937_64 jitter_rng_;
  std::set<NodeId> nodes_;
  std::map<std::pair<NodeId, NodeId>, std::uint64_t> bytes_;
  std::uint64_t total_bytes_ = 0;
  std::uint64_t messages_ = 0;
};

}  // namespace disco::simnet
