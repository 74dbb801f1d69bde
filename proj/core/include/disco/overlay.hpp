#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "disco/events.hpp"

namespace disco::overlay {

/// Bidirectional distance on the 2^64 ring.
constexpr std::uint64_t ring_distance(std::uint64_t a, std::uint64_t b) {
  std::uint64_t cw = b - a;
  std::uint64_t ccw = a - b;
  return cw < ccw ? cw : ccw;
}

/// Strict "closer to key" order: smaller ring distance, ties go to the
/// numerically smaller id.
constexpr bool closer(NodeId a, NodeId b, std::uint64_t key) {
  auto da = ring_distance(a, key);
  auto db = ring_distance(b, key);
  return da != db ? da < db : a < b;
}

struct RoutingTable {
  std::vector<NodeId> successors;    // clockwise neighbours, nearest first
  std::vector<NodeId> predecessors;  // counter-clockwise neighbours, nearest first
  std::vector<NodeId> fingers;       // nodes nearest to id +/- 2^i, deduplicated
};

/// Static key-based routing substrate: every key is owned by the live node
/// closest to it on the ring, reached by greedy multi-hop forwarding.
class Overlay {
 public:
  explicit Overlay(std::vector<NodeId> ids, std::size_t successor_count = 4);

  const std::vector<NodeId>& nodes() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  bool contains(NodeId id) const { return tables_.contains(id); }
  std::size_t successor_count() const { return successor_count_; }
  const RoutingTable& table(NodeId id) const;

  /// Node minimising ring distance to key (ties: smaller id).
  NodeId owner(std::uint64_t key) const;

  /// Next node from `at` toward `key`, or nullopt when `at` owns the key.
  std::optional<NodeId> next_hop(NodeId at, std::uint64_t key) const;

  /// Full path from `start` to owner(key), both ends included. `per_hop` is
  /// invoked for each intermediate node in path order.
  std::vector<NodeId> route(NodeId start, std::uint64_t key,
                            const std::function<void(NodeId)>& per_hop = {}) const;

 private:
  NodeId successor_of_point(std::uint64_t point) const;    // first id clockwise from point (inclusive)
  NodeId predecessor_of_point(std::uint64_t point) const;  // first id counter-clockwise (inclusive)

  std::vector<NodeId> ids_;
  std::size_t successor_count_;
  std::unordered_map<NodeId, RoutingTable> tables_;
};

}  // namespace disco::overlay
