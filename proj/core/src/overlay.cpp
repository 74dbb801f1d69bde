#include "disco/overlay.hpp"

#include <algorithm>

#include "disco/error.hpp"

namespace disco::overlay {

Overlay::Overlay(std::vector<NodeId> ids, std::size_t successor_count)
    : ids_(std::move(ids)), successor_count_(successor_count) {
  std::sort(ids_.begin(), ids_.end());
  if (std::adjacent_find(ids_.begin(), ids_.end()) != ids_.end())
    throw Error(ErrorCode::kInvalidSpec, "duplicate overlay node id");
  if (ids_.empty()) throw Error(ErrorCode::kInvalidSpec, "overlay needs at least one node");

  const std::size_t n = ids_.size();
  const std::size_t neighbours = std::min(successor_count_, n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    NodeId self = ids_[i];
    RoutingTable t;
    for (std::size_t k = 1; k <= neighbours; ++k) {
      t.successors.push_back(ids_[(i + k) % n]);
      t.predecessors.push_back(ids_[(i + n - k) % n]);
    }
    for (int bit = 0; bit < 64; ++bit) {
      std::uint64_t step = std::uint64_t{1} << bit;
      for (NodeId f : {successor_of_point(self + step), predecessor_of_point(self - step)}) {
        if (f != self && std::find(t.fingers.begin(), t.fingers.end(), f) == t.fingers.end())
          t.fingers.push_back(f);
      }
    }
    tables_.emplace(self, std::move(t));
  }
}

const RoutingTable& Overlay::table(NodeId id) const {
  auto it = tables_.find(id);
  if (it == tables_.end()) throw Error(ErrorCode::kUnknownNode, "node not in overlay");
  return it->second;
}

NodeId Overlay::successor_of_point(std::uint64_t point) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), point);
  return it == ids_.end() ? ids_.front() : *it;
}

NodeId Overlay::predecessor_of_point(std::uint64_t point) const {
  auto it = std::upper_bound(ids_.begin(), ids_.end(), point);
  return it == ids_.begin() ? ids_.back() : *std::prev(it);
}

NodeId Overlay::owner(std::uint64_t key) const {
  NodeId a = successor_of_point(key);
  NodeId b = predecessor_of_point(key);
  return closer(a, b, key) ? a : b;
}

std::optional<NodeId> Overlay::next_hop(NodeId at, std::uint64_t key) const {
  const auto& t = table(at);
  NodeId best = at;
  auto consider = [&](NodeId cand) {
    if (closer(cand, best, key)) best = cand;
  };
  for (NodeId c : t.successors) consider(c);
  for (NodeId c : t.predecessors) consider(c);
  for (NodeId c : t.fingers) consider(c);
  if (best == at) return std::nullopt;
  return best;
}

std::vector<NodeId> Overlay::route(NodeId start, std::uint64_t key, const std::function<void(NodeId)>& per_hop) const {
  std::vector<NodeId> path{start};
  NodeId at = start;
  while (auto next = next_hop(at, key)) {
    at = *next;
    path.push_back(at);
  }
  if (per_hop)
    for (std::size_t i = 1; i + 1 < path.size(); ++i) per_hop(path[i]);
  return path;
}

}  // namespace disco::overlay
