#include "disco/simnet.hpp"

#include <cstdio>
#include <ostream>

#include "disco/error.hpp"

namespace disco::simnet {

ActionHandle Kernel::schedule(SimTime at, std::function<void()> action) {
  if (at < now_)
    throw Error(ErrorCode::kSchedulePast,
                "at=" + std::to_string(to_us(at)) + "us is before now=" + std::to_string(to_us(now_)) + "us");
  auto seq = next_seq_++;
  queue_.push({at, seq});
  actions_.emplace(seq, std::move(action));
  ++live_;
  return seq;
}

bool Kernel::cancel(ActionHandle handle) {
  if (actions_.erase(handle) == 0) return false;
  --live_;
  return true;
}

bool Kernel::step(SimTime until) {
  while (!queue_.empty()) {
    auto top = queue_.top();
    if (top.at > until) return false;
    queue_.pop();
    auto it = actions_.find(top.seq);
    if (it == actions_.end()) continue;  // cancelled
    auto action = std::move(it->second);
    actions_.erase(it);
    --live_;
    now_ = top.at;
    ++executed_;
    action();
    return true;
  }
  return false;
}

void Kernel::run(SimTime until) {
  while (step(until)) {
  }
  if (live_ > 0 && until > now_) now_ = until;
}

void Kernel::run() {
  while (step(kSimTimeMax)) {
  }
}

void Kernel::trace(NodeId node, std::string_view kind, std::string_view detail) {
  if (!trace_) return;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%lld\t%016llx\t", static_cast<long long>(to_us(now_)),
                static_cast<unsigned long long>(node));
  *trace_ << buf << kind << '\t' << detail << '\n';
}

Network::Network(Kernel& kernel, LinkModel model, std::uint64_t jitter_seed)
    : kernel_(kernel), model_(model), jitter_rng_(jitter_seed) {
  if (model_.per_hop_latency.count() <= 0) throw Error(ErrorCode::kInvalidSpec, "link latency must be positive");
  if (model_.jitter.count() < 0) throw Error(ErrorCode::kInvalidSpec, "jitter must be non-negative");
}

void Network::send(NodeId src, NodeId dst, std::size_t bytes, std::function<void()> on_deliver) {
  if (!has_node(src)) throw Error(ErrorCode::kUnknownNode, "source node not in network");
  if (!has_node(dst)) throw Error(ErrorCode::kUnknownNode, "destination node not in network");
  if (src == dst) {
    kernel_.schedule(kernel_.now(), std::move(on_deliver));
    return;
  }
  Duration delay = model_.per_hop_latency;
  if (model_.jitter.count() > 0) {
    auto span = static_cast<std::uint64_t>(model_.jitter.count()) + 1;
    delay += Duration{static_cast<std::int64_t>(jitter_rng_() % span)};
  }
  bytes_[{src, dst}] += bytes;
  total_bytes_ += bytes;
  ++messages_;
  kernel_.schedule(kernel_.now() + delay, std::move(on_deliver));
}

std::uint64_t Network::bytes(NodeId src, NodeId dst) const {
  auto it = bytes_.find({src, dst});
  return it == bytes_.end() ? 0 : it->second;
}

}  // namespace disco::simnet
