#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <deque>
#include <memory>
#include <set>
#include <span>
#include <vector>

#include "disco/aggregation.hpp"
#include "disco/events.hpp"
#include "disco/time.hpp"

namespace disco {

/// 256-bit Bloom superposition of link identifiers (z-Filter).
class ZFilter {
 public:
  static constexpr std::size_t kWidth = 256;

  void set(std::size_t bit) { words_[bit / 64] |= std::uint64_t{1} << (bit % 64); }
  bool test(std::size_t bit) const { return (words_[bit / 64] >> (bit % 64)) & 1u; }
  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool empty() const { return popcount() == 0; }
  /// True when every bit of `sub` is also set here.
  bool contains(const ZFilter& sub) const {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if ((words_[i] & sub.words_[i]) != sub.words_[i]) return false;
    return true;
  }

  ZFilter& operator|=(const ZFilter& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }
  friend ZFilter operator|(ZFilter a, const ZFilter& b) { return a |= b; }
  bool operator==(const ZFilter&) const = default;

  /// 32 bytes, bit 0 is the most significant bit of the first byte.
  void encode(wire::Writer& w) const;
  static ZFilter decode(wire::Reader& r);

 private:
  std::array<std::uint64_t, kWidth / 64> words_{};
};

/// Directed link between two pub/sub members, in event-flow direction.
struct LinkId {
  NodeId upstream = 0;
  NodeId downstream = 0;
  auto operator<=>(const LinkId&) const = default;
};

/// Link filter H(L): exactly `k` distinct bit positions derived from the
/// link and a deployment-wide seed.
ZFilter link_filter(LinkId link, std::uint64_t seed, int k = 4);

/// z-Filter of a message after it crosses `link`.
inline ZFilter stamp_forward(const ZFilter& z, LinkId link, std::uint64_t seed, int k = 4) {
  return z | link_filter(link, seed, k);
}

/// Upstream neighbours a reply at `self` must be forwarded to: those whose
/// link into `self` is fully contained in `z`.
std::vector<NodeId> reverse_next_hops(NodeId self, std::span<const NodeId> upstream_neighbours, const ZFilter& z,
                                      std::uint64_t seed, int k = 4);

/// Annotation request travelling back along the paths of an aggregate.
struct ReplyMessage {
  ConceptId event_id;
  std::vector<FilterConstraint> constraints;
  SimTime from{};
  SimTime to{};
  std::vector<ConceptId> tags;
  ZFilter zfilter;

  void validate() const;  // InvalidSpec when from > to
  bool operator==(const ReplyMessage&) const = default;
};

// 0x06 | eventId(4) | zfilter(32) | timeFrom(8) | timeTo(8) | tagCount(1) | tags(4 each) | constraint block
wire::Bytes encode_reply(const ReplyMessage& r);
ReplyMessage decode_reply(std::span<const std::uint8_t> bytes);

/// One event held in a node's local temporary storage.
struct LtsEntry {
  std::uint64_t seq = 0;
  EventRecord record;
  AggregateMeta meta;
  std::shared_ptr<const Template> tmpl;
  ZFilter zfilter;
  SimTime forwarded_at{};
  std::set<ConceptId> tags;
};

/// Circular buffer of recently forwarded events that replies match
/// against. Entries expire `ttl` after they were stored; on overflow the
/// oldest entry is evicted.
class LtsBuffer {
 public:
  LtsBuffer(std::size_t capacity, Duration ttl) : capacity_(capacity), ttl_(ttl) {}

  void append(EventRecord record, AggregateMeta meta, std::shared_ptr<const Template> tmpl, ZFilter z, SimTime now);
  void expire(SimTime now);

  /// Live entries with the reply's event id whose aggregation period
  /// overlaps the reply's time range and whose values satisfy its
  /// constraints. Entries lacking a constrained attribute do not match.
  std::vector<LtsEntry*> match(const ReplyMessage& reply, SimTime now, const FlowKeySchema& schema);

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  Duration ttl() const { return ttl_; }
  std::uint64_t evicted() const { return evicted_; }
  const std::deque<LtsEntry>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  Duration ttl_;
  std::deque<LtsEntry> entries_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t evicted_ = 0;
};

/// Adds `tags` to the matched entries. Returns the entries that gained at
/// least one tag; each of them is due for exactly one election to storage.
std::vector<const LtsEntry*> annotate(std::span<LtsEntry* const> entries, std::span<const ConceptId> tags);

}  // namespace disco
