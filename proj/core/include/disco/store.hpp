#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "disco/aggregation.hpp"
#include "disco/events.hpp"
#include "disco/overlay.hpp"
#include "disco/time.hpp"

namespace disco::store {

using namespace std::chrono_literals;

/// Stored event plus retention bookkeeping.
struct DwsEntry {
  EventRecord record;
  AggregateMeta meta;
  std::shared_ptr<const Template> tmpl;
  std::set<ConceptId> tags;
  SimTime inserted_at{};
  SimTime expires_at{};
  std::uint32_t lookup_count = 0;
  std::uint32_t subscribers = 0;  // subscriber-count hint at election time
  NodeId owner = 0;

  /// Time the entry is indexed and bucketed by (publication time for base events).
  SimTime timestamp() const { return meta.period_start; }
};

/// Identity used for idempotent inserts.
struct EntryKey {
  NodeId issuer = 0;
  std::uint16_t template_id = 0;
  std::int64_t publish_us = 0;
  std::uint64_t digest = 0;
  auto operator<=>(const EntryKey&) const = default;
};
EntryKey key_of(const DwsEntry& e);

struct LookupQuery {
  ConceptPattern event_pattern;
  std::vector<FilterConstraint> attr_ranges;
  SimTime from{};
  SimTime to{};

  void validate() const;  // InvalidSpec
};

/// Pattern, time range and attribute constraints all hold. Entries that do
/// not carry a constrained attribute do not match.
bool query_matches(const LookupQuery& q, const DwsEntry& e, const FlowKeySchema& schema);

struct RetentionPolicy {
  Duration base_ttl = 30s;
  std::map<ConceptId, Duration> per_tag_bonus;
  Duration per_lookup_bonus = 0s;
  Duration per_subscriber_bonus = 0s;

  void validate() const;
  Duration tag_bonus(ConceptId tag) const;
  /// Lifetime granted at first insertion.
  SimTime initial_expiry(const DwsEntry& e, SimTime now) const;
};

/// Partitioning of the working store: the owner of an entry is the overlay
/// node owning hash(top 16 bits of the event id, time bucket).
struct PartitionScheme {
  Duration bucket_width = 1s;
  std::uint64_t seed = 0x44575321;

  std::int64_t bucket(SimTime t) const;
  std::uint64_t key(ConceptId event, std::int64_t bucket) const;
  std::uint64_t key(const DwsEntry& e) const { return key(e.record.event_id, bucket(e.timestamp())); }
};

/// One node's share of the working store.
class DwsShard {
 public:
  /// Inserts, or merges tags into an existing entry with the same key.
  /// New tags extend the expiry by their bonus. Returns true for a new entry.
  bool insert(DwsEntry entry, SimTime now, const RetentionPolicy& policy);
  /// Live matching entries; each hit is counted and its lifetime extended.
  std::vector<DwsEntry> lookup(const LookupQuery& q, SimTime now, const RetentionPolicy& policy,
                               const FlowKeySchema& schema);
  /// Removes entries with expires_at <= now; returns the number removed.
  std::size_t sweep(SimTime now);

  std::size_t size() const { return entries_.size(); }
  const std::map<EntryKey, DwsEntry>& entries() const { return entries_; }
  const DwsEntry* find(const EntryKey& key) const;

 private:
  std::map<EntryKey, DwsEntry> entries_;
};

/// Distributed Working Storage: the set of shards plus the partition
/// function that places entries and fans queries out.
class Dws {
 public:
  Dws(const overlay::Overlay& overlay, const FlowKeySchema& schema, PartitionScheme partition = {},
      RetentionPolicy retention = {});

  NodeId owner_of(const DwsEntry& e) const;
  /// Owners of every (event family, bucket) pair the query can touch;
  /// falls back to all nodes when that set would be larger.
  std::vector<NodeId> owners_for(const LookupQuery& q) const;

  DwsShard& shard(NodeId node) { return shards_[node]; }
  const DwsShard* find_shard(NodeId node) const;

  /// Direct (non-messaged) variants, used by the lookup proxy and tests.
  bool insert(DwsEntry e, SimTime now);
  std::vector<DwsEntry> lookup(const LookupQuery& q, SimTime now);
  std::size_t sweep(SimTime now);
  std::size_t size() const;

  const PartitionScheme& partition() const { return partition_; }
  const RetentionPolicy& retention() const { return retention_; }
  const FlowKeySchema& schema() const { return schema_; }
  const overlay::Overlay& overlay() const { return overlay_; }

 private:
  const overlay::Overlay& overlay_;
  const FlowKeySchema& schema_;
  PartitionScheme partition_;
  RetentionPolicy retention_;
  std::unordered_map<NodeId, DwsShard> shards_;
};

/// Merges results of several stores, first occurrence of a key wins, in
/// ascending (timestamp, key) order.
std::vector<DwsEntry> merge_results(std::vector<DwsEntry> a, std::vector<DwsEntry> b);

/// Location hint for a pre-existing store (routing tables, ...) that is
/// queried in place instead of being copied into the working store.
struct LegacyIndirection {
  std::string name;
  ConceptPattern coverage_pattern;
  std::vector<FilterConstraint> coverage_ranges;
  /// May throw Error(ProviderUnavailable).
  std::function<std::vector<DwsEntry>(const LookupQuery&)> provider;

  bool intersects(const LookupQuery& q) const;
};

/// Front end that answers lookups from the working store and follows
/// legacy indirections transparently.
class LookupProxy {
 public:
  explicit LookupProxy(Dws& dws) : dws_(dws) {}

  void add_indirection(LegacyIndirection ind) { indirections_.push_back(std::move(ind)); }

  struct Result {
    std::vector<DwsEntry> entries;
    std::vector<std::string> unavailable;  // providers that failed
  };
  Result lookup(const LookupQuery& q, SimTime now);

  /// Queries only the covering legacy providers. Throws ProviderUnavailable
  /// if one fails.
  std::vector<DwsEntry> legacy_lookup(const LookupQuery& q) const;

  /// Copies a (legacy) result into the working store with `tags`.
  void reply(const DwsEntry& result, std::span<const ConceptId> tags, SimTime now);

 private:
  Dws& dws_;
  std::vector<LegacyIndirection> indirections_;
};

}  // namespace disco::store
