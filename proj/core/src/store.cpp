#include "disco/store.hpp"

#include <algorithm>

#include "disco/error.hpp"
#include "disco/hash.hpp"

namespace disco::store {

namespace {

// Closed interval over values of one type; nullopt bound means unbounded.
struct Interval {
  std::optional<Value> lo;
  std::optional<Value> hi;
};

Interval interval_of(const FilterConstraint& c) {
  switch (c.kind) {
    case FilterKind::kLower: return {c.lower, std::nullopt};
    case FilterKind::kUpper: return {std::nullopt, c.upper};
    case FilterKind::kRange: return {c.lower, c.upper};
    case FilterKind::kExact: return {c.lower, c.lower};
    case FilterKind::kPrefix: {
      const auto& p = std::get<Ipv4Prefix>(c.lower);
      Ipv4Addr first{p.addr.v & p.mask()};
      Ipv4Addr last{first.v | ~p.mask()};
      return {Value{first}, Value{last}};
    }
  }
  return {};
}

bool overlaps(const FilterConstraint& a, const FilterConstraint& b) {
  auto ia = interval_of(a);
  auto ib = interval_of(b);
  try {
    if (ia.lo && ib.hi && compare_values(*ia.lo, *ib.hi) == std::partial_ordering::greater) return false;
    if (ib.lo && ia.hi && compare_values(*ib.lo, *ia.hi) == std::partial_ordering::greater) return false;
  } catch (const Error&) {
    return true;  // incomparable bounds: cannot rule out an overlap
  }
  return true;
}

}  // namespace

EntryKey key_of(const DwsEntry& e) {
  return EntryKey{e.record.issuer, e.record.template_id, to_us(e.meta.period_start), values_digest(e.record, *e.tmpl)};
}

void LookupQuery::validate() const {
  if (from > to) throw Error(ErrorCode::kInvalidSpec, "lookup time range is reversed");
  for (const auto& c : attr_ranges) c.validate();
}

bool query_matches(const LookupQuery& q, const DwsEntry& e, const FlowKeySchema& schema) {
  if (!q.event_pattern.matches(e.record.event_id)) return false;
  if (e.timestamp() < q.from || e.timestamp() > q.to) return false;
  try {
    return eval_filter(e.record, *e.tmpl, q.attr_ranges, schema);
  } catch (const Error& err) {
    if (err.code() == ErrorCode::kMissingAttribute || err.code() == ErrorCode::kTypeMismatch) return false;
    throw;
  }
}

void RetentionPolicy::validate() const {
  auto neg = [](Duration d) { return d.count() < 0; };
  if (neg(base_ttl) || neg(per_lookup_bonus) || neg(per_subscriber_bonus))
    throw Error(ErrorCode::kInvalidSpec, "retention durations must be non-negative");
  for (const auto& [tag, d] : per_tag_bonus)
    if (neg(d)) throw Error(ErrorCode::kInvalidSpec, "retention durations must be non-negative");
}

Duration RetentionPolicy::tag_bonus(ConceptId tag) const {
  auto it = per_tag_bonus.find(tag);
  return it == per_tag_bonus.end() ? Duration{0} : it->second;
}

SimTime RetentionPolicy::initial_expiry(const DwsEntry& e, SimTime now) const {
  Duration life = base_ttl + per_subscriber_bonus * e.subscribers;
  for (auto tag : e.tags) life += tag_bonus(tag);
  // expires_at must lie strictly after insertion
  if (life.count() <= 0) life = Duration{1};
  return now + life;
}

std::int64_t PartitionScheme::bucket(SimTime t) const {
  auto us = to_us(t);
  auto w = bucket_width.count();
  return us >= 0 ? us / w : -((-us + w - 1) / w);
}

std::uint64_t PartitionScheme::key(ConceptId event, std::int64_t bucket) const {
  std::uint64_t family = event.value >> 16;
  std::uint64_t folded = (family << 16) | (static_cast<std::uint64_t>(bucket) & 0xFFFF);
  return hash_combine(seed, folded);
}

bool DwsShard::insert(DwsEntry entry, SimTime now, const RetentionPolicy& policy) {
  auto key = key_of(entry);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    entry.inserted_at = now;
    entry.expires_at = policy.initial_expiry(entry, now);
    entries_.emplace(key, std::move(entry));
    return true;
  }
  auto& existing = it->second;
  for (auto tag : entry.tags)
    if (existing.tags.insert(tag).second) existing.expires_at += policy.tag_bonus(tag);
  return false;
}

std::vector<DwsEntry> DwsShard::lookup(const LookupQuery& q, SimTime now, const RetentionPolicy& policy,
                                       const FlowKeySchema& schema) {
  std::vector<DwsEntry> out;
  for (auto& [key, e] : entries_) {
    if (e.expires_at <= now) continue;
    if (!query_matches(q, e, schema)) continue;
    ++e.lookup_count;
    e.expires_at += policy.per_lookup_bonus;
    out.push_back(e);
  }
  return out;
}

std::size_t DwsShard::sweep(SimTime now) {
  return std::erase_if(entries_, [now](const auto& kv) { return kv.second.expires_at <= now; });
}

const DwsEntry* DwsShard::find(const EntryKey& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

Dws::Dws(const overlay::Overlay& overlay, const FlowKeySchema& schema, PartitionScheme partition,
         RetentionPolicy retention)
    : overlay_(overlay), schema_(schema), partition_(partition), retention_(std::move(retention)) {
  if (partition_.bucket_width.count() <= 0) throw Error(ErrorCode::kInvalidSpec, "bucket width must be positive");
  retention_.validate();
}

NodeId Dws::owner_of(const DwsEntry& e) const { return overlay_.owner(partition_.key(e)); }

std::vector<NodeId> Dws::owners_for(const LookupQuery& q) const {
  SimTime last = q.to;
  if (last < q.from) return {};
  auto b0 = partition_.bucket(q.from);
  auto b1 = partition_.bucket(last);

  std::vector<std::uint32_t> families;
  if (q.event_pattern.prefix_bits >= 16) {
    families.push_back(q.event_pattern.id.value >> 16);
  } else if (q.event_pattern.prefix_bits == 8) {
    for (std::uint32_t second = 0; second < 256; ++second)
      families.push_back((q.event_pattern.id.value >> 16) | second);
  } else {
    return overlay_.nodes();
  }

  auto combos = static_cast<std::uint64_t>(b1 - b0 + 1) * families.size();
  if (combos > overlay_.size()) return overlay_.nodes();

  std::set<NodeId> owners;
  for (auto fam : families)
    for (auto b = b0; b <= b1; ++b) owners.insert(overlay_.owner(partition_.key(ConceptId{fam << 16}, b)));
  return {owners.begin(), owners.end()};
}

const DwsShard* Dws::find_shard(NodeId node) const {
  auto it = shards_.find(node);
  return it == shards_.end() ? nullptr : &it->second;
}

bool Dws::insert(DwsEntry e, SimTime now) {
  auto owner = owner_of(e);
  e.owner = owner;
  return shards_[owner].insert(std::move(e), now, retention_);
}

std::vector<DwsEntry> Dws::lookup(const LookupQuery& q, SimTime now) {
  q.validate();
  std::vector<DwsEntry> out;
  for (auto node : owners_for(q)) {
    auto it = shards_.find(node);
    if (it == shards_.end()) continue;
    out = merge_results(std::move(out), it->second.lookup(q, now, retention_, schema_));
  }
  return out;
}

std::size_t Dws::sweep(SimTime now) {
  std::size_t n = 0;
  for (auto& [node, shard] : shards_) n += shard.sweep(now);
  return n;
}

std::size_t Dws::size() const {
  std::size_t n = 0;
  for (const auto& [node, shard] : shards_) n += shard.size();
  return n;
}

std::vector<DwsEntry> merge_results(std::vector<DwsEntry> a, std::vector<DwsEntry> b) {
  std::map<std::pair<std::int64_t, EntryKey>, DwsEntry> merged;
  for (auto* src : {&a, &b})
    for (auto& e : *src) {
      auto k = key_of(e);
      merged.try_emplace({k.publish_us, k}, std::move(e));
    }
  std::vector<DwsEntry> out;
  out.reserve(merged.size());
  for (auto& [k, e] : merged) out.push_back(std::move(e));
  return out;
}

bool LegacyIndirection::intersects(const LookupQuery& q) const {
  if (!coverage_pattern.covers(q.event_pattern) && !q.event_pattern.covers(coverage_pattern)) return false;
  for (const auto& cov : coverage_ranges) {
    bool constrained = false;
    bool any = false;
    for (const auto& c : q.attr_ranges) {
      if (c.attr != cov.attr) continue;
      constrained = true;
      if (overlaps(cov, c)) any = true;
    }
    if (constrained && !any) return false;
  }
  return true;
}

std::vector<DwsEntry> LookupProxy::legacy_lookup(const LookupQuery& q) const {
  std::vector<DwsEntry> out;
  for (const auto& ind : indirections_) {
    if (!ind.intersects(q)) continue;
    auto part = ind.provider(q);
    std::vector<DwsEntry> kept;
    for (auto& e : part)
      if (query_matches(q, e, dws_.schema())) kept.push_back(std::move(e));
    out = merge_results(std::move(out), std::move(kept));
  }
  return out;
}

LookupProxy::Result LookupProxy::lookup(const LookupQuery& q, SimTime now) {
  Result r;
  r.entries = dws_.lookup(q, now);
  for (const auto& ind : indirections_) {
    if (!ind.intersects(q)) continue;
    try {
      auto part = ind.provider(q);
      std::vector<DwsEntry> kept;
      for (auto& e : part)
        if (query_matches(q, e, dws_.schema())) kept.push_back(std::move(e));
      r.entries = merge_results(std::move(r.entries), std::move(kept));
    } catch (const Error& err) {
      if (err.code() != ErrorCode::kProviderUnavailable) throw;
      r.unavailable.push_back(ind.name);
    }
  }
  return r;
}

void LookupProxy::reply(const DwsEntry& result, std::span<const ConceptId> tags, SimTime now) {
  DwsEntry copy = result;
  copy.tags.insert(tags.begin(), tags.end());
  dws_.insert(std::move(copy), now);
}

}  // namespace disco::store
