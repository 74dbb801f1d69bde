#include "disco/reply.hpp"

#include <algorithm>

#include "disco/error.hpp"
#include "disco/hash.hpp"

namespace disco {

void ZFilter::encode(wire::Writer& w) const {
  for (std::size_t byte = 0; byte < kWidth / 8; ++byte) {
    std::uint8_t b = 0;
    for (std::size_t bit = 0; bit < 8; ++bit)
      if (test(byte * 8 + bit)) b |= static_cast<std::uint8_t>(0x80u >> bit);
    w.u8(b);
  }
}

ZFilter ZFilter::decode(wire::Reader& r) {
  ZFilter z;
  auto raw = r.raw(kWidth / 8);
  for (std::size_t byte = 0; byte < raw.size(); ++byte)
    for (std::size_t bit = 0; bit < 8; ++bit)
      if (raw[byte] & (0x80u >> bit)) z.set(byte * 8 + bit);
  return z;
}

ZFilter link_filter(LinkId link, std::uint64_t seed, int k) {
  ZFilter z;
  std::uint64_t h = hash_combine(hash_combine(seed, link.upstream), link.downstream);
  int placed = 0;
  while (placed < k) {
    h = mix64(h);
    auto bit = static_cast<std::size_t>(h % ZFilter::kWidth);
    if (z.test(bit)) continue;  // rehash until k distinct positions
    z.set(bit);
    ++placed;
  }
  return z;
}

std::vector<NodeId> reverse_next_hops(NodeId self, std::span<const NodeId> upstream_neighbours, const ZFilter& z,
                                      std::uint64_t seed, int k) {
  std::vector<NodeId> out;
  for (NodeId up : upstream_neighbours)
    if (z.contains(link_filter({up, self}, seed, k))) out.push_back(up);
  return out;
}

void ReplyMessage::validate() const {
  if (from > to) throw Error(ErrorCode::kInvalidSpec, "reply time range is reversed");
  for (const auto& c : constraints) c.validate();
}

wire::Bytes encode_reply(const ReplyMessage& r) {
  wire::Bytes out;
  wire::Writer w(out);
  w.u8(static_cast<std::uint8_t>(MsgKind::kReply));
  w.u32(r.event_id.value);
  r.zfilter.encode(w);
  w.i64(to_us(r.from));
  w.i64(to_us(r.to));
  w.u8(static_cast<std::uint8_t>(r.tags.size()));
  for (auto tag : r.tags) w.u32(tag.value);
  encode_constraints(w, r.constraints);
  return out;
}

ReplyMessage decode_reply(std::span<const std::uint8_t> bytes) {
  wire::Reader rd(bytes);
  if (rd.u8() != static_cast<std::uint8_t>(MsgKind::kReply))
    throw Error(ErrorCode::kTemplateMismatch, "not a REPLY message");
  ReplyMessage r;
  r.event_id = ConceptId{rd.u32()};
  r.zfilter = ZFilter::decode(rd);
  r.from = sim_time_us(rd.i64());
  r.to = sim_time_us(rd.i64());
  auto tags = rd.u8();
  for (std::uint8_t i = 0; i < tags; ++i) r.tags.push_back(ConceptId{rd.u32()});
  r.constraints = decode_constraints(rd);
  return r;
}

void LtsBuffer::append(EventRecord record, AggregateMeta meta, std::shared_ptr<const Template> tmpl, ZFilter z,
                       SimTime now) {
  expire(now);
  if (capacity_ == 0) return;
  if (entries_.size() == capacity_) {
    entries_.pop_front();
    ++evicted_;
  }
  entries_.push_back(LtsEntry{next_seq_++, std::move(record), meta, std::move(tmpl), z, now, {}});
}

void LtsBuffer::expire(SimTime now) {
  while (!entries_.empty() && entries_.front().forwarded_at + ttl_ <= now) entries_.pop_front();
}

std::vector<LtsEntry*> LtsBuffer::match(const ReplyMessage& reply, SimTime now, const FlowKeySchema& schema) {
  expire(now);
  std::vector<LtsEntry*> out;
  for (auto& e : entries_) {
    if (e.record.event_id != reply.event_id) continue;
    if (e.meta.period_end < reply.from || e.meta.period_start > reply.to) continue;
    try {
      if (!eval_filter(e.record, *e.tmpl, reply.constraints, schema)) continue;
    } catch (const Error& err) {
      if (err.code() == ErrorCode::kMissingAttribute || err.code() == ErrorCode::kTypeMismatch) continue;
      throw;
    }
    out.push_back(&e);
  }
  return out;
}

std::vector<const LtsEntry*> annotate(std::span<LtsEntry* const> entries, std::span<const ConceptId> tags) {
  std::vector<const LtsEntry*> elected;
  for (auto* e : entries) {
    bool gained = false;
    for (auto tag : tags) gained |= e->tags.insert(tag).second;
    if (gained) elected.push_back(e);
  }
  return elected;
}

}  // namespace disco
