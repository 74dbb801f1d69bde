#include "disco/events.hpp"

#include <charconv>
#include <cstdio>

#include "disco/error.hpp"
#include "disco/hash.hpp"

namespace disco {

namespace {

constexpr std::size_t kHeaderSize = 1 + 8 + 2 + 4;
constexpr std::size_t kMetaSize = 4 + 8 + 8;

void write_header(wire::Writer& w, MsgKind kind, NodeId issuer, std::uint16_t tid, ConceptId event) {
  w.u8(static_cast<std::uint8_t>(kind));
  w.u64(issuer);
  w.u16(tid);
  w.u32(event.value);
}

void expect_kind(wire::Reader& r, MsgKind kind) {
  auto k = r.u8();
  if (k != static_cast<std::uint8_t>(kind))
    throw Error(ErrorCode::kTemplateMismatch, "unexpected message kind " + std::to_string(k));
}

EventRecord read_values(wire::Reader& r, EventRecord e, const Template& t) {
  e.values.reserve(t.fields.size());
  for (const auto& f : t.fields) e.values.push_back(decode_value(r, f.type));
  if (r.remaining() != 0)
    throw Error(ErrorCode::kTemplateMismatch, "data carries more values than its template declares");
  return e;
}

EventRecord read_event_header(wire::Reader& r, const Template& t) {
  EventRecord e;
  e.issuer = r.u64();
  e.template_id = r.u16();
  e.event_id = ConceptId{r.u32()};
  if (e.template_id != t.template_id || e.issuer != t.issuer)
    throw Error(ErrorCode::kTemplateMismatch, "data references a different template");
  return e;
}

}  // namespace

std::string_view to_string(AttrType t) {
  switch (t) {
    case AttrType::kCounter64: return "COUNTER64";
    case AttrType::kGauge64: return "GAUGE64";
    case AttrType::kFloat64: return "FLOAT64";
    case AttrType::kTimestamp: return "TIMESTAMP";
    case AttrType::kIpv4Addr: return "IPV4ADDR";
    case AttrType::kIpv4Prefix: return "IPV4PREFIX";
    case AttrType::kFlowKey: return "FLOWKEY";
    case AttrType::kNodeLoc: return "NODELOC";
  }
  return "?";
}

std::size_t encoded_width(AttrType t) {
  switch (t) {
    case AttrType::kCounter64:
    case AttrType::kGauge64:
    case AttrType::kFloat64:
    case AttrType::kTimestamp:
    case AttrType::kNodeLoc: return 8;
    case AttrType::kIpv4Addr: return 4;
    case AttrType::kIpv4Prefix: return 5;
    case AttrType::kFlowKey: return 13;
  }
  return 0;
}

AttrType decode_type_tag(std::uint8_t tag) {
  if (tag < 1 || tag > 8) throw Error(ErrorCode::kUnknownTypeTag, "type tag " + std::to_string(tag));
  return static_cast<AttrType>(tag);
}

Value zero_value(AttrType t) {
  switch (t) {
    case AttrType::kCounter64: return Counter{};
    case AttrType::kGauge64: return Gauge{};
    case AttrType::kFloat64: return Float{};
    case AttrType::kTimestamp: return Timestamp{};
    case AttrType::kIpv4Addr: return Ipv4Addr{};
    case AttrType::kIpv4Prefix: return Ipv4Prefix{};
    case AttrType::kFlowKey: return FlowKey{};
    case AttrType::kNodeLoc: return NodeLoc{};
  }
  throw Error(ErrorCode::kUnknownTypeTag, "bad AttrType");
}

Ipv4Addr parse_ipv4(std::string_view s) {
  std::uint32_t v = 0;
  const char* p = s.data();
  const char* end = s.data() + s.size();
  for (int i = 0; i < 4; ++i) {
    unsigned octet = 0;
    auto [next, ec] = std::from_chars(p, end, octet);
    if (ec != std::errc{} || octet > 255) throw Error(ErrorCode::kInvalidSpec, "bad IPv4 address '" + std::string(s) + "'");
    v = (v << 8) | octet;
    p = next;
    if (i < 3) {
      if (p == end || *p != '.') throw Error(ErrorCode::kInvalidSpec, "bad IPv4 address '" + std::string(s) + "'");
      ++p;
    }
  }
  if (p != end) throw Error(ErrorCode::kInvalidSpec, "bad IPv4 address '" + std::string(s) + "'");
  return Ipv4Addr{v};
}

Ipv4Prefix parse_prefix(std::string_view s) {
  auto slash = s.find('/');
  if (slash == std::string_view::npos) return Ipv4Prefix{parse_ipv4(s), 32};
  unsigned len = 0;
  auto tail = s.substr(slash + 1);
  auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), len);
  if (ec != std::errc{} || ptr != tail.data() + tail.size() || len > 32)
    throw Error(ErrorCode::kInvalidSpec, "bad prefix length in '" + std::string(s) + "'");
  return Ipv4Prefix{parse_ipv4(s.substr(0, slash)), static_cast<std::uint8_t>(len)};
}

std::string to_string(Ipv4Addr a) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", a.v >> 24, (a.v >> 16) & 0xFF, (a.v >> 8) & 0xFF, a.v & 0xFF);
  return buf;
}

std::string to_string(const Ipv4Prefix& p) { return to_string(p.addr) + "/" + std::to_string(p.length); }

std::string to_string(const Value& v) {
  struct Visitor {
    std::string operator()(Counter c) const { return std::to_string(c.v); }
    std::string operator()(Gauge g) const { return std::to_string(g.v); }
    std::string operator()(Float f) const { return std::to_string(f.v); }
    std::string operator()(Timestamp t) const { return std::to_string(t.us) + "us"; }
    std::string operator()(Ipv4Addr a) const { return disco::to_string(a); }
    std::string operator()(const Ipv4Prefix& p) const { return disco::to_string(p); }
    std::string operator()(const FlowKey& k) const {
      return disco::to_string(k.src) + ":" + std::to_string(k.src_port) + ">" + disco::to_string(k.dst) + ":" +
             std::to_string(k.dst_port) + "/" + std::to_string(k.proto);
    }
    std::string operator()(NodeLoc n) const {
      char buf[24];
      std::snprintf(buf, sizeof buf, "node:%016llx", static_cast<unsigned long long>(n.node));
      return buf;
    }
  };
  return std::visit(Visitor{}, v);
}

std::optional<std::size_t> Template::index_of(ConceptId attr) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].attr == attr) return i;
  return std::nullopt;
}

void encode_value(wire::Writer& w, const Value& v) {
  struct Visitor {
    wire::Writer& w;
    void operator()(Counter c) const { w.u64(c.v); }
    void operator()(Gauge g) const { w.i64(g.v); }
    void operator()(Float f) const { w.f64(f.v); }
    void operator()(Timestamp t) const { w.i64(t.us); }
    void operator()(Ipv4Addr a) const { w.u32(a.v); }
    void operator()(const Ipv4Prefix& p) const {
      w.u32(p.addr.v);
      w.u8(p.length);
    }
    void operator()(const FlowKey& k) const {
      w.u32(k.src.v);
      w.u32(k.dst.v);
      w.u16(k.src_port);
      w.u16(k.dst_port);
      w.u8(k.proto);
    }
    void operator()(NodeLoc n) const { w.u64(n.node); }
  };
  std::visit(Visitor{w}, v);
}

Value decode_value(wire::Reader& r, AttrType t) {
  switch (t) {
    case AttrType::kCounter64: return Counter{r.u64()};
    case AttrType::kGauge64: return Gauge{r.i64()};
    case AttrType::kFloat64: return Float{r.f64()};
    case AttrType::kTimestamp: return Timestamp{r.i64()};
    case AttrType::kIpv4Addr: return Ipv4Addr{r.u32()};
    case AttrType::kIpv4Prefix: {
      Ipv4Prefix p;
      p.addr = Ipv4Addr{r.u32()};
      p.length = r.u8();
      return p;
    }
    case AttrType::kFlowKey: {
      FlowKey k;
      k.src = Ipv4Addr{r.u32()};
      k.dst = Ipv4Addr{r.u32()};
      k.src_port = r.u16();
      k.dst_port = r.u16();
      k.proto = r.u8();
      return k;
    }
    case AttrType::kNodeLoc: return NodeLoc{r.u64()};
  }
  throw Error(ErrorCode::kUnknownTypeTag, "bad AttrType");
}

wire::Bytes encode_template(const Template& t) {
  wire::Bytes out;
  out.reserve(template_size(t));
  wire::Writer w(out);
  write_header(w, MsgKind::kTemplate, t.issuer, t.template_id, t.event_id);
  w.u16(static_cast<std::uint16_t>(t.fields.size()));
  for (const auto& f : t.fields) {
    w.u32(f.attr.value);
    w.u8(static_cast<std::uint8_t>(f.type));
  }
  return out;
}

Template decode_template(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  expect_kind(r, MsgKind::kTemplate);
  Template t;
  t.issuer = r.u64();
  t.template_id = r.u16();
  t.event_id = ConceptId{r.u32()};
  auto count = r.u16();
  t.fields.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    ConceptId attr{r.u32()};
    t.fields.push_back({attr, decode_type_tag(r.u8())});
  }
  return t;
}

std::size_t template_size(const Template& t) { return kHeaderSize + 2 + 5 * t.fields.size(); }

std::size_t event_size(const Template& t) {
  std::size_t n = kHeaderSize;
  for (const auto& f : t.fields) n += encoded_width(f.type);
  return n;
}

std::size_t aggregate_size(const Template& t) { return event_size(t) + kMetaSize; }

void check_conforms(const EventRecord& e, const Template& t) {
  if (e.values.size() != t.fields.size())
    throw Error(ErrorCode::kTemplateMismatch, "value count " + std::to_string(e.values.size()) +
                                                  " != template field count " + std::to_string(t.fields.size()));
  for (std::size_t i = 0; i < t.fields.size(); ++i)
    if (type_of(e.values[i]) != t.fields[i].type)
      throw Error(ErrorCode::kTemplateMismatch, "value " + std::to_string(i) + " has type " +
                                                    std::string(to_string(type_of(e.values[i]))));
}

wire::Bytes encode_event(const EventRecord& e, const Template& t) {
  check_conforms(e, t);
  wire::Bytes out;
  out.reserve(event_size(t));
  wire::Writer w(out);
  write_header(w, MsgKind::kData, e.issuer, e.template_id, e.event_id);
  for (const auto& v : e.values) encode_value(w, v);
  return out;
}

EventRecord decode_event(std::span<const std::uint8_t> bytes, const Template& t) {
  wire::Reader r(bytes);
  expect_kind(r, MsgKind::kData);
  return read_values(r, read_event_header(r, t), t);
}

wire::Bytes encode_aggregate(const EventRecord& e, const AggregateMeta& meta, const Template& t) {
  check_conforms(e, t);
  wire::Bytes out;
  out.reserve(aggregate_size(t));
  wire::Writer w(out);
  write_header(w, MsgKind::kData, e.issuer, e.template_id, e.event_id);
  w.u32(meta.base_count);
  w.i64(to_us(meta.period_start));
  w.i64(to_us(meta.period_end));
  for (const auto& v : e.values) encode_value(w, v);
  return out;
}

std::pair<EventRecord, AggregateMeta> decode_aggregate(std::span<const std::uint8_t> bytes, const Template& t) {
  wire::Reader r(bytes);
  expect_kind(r, MsgKind::kData);
  auto e = read_event_header(r, t);
  AggregateMeta meta;
  meta.base_count = r.u32();
  meta.period_start = sim_time_us(r.i64());
  meta.period_end = sim_time_us(r.i64());
  return {read_values(r, std::move(e), t), meta};
}

std::uint64_t values_digest(const EventRecord& e, const Template& t) {
  wire::Bytes out;
  wire::Writer w(out);
  check_conforms(e, t);
  for (const auto& v : e.values) encode_value(w, v);
  return fnv1a(std::span<const std::uint8_t>(out));
}

namespace {

struct ComponentName {
  FlowField field;
  std::string_view suffix;
};

constexpr ComponentName kComponents[] = {
    {FlowField::kSrcAddr, "rfc791-source-address"},
    {FlowField::kDstAddr, "rfc791-destination-address"},
    {FlowField::kSrcPort, "transport-source-port"},
    {FlowField::kDstPort, "transport-destination-port"},
    {FlowField::kProto, "rfc791-protocol"},
};

}  // namespace

FlowKeySchema FlowKeySchema::register_in(VocabularyTree& vocab) {
  FlowKeySchema schema;
  schema.base_ = vocab.add(kBase);
  for (const auto& c : kComponents) {
    auto id = vocab.add(std::string(kBase) + "." + std::string(c.suffix));
    schema.components_.emplace(id.value, c.field);
  }
  return schema;
}

ConceptId FlowKeySchema::component_id(FlowField f) const {
  for (const auto& [id, field] : components_)
    if (field == f) return ConceptId{id};
  throw Error(ErrorCode::kUnknownComponent, "flow field not registered");
}

AttrType FlowKeySchema::component_type(ConceptId component) const {
  auto it = components_.find(component.value);
  if (it == components_.end()) throw Error(ErrorCode::kUnknownComponent, to_hex(component));
  switch (it->second) {
    case FlowField::kSrcAddr:
    case FlowField::kDstAddr: return AttrType::kIpv4Addr;
    default: return AttrType::kCounter64;
  }
}

Value FlowKeySchema::extract(const FlowKey& key, ConceptId component) const {
  auto it = components_.find(component.value);
  if (it == components_.end()) throw Error(ErrorCode::kUnknownComponent, to_hex(component));
  switch (it->second) {
    case FlowField::kSrcAddr: return key.src;
    case FlowField::kDstAddr: return key.dst;
    case FlowField::kSrcPort: return Counter{key.src_port};
    case FlowField::kDstPort: return Counter{key.dst_port};
    case FlowField::kProto: return Counter{key.proto};
  }
  throw Error(ErrorCode::kUnknownComponent, to_hex(component));
}

}  // namespace disco
