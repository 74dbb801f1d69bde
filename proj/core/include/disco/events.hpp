#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "disco/time.hpp"
#include "disco/vocabulary.hpp"
#include "disco/wire.hpp"

namespace disco {

using NodeId = std::uint64_t;

enum class AttrType : std::uint8_t {
  kCounter64 = 1,
  kGauge64 = 2,
  kFloat64 = 3,
  kTimestamp = 4,
  kIpv4Addr = 5,
  kIpv4Prefix = 6,
  kFlowKey = 7,
  kNodeLoc = 8,
};

std::string_view to_string(AttrType t);
/// Fixed encoded width in bytes.
std::size_t encoded_width(AttrType t);

struct Counter {
  std::uint64_t v = 0;
  auto operator<=>(const Counter&) const = default;
};
struct Gauge {
  std::int64_t v = 0;
  auto operator<=>(const Gauge&) const = default;
};
struct Float {
  double v = 0.0;
  auto operator<=>(const Float&) const = default;
};
struct Timestamp {
  std::int64_t us = 0;  // microseconds since the simulation epoch
  auto operator<=>(const Timestamp&) const = default;
};
struct Ipv4Addr {
  std::uint32_t v = 0;
  auto operator<=>(const Ipv4Addr&) const = default;
};
struct Ipv4Prefix {
  Ipv4Addr addr;
  std::uint8_t length = 0;

  std::uint32_t mask() const { return length == 0 ? 0u : ~0u << (32 - length); }
  bool contains(Ipv4Addr a) const { return (a.v & mask()) == (addr.v & mask()); }
  auto operator<=>(const Ipv4Prefix&) const = default;
};
struct FlowKey {
  Ipv4Addr src;
  Ipv4Addr dst;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t proto = 0;
  auto operator<=>(const FlowKey&) const = default;
};
struct NodeLoc {
  NodeId node = 0;
  auto operator<=>(const NodeLoc&) const = default;
};

/// Typed attribute value; alternative index + 1 equals the AttrType tag.
using Value = std::variant<Counter, Gauge, Float, Timestamp, Ipv4Addr, Ipv4Prefix, FlowKey, NodeLoc>;

inline AttrType type_of(const Value& v) { return static_cast<AttrType>(v.index() + 1); }
/// Zero value of the given type.
Value zero_value(AttrType t);
std::string to_string(const Value& v);

Ipv4Addr parse_ipv4(std::string_view dotted);      // throws InvalidSpec
Ipv4Prefix parse_prefix(std::string_view cidr);   // "4.2.0.0/16"
std::string to_string(Ipv4Addr a);
std::string to_string(const Ipv4Prefix& p);

struct TemplateField {
  ConceptId attr;
  AttrType type;
  auto operator<=>(const TemplateField&) const = default;
};

/// IPFIX-style format descriptor. The field order defines the value order
/// of every data message that references it.
struct Template {
  NodeId issuer = 0;
  std::uint16_t template_id = 0;
  ConceptId event_id;
  std::vector<TemplateField> fields;

  std::optional<std::size_t> index_of(ConceptId attr) const;
  bool operator==(const Template&) const = default;
};

struct EventRecord {
  ConceptId event_id;
  std::uint16_t template_id = 0;
  NodeId issuer = 0;
  std::vector<Value> values;

  bool operator==(const EventRecord&) const = default;
};

/// Aggregation context carried with every in-tree data message.
struct AggregateMeta {
  std::uint32_t base_count = 1;
  SimTime period_start{};
  SimTime period_end{};

  bool operator==(const AggregateMeta&) const = default;
};

/// Message kind tags shared by every DISco message.
enum class MsgKind : std::uint8_t {
  kSubscribe = 0x01,
  kTemplate = 0x02,
  kData = 0x03,
  kNoSubscriber = 0x04,
  kSubscribersReady = 0x05,
  kReply = 0x06,
  kLookup = 0x07,
  kLookupResult = 0x08,
  kStore = 0x09,
};

// Template: kind(1) | issuer(8) | templateId(2) | eventId(4) | fieldCount(2)
//           | fieldCount x (attrId(4) | typeTag(1))
wire::Bytes encode_template(const Template& t);
Template decode_template(std::span<const std::uint8_t> bytes);
std::size_t template_size(const Template& t);

// Data: kind(1) | issuer(8) | templateId(2) | eventId(4) | values
// Aggregated data inserts baseCount(4) | periodStart(8) | periodEnd(8) before values.
wire::Bytes encode_event(const EventRecord& e, const Template& t);
EventRecord decode_event(std::span<const std::uint8_t> bytes, const Template& t);
wire::Bytes encode_aggregate(const EventRecord& e, const AggregateMeta& meta, const Template& t);
std::pair<EventRecord, AggregateMeta> decode_aggregate(std::span<const std::uint8_t> bytes, const Template& t);
std::size_t event_size(const Template& t);
std::size_t aggregate_size(const Template& t);

/// Throws TemplateMismatch unless count and types of e.values follow t.
void check_conforms(const EventRecord& e, const Template& t);

void encode_value(wire::Writer& w, const Value& v);
Value decode_value(wire::Reader& r, AttrType t);
AttrType decode_type_tag(std::uint8_t tag);  // throws UnknownTypeTag

/// 64-bit digest of the encoded values, used for storage idempotence.
std::uint64_t values_digest(const EventRecord& e, const Template& t);

enum class FlowField { kSrcAddr, kDstAddr, kSrcPort, kDstPort, kProto };

/// Schema of the compound flow key, known to every peer so that filters can
/// name individual components ("attribute.flow.rfc791-destination-address").
class FlowKeySchema {
 public:
  static constexpr std::string_view kBase = "attribute.flow";

  /// Registers the flow attribute and its components in `vocab`.
  static FlowKeySchema register_in(VocabularyTree& vocab);

  ConceptId base() const { return base_; }
  ConceptId component_id(FlowField f) const;
  bool is_component(ConceptId id) const { return components_.contains(id.value); }
  /// Throws UnknownComponent for ids not registered as a component.
  Value extract(const FlowKey& key, ConceptId component) const;
  /// Type a component extracts to.
  AttrType component_type(ConceptId component) const;

 private:
  ConceptId base_;
  std::map<std::uint32_t, FlowField> components_;
};

}  // namespace disco
