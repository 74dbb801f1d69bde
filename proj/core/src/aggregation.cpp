#include "disco/aggregation.hpp"

#include <algorithm>

#include "disco/error.hpp"

namespace disco {

namespace {

bool is_numeric(AttrType t) {
  return t == AttrType::kCounter64 || t == AttrType::kGauge64 || t == AttrType::kFloat64;
}

double as_double(const Value& v) {
  switch (type_of(v)) {
    case AttrType::kCounter64: return static_cast<double>(std::get<Counter>(v).v);
    case AttrType::kGauge64: return static_cast<double>(std::get<Gauge>(v).v);
    case AttrType::kFloat64: return std::get<Float>(v).v;
    default: throw Error(ErrorCode::kTypeMismatch, "value is not numeric");
  }
}

Value add_values(const Value& a, const Value& b) {
  switch (type_of(a)) {
    case AttrType::kCounter64: return Counter{std::get<Counter>(a).v + std::get<Counter>(b).v};
    case AttrType::kGauge64:
      return Gauge{static_cast<std::int64_t>(static_cast<std::uint64_t>(std::get<Gauge>(a).v) +
                                             static_cast<std::uint64_t>(std::get<Gauge>(b).v))};
    case AttrType::kFloat64: return Float{std::get<Float>(a).v + std::get<Float>(b).v};
    default: throw Error(ErrorCode::kTypeMismatch, "SUM on non-numeric value");
  }
}

}  // namespace

FilterConstraint FilterConstraint::at_least(ConceptId attr, Value bound) {
  return {attr, FilterKind::kLower, std::move(bound), {}};
}
FilterConstraint FilterConstraint::at_most(ConceptId attr, Value bound) {
  auto c = FilterConstraint{attr, FilterKind::kUpper, {}, std::move(bound)};
  c.lower = zero_value(type_of(c.upper));
  return c;
}
FilterConstraint FilterConstraint::between(ConceptId attr, Value lo, Value hi) {
  return {attr, FilterKind::kRange, std::move(lo), std::move(hi)};
}
FilterConstraint FilterConstraint::equals(ConceptId attr, Value v) {
  return {attr, FilterKind::kExact, std::move(v), {}};
}
FilterConstraint FilterConstraint::in_prefix(ConceptId attr, Ipv4Prefix prefix) {
  return {attr, FilterKind::kPrefix, prefix, {}};
}

AttrType FilterConstraint::bound_type() const {
  return kind == FilterKind::kUpper ? type_of(upper) : type_of(lower);
}

void FilterConstraint::validate() const {
  switch (kind) {
    case FilterKind::kRange:
      if (type_of(lower) != type_of(upper))
        throw Error(ErrorCode::kInvalidSpec, "range bounds have different types");
      if (compare_values(lower, upper) == std::partial_ordering::greater)
        throw Error(ErrorCode::kInvalidSpec, "range lower bound exceeds upper bound");
      break;
    case FilterKind::kPrefix:
      if (type_of(lower) != AttrType::kIpv4Prefix)
        throw Error(ErrorCode::kInvalidSpec, "prefix constraint needs an IPV4PREFIX bound");
      if (std::get<Ipv4Prefix>(lower).length > 32) throw Error(ErrorCode::kInvalidSpec, "prefix length > 32");
      break;
    case FilterKind::kLower:
    case FilterKind::kUpper:
    case FilterKind::kExact: break;
    default: throw Error(ErrorCode::kInvalidSpec, "unknown filter kind");
  }
}

std::partial_ordering compare_values(const Value& a, const Value& b) {
  if (a.index() != b.index())
    throw Error(ErrorCode::kTypeMismatch, std::string("cannot compare ") + std::string(to_string(type_of(a))) +
                                              " with " + std::string(to_string(type_of(b))));
  return std::visit(
      [&](const auto& x) -> std::partial_ordering {
        using T = std::decay_t<decltype(x)>;
        return x <=> std::get<T>(b);
      },
      a);
}

bool FilterConstraint::accepts(const Value& v) const {
  switch (kind) {
    case FilterKind::kLower: return compare_values(v, lower) != std::partial_ordering::less &&
                                    compare_values(v, lower) != std::partial_ordering::unordered;
    case FilterKind::kUpper: return compare_values(v, upper) != std::partial_ordering::greater &&
                                    compare_values(v, upper) != std::partial_ordering::unordered;
    case FilterKind::kRange: {
      auto lo = compare_values(v, lower);
      auto hi = compare_values(v, upper);
      return (lo == std::partial_ordering::greater || lo == std::partial_ordering::equivalent) &&
             (hi == std::partial_ordering::less || hi == std::partial_ordering::equivalent);
    }
    case FilterKind::kExact: return compare_values(v, lower) == std::partial_ordering::equivalent;
    case FilterKind::kPrefix: {
      const auto& p = std::get<Ipv4Prefix>(lower);
      if (const auto* a = std::get_if<Ipv4Addr>(&v)) return p.contains(*a);
      if (const auto* q = std::get_if<Ipv4Prefix>(&v)) return q->length >= p.length && p.contains(q->addr);
      throw Error(ErrorCode::kTypeMismatch, "prefix constraint on a non-address value");
    }
  }
  return false;
}

namespace {

Value attribute_value(const EventRecord& e, const Template& t, ConceptId attr, const FlowKeySchema& schema) {
  if (auto idx = t.index_of(attr)) return e.values.at(*idx);
  if (schema.is_component(attr)) {
    for (std::size_t i = 0; i < t.fields.size(); ++i) {
      const auto& f = t.fields[i];
      if (f.type == AttrType::kFlowKey && f.attr.is_ancestor_of(attr))
        return schema.extract(std::get<FlowKey>(e.values.at(i)), attr);
    }
  }
  throw Error(ErrorCode::kMissingAttribute, "template " + std::to_string(t.template_id) + " has no attribute " +
                                                to_hex(attr));
}

}  // namespace

bool eval_filter(const EventRecord& e, const Template& t, std::span<const FilterConstraint> constraints,
                 const FlowKeySchema& schema) {
  // Group by attribute, preserving first-appearance order.
  std::vector<ConceptId> attrs;
  for (const auto& c : constraints)
    if (std::find(attrs.begin(), attrs.end(), c.attr) == attrs.end()) attrs.push_back(c.attr);
  for (auto attr : attrs) {
    Value v = attribute_value(e, t, attr, schema);
    bool any = false;
    for (const auto& c : constraints) {
      if (c.attr == attr && c.accepts(v)) {
        any = true;
        break;
      }
    }
    if (!any) return false;
  }
  return true;
}

void encode_constraints(wire::Writer& w, std::span<const FilterConstraint> constraints) {
  w.u8(static_cast<std::uint8_t>(constraints.size()));
  for (const auto& c : constraints) {
    w.u32(c.attr.value);
    w.u8(static_cast<std::uint8_t>(c.kind));
    w.u8(static_cast<std::uint8_t>(c.bound_type()));
    switch (c.kind) {
      case FilterKind::kUpper: encode_value(w, c.upper); break;
      case FilterKind::kRange:
        encode_value(w, c.lower);
        encode_value(w, c.upper);
        break;
      default: encode_value(w, c.lower); break;
    }
  }
}

std::vector<FilterConstraint> decode_constraints(wire::Reader& r) {
  std::vector<FilterConstraint> out;
  auto count = r.u8();
  out.reserve(count);
  for (std::uint8_t i = 0; i < count; ++i) {
    FilterConstraint c;
    c.attr = ConceptId{r.u32()};
    auto kind = r.u8();
    if (kind < 1 || kind > 5) throw Error(ErrorCode::kInvalidSpec, "unknown filter kind " + std::to_string(kind));
    c.kind = static_cast<FilterKind>(kind);
    auto type = decode_type_tag(r.u8());
    switch (c.kind) {
      case FilterKind::kUpper:
        c.upper = decode_value(r, type);
        c.lower = zero_value(type);
        break;
      case FilterKind::kRange:
        c.lower = decode_value(r, type);
        c.upper = decode_value(r, type);
        break;
      default: c.lower = decode_value(r, type); break;
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::size_t constraints_size(std::span<const FilterConstraint> constraints) {
  std::size_t n = 1;
  for (const auto& c : constraints) {
    n += 4 + 1 + 1 + encoded_width(c.bound_type());
    if (c.kind == FilterKind::kRange) n += encoded_width(c.bound_type());
  }
  return n;
}

std::string_view to_string(AggregatorOp op) {
  switch (op) {
    case AggregatorOp::kSum: return "SUM";
    case AggregatorOp::kMin: return "MIN";
    case AggregatorOp::kMax: return "MAX";
    case AggregatorOp::kMean: return "MEAN";
    case AggregatorOp::kCount: return "COUNT";
    case AggregatorOp::kFirst: return "FIRST";
    case AggregatorOp::kLast: return "LAST";
  }
  return "?";
}

bool op_applies(AggregatorOp op, AttrType type) {
  switch (op) {
    case AggregatorOp::kSum:
    case AggregatorOp::kMean: return is_numeric(type);
    case AggregatorOp::kMin:
    case AggregatorOp::kMax: return is_numeric(type) || type == AttrType::kTimestamp;
    case AggregatorOp::kCount:
    case AggregatorOp::kFirst:
    case AggregatorOp::kLast: return true;
  }
  return false;
}

AggregatorOp default_op(AttrType type) {
  switch (type) {
    case AttrType::kCounter64: return AggregatorOp::kSum;
    case AttrType::kGauge64:
    case AttrType::kFloat64: return AggregatorOp::kMean;
    case AttrType::kTimestamp: return AggregatorOp::kMin;
    default: return AggregatorOp::kFirst;
  }
}

AttrType output_type(AggregatorOp op, AttrType input) {
  if (op == AggregatorOp::kMean) return AttrType::kFloat64;
  if (op == AggregatorOp::kCount) return AttrType::kCounter64;
  return input;
}

void GranularitySpec::validate() const {
  if (!max_events && !max_period) throw Error(ErrorCode::kInvalidSpec, "granularity needs maxEvents or maxPeriod");
  if (max_events && *max_events == 0) throw Error(ErrorCode::kInvalidSpec, "maxEvents must be positive");
  if (max_period && max_period->count() <= 0) throw Error(ErrorCode::kInvalidSpec, "maxPeriod must be positive");
}

AggregationPlan derive_child_template(const Template& input, std::span<const ConceptId> discards, const OpMap& ops,
                                      NodeId issuer, std::uint16_t fresh_template_id) {
  AggregationPlan plan;
  plan.output.issuer = issuer;
  plan.output.template_id = fresh_template_id;
  plan.output.event_id = input.event_id;
  for (const auto& f : input.fields) {
    if (std::find(discards.begin(), discards.end(), f.attr) != discards.end()) continue;
    AggregatorOp op = default_op(f.type);
    if (auto it = ops.find(f.attr); it != ops.end() && op_applies(it->second, f.type)) op = it->second;
    auto out = output_type(op, f.type);
    plan.fields.push_back({f.attr, f.type, op, out});
    plan.output.fields.push_back({f.attr, out});
  }
  plan.all_fields_discarded = plan.fields.empty() && !input.fields.empty();
  return plan;
}

PendingAggregate::PendingAggregate(std::shared_ptr<const AggregationPlan> plan, SimTime first_arrival)
    : plan_(std::move(plan)), acc_(plan_->fields.size()), period_start_(first_arrival) {}

void PendingAggregate::accumulate(const EventRecord& e, const Template& input, std::uint32_t weight) {
  if (e.values.size() != input.fields.size())
    throw Error(ErrorCode::kTypeMismatch, "event does not follow its input template");
  for (std::size_t i = 0; i < plan_->fields.size(); ++i) {
    const auto& fp = plan_->fields[i];
    auto idx = input.index_of(fp.attr);
    if (!idx || input.fields[*idx].type != fp.input_type || type_of(e.values[*idx]) != fp.input_type)
      throw Error(ErrorCode::kTypeMismatch, "attribute " + to_hex(fp.attr) + " missing or retyped in input");
    const Value& v = e.values[*idx];
    auto& acc = acc_[i];
    switch (fp.op) {
      case AggregatorOp::kSum: acc.value = acc.value ? add_values(*acc.value, v) : v; break;
      case AggregatorOp::kMin:
        if (!acc.value || compare_values(v, *acc.value) == std::partial_ordering::less) acc.value = v;
        break;
      case AggregatorOp::kMax:
        if (!acc.value || compare_values(v, *acc.value) == std::partial_ordering::greater) acc.value = v;
        break;
      case AggregatorOp::kMean:
        acc.mean_sum += as_double(v) * static_cast<double>(weight);
        acc.mean_weight += weight;
        break;
      case AggregatorOp::kCount: break;
      case AggregatorOp::kFirst:
        if (!acc.value) acc.value = v;
        break;
      case AggregatorOp::kLast: acc.value = v; break;
    }
  }
  base_count_ += weight;
}

PendingAggregate::Finalized PendingAggregate::finalize(SimTime now) const {
  Finalized out;
  out.record.event_id = plan_->output.event_id;
  out.record.issuer = plan_->output.issuer;
  out.record.template_id = plan_->output.template_id;
  out.record.values.reserve(acc_.size());
  for (std::size_t i = 0; i < acc_.size(); ++i) {
    const auto& fp = plan_->fields[i];
    const auto& acc = acc_[i];
    switch (fp.op) {
      case AggregatorOp::kMean:
        out.record.values.push_back(
            Float{acc.mean_weight == 0 ? 0.0 : acc.mean_sum / static_cast<double>(acc.mean_weight)});
        break;
      case AggregatorOp::kCount: out.record.values.push_back(Counter{base_count_}); break;
      default: out.record.values.push_back(acc.value ? *acc.value : zero_value(fp.output_type)); break;
    }
  }
  out.meta.base_count = base_count_;
  out.meta.period_start = period_start_;
  out.meta.period_end = now;
  return out;
}

}  // namespace disco
