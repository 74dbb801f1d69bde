#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "disco/events.hpp"
#include "disco/time.hpp"

namespace disco {

enum class FilterKind : std::uint8_t {
  kLower = 1,
  kUpper = 2,
  kRange = 3,
  kExact = 4,
  kPrefix = 5,
};

/// Constraint on one attribute (or one flow-key component).
///
/// A list of constraints is evaluated attribute by attribute: constraints
/// naming the same attribute are alternatives (any may hold) and distinct
/// attributes are combined by conjunction. A list holding at most one
/// constraint per attribute is therefore a plain conjunction.
struct FilterConstraint {
  ConceptId attr;
  FilterKind kind = FilterKind::kExact;
  Value lower;  // bound for kLower, kRange, kExact, kPrefix
  Value upper;  // bound for kUpper, kRange

  static FilterConstraint at_least(ConceptId attr, Value bound);
  static FilterConstraint at_most(ConceptId attr, Value bound);
  static FilterConstraint between(ConceptId attr, Value lo, Value hi);
  static FilterConstraint equals(ConceptId attr, Value v);
  static FilterConstraint in_prefix(ConceptId attr, Ipv4Prefix prefix);

  /// The type the constrained value must have.
  AttrType bound_type() const;
  /// Throws InvalidSpec (RANGE with lower > upper, PREFIX on a non-prefix bound, ...).
  void validate() const;
  /// Throws TypeMismatch when `v` cannot be compared with the bounds.
  bool accepts(const Value& v) const;

  bool operator==(const FilterConstraint&) const = default;
};

/// Orders two values of the same type; throws TypeMismatch otherwise.
std::partial_ordering compare_values(const Value& a, const Value& b);

/// True iff every constrained attribute has at least one satisfied
/// constraint. Throws MissingAttribute when a constraint names an attribute
/// the template neither carries nor can extract from a flow key.
bool eval_filter(const EventRecord& e, const Template& t, std::span<const FilterConstraint> constraints,
                 const FlowKeySchema& schema);

/// Filter constraints encoded as count(1) | count x (attrId(4) | kind(1) | typeTag(1) | bounds).
void encode_constraints(wire::Writer& w, std::span<const FilterConstraint> constraints);
std::vector<FilterConstraint> decode_constraints(wire::Reader& r);
std::size_t constraints_size(std::span<const FilterConstraint> constraints);

enum class AggregatorOp : std::uint8_t {
  kSum = 1,
  kMin = 2,
  kMax = 3,
  kMean = 4,
  kCount = 5,
  kFirst = 6,
  kLast = 7,
};

std::string_view to_string(AggregatorOp op);
bool op_applies(AggregatorOp op, AttrType type);
/// Operator used for attributes the subscriber did not mention.
AggregatorOp default_op(AttrType type);
/// MEAN yields FLOAT64 and COUNT yields COUNTER64; other operators keep the type.
AttrType output_type(AggregatorOp op, AttrType input);

/// How much aggregation a subscriber tolerates; whichever limit is reached
/// first triggers forwarding.
struct GranularitySpec {
  std::optional<std::uint32_t> max_events;
  std::optional<Duration> max_period;

  static GranularitySpec pass_through() { return {1u, std::nullopt}; }
  static GranularitySpec events(std::uint32_t n) { return {n, std::nullopt}; }
  static GranularitySpec period(Duration d) { return {std::nullopt, d}; }

  void validate() const;  // InvalidSpec
  bool operator==(const GranularitySpec&) const = default;
};

using OpMap = std::map<ConceptId, AggregatorOp>;

struct FieldPlan {
  ConceptId attr;
  AttrType input_type;
  AggregatorOp op;
  AttrType output_type;
};

/// Output template plus the per-field operator plan that produces it.
struct AggregationPlan {
  Template output;
  std::vector<FieldPlan> fields;
  /// Set when every field was discarded; delivery degenerates to a bare count.
  bool all_fields_discarded = false;
};

/// Drops discarded fields (unknown ids are ignored), resolves operators
/// (falling back to the type default for missing or inapplicable ones) and
/// assigns the output template a fresh id under `issuer`.
AggregationPlan derive_child_template(const Template& input, std::span<const ConceptId> discards, const OpMap& ops,
                                      NodeId issuer, std::uint16_t fresh_template_id);

/// Events accumulated for one child and one output template.
class PendingAggregate {
 public:
  PendingAggregate(std::shared_ptr<const AggregationPlan> plan, SimTime first_arrival);

  /// Folds `e` (laid out by `input`) into the aggregate. `weight` is the
  /// number of base events `e` already represents. Throws TypeMismatch.
  void accumulate(const EventRecord& e, const Template& input, std::uint32_t weight);

  struct Finalized {
    EventRecord record;
    AggregateMeta meta;
  };
  /// Precondition: base_count() >= 1.
  Finalized finalize(SimTime now) const;

  std::uint32_t base_count() const { return base_count_; }
  SimTime period_start() const { return period_start_; }
  const AggregationPlan& plan() const { return *plan_; }

 private:
  struct Accumulator {
    std::optional<Value> value;
    double mean_sum = 0.0;
    std::uint64_t mean_weight = 0;
  };

  std::shared_ptr<const AggregationPlan> plan_;
  std::vector<Accumulator> acc_;
  std::uint32_t base_count_ = 0;
  SimTime period_start_;
};

}  // namespace disco
