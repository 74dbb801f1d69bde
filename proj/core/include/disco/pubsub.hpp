#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "disco/aggregation.hpp"
#include "disco/events.hpp"
#include "disco/overlay.hpp"
#include "disco/reply.hpp"
#include "disco/simnet.hpp"
#include "disco/store.hpp"

namespace disco {

using TopicId = std::uint64_t;

/// Bits of a concept id that select its multicast group.
inline constexpr int kOracleGroupBits = 16;

/// Topic oracle: every pattern under the same 16-bit vocabulary prefix maps
/// to one multicast tree. Patterns broader than the group are not mappable.
TopicId oracle_map(const ConceptPattern& pattern, std::uint64_t salt = 0);
inline TopicId oracle_map(ConceptId event, std::uint64_t salt = 0) {
  return oracle_map(ConceptPattern::exact(event), salt);
}

std::string topic_hex(TopicId topic);

struct SubscriptionSpec {
  ConceptPattern event_pattern;
  std::vector<FilterConstraint> filters;
  std::vector<ConceptId> discards;
  OpMap ops;
  GranularitySpec granularity = GranularitySpec::pass_through();

  /// Throws InvalidSpec.
  void validate() const;
  /// Pattern and filters both accept (e, t).
  bool accepts(const EventRecord& e, const Template& t, const FlowKeySchema& schema) const;
  /// No aggregation happens for this spec: every event is forwarded alone
  /// with its original attribute types.
  bool pass_through() const { return granularity.max_events == 1u; }

  bool operator==(const SubscriptionSpec&) const = default;
};

/// SUBSCRIBE: 0x01 | topic(8) | patternId(4) | prefixBits(1) | constraint block
///            | discardCount(1) | discards(4 each) | opCount(1) | (attrId(4) | op(1)) each
///            | maxEvents(4, 0 = none) | maxPeriodUs(8, 0 = none)
wire::Bytes encode_subscribe(TopicId topic, const SubscriptionSpec& spec);
std::pair<TopicId, SubscriptionSpec> decode_subscribe(std::span<const std::uint8_t> bytes);

/// Order-insensitive comparison of two filter lists.
bool same_filters(std::span<const FilterConstraint> a, std::span<const FilterConstraint> b);

/// Finest-grained merge of the children's specs: the upstream accepts every
/// event any child accepts, keeps every attribute some child keeps or
/// filters on, and aggregates no coarser than any child. When children
/// disagree on filters or operators the upstream asks for no aggregation
/// and each child is re-aggregated locally.
SubscriptionSpec align_upstream(std::span<const SubscriptionSpec> children);

/// What a subscriber receives with every data delivery.
struct Delivery {
  TopicId topic = 0;
  EventRecord record;
  AggregateMeta meta;
  ZFilter zfilter;
  std::shared_ptr<const Template> tmpl;
};

struct DeliverCallbacks {
  std::function<void(const Template&)> on_template;
  std::function<void(const Delivery&)> on_data;
};

struct PublisherCallbacks {
  std::function<void(TopicId)> on_no_subscriber;
  std::function<void(TopicId)> on_subscribers_ready;
};

/// Identifies one child of a forwarder: a downstream node, or a local
/// subscription (one per event pattern) on the forwarder itself.
struct ChildKey {
  NodeId node = 0;
  bool local = false;
  ConceptPattern pattern;
  auto operator<=>(const ChildKey&) const = default;
};

/// Output stream of one child for events of one shape (output template).
struct ChildStream {
  std::shared_ptr<const AggregationPlan> plan;
  bool template_sent = false;
  std::optional<PendingAggregate> pending;
  ZFilter pending_z;
  bool pending_raw = true;  // every folded input carried unaggregated values
  std::optional<simnet::ActionHandle> timer;
};

struct ChildState {
  SubscriptionSpec spec;
  DeliverCallbacks callbacks;  // local children only
  std::vector<ChildStream> streams;
  std::map<std::pair<NodeId, std::uint16_t>, std::size_t> stream_of_input;  // input template -> stream
};

struct ForwarderState {
  TopicId topic = 0;
  std::optional<NodeId> parent;  // nullopt: this node is the rendezvous
  std::map<ChildKey, ChildState> children;
  std::optional<SubscriptionSpec> upstream_spec;
  std::vector<NodeId> early_publishers;
};

struct DeploymentConfig {
  std::size_t lts_capacity = 4096;
  Duration lts_ttl{std::chrono::seconds(10)};
  std::uint64_t zfilter_seed = 0x7a46696c746572ULL;
  int zfilter_k = 4;
  std::uint64_t topic_salt = 0;
  std::size_t early_publisher_capacity = 64;
  /// Publishers hold data locally after a no-subscriber notification.
  bool regulate_publishers = true;
  store::PartitionScheme partition;
  store::RetentionPolicy retention;
};

/// Per-deployment counters.
struct PubSubStats {
  std::map<TopicId, std::uint64_t> messages_by_topic;
  std::map<std::tuple<TopicId, NodeId, NodeId>, std::uint64_t> topic_link_bytes;
  std::uint64_t published_events = 0;
  std::uint64_t held_events = 0;  // kept local while no subscriber was known
  std::uint64_t data_deliveries = 0;
  std::uint64_t delivered_base_events = 0;
  std::map<std::pair<TopicId, NodeId>, std::uint32_t> no_subscriber_notifications;
  std::map<std::pair<TopicId, NodeId>, std::uint32_t> ready_notifications;
  std::uint64_t dws_inserts = 0;
  std::uint64_t denied_subscriptions = 0;
};

/// Entitlement hook: (node evaluating, requesting child, spec) -> allowed.
using SubscriptionPolicy = std::function<bool(NodeId, NodeId, const SubscriptionSpec&)>;

/// A simulated DISco deployment: one pub/sub + storage peer per overlay
/// node, exchanging messages over the simnet network.
class Deployment {
 public:
  Deployment(simnet::Network& net, const overlay::Overlay& overlay, const FlowKeySchema& schema,
             DeploymentConfig config = {});
  ~Deployment();

  Deployment(const Deployment&) = delete;
  Deployment& operator=(const Deployment&) = delete;

  // Client API. All calls act at the current simulation time.
  /// Template issuer must be `node`.
  void publish_template(NodeId node, Template t);
  /// Throws UnknownTemplate if `node` has not published the template.
  void publish_data(NodeId node, EventRecord e);
  /// Throws InvalidSpec. A second call with the same pattern replaces the first.
  void subscribe(NodeId node, SubscriptionSpec spec, DeliverCallbacks callbacks);
  /// Sends an annotation reply upstream; returns its id.
  std::uint64_t reply(NodeId node, ReplyMessage reply);
  /// Elects an entry into the working store from `node`.
  void dws_insert(NodeId node, store::DwsEntry entry);
  /// Fans a query out to the owning shards and calls `done` at `node` with
  /// the merged result once every owner answered.
  void dws_lookup(NodeId node, store::LookupQuery q, std::function<void(std::vector<store::DwsEntry>)> done);

  void set_publisher_callbacks(NodeId node, PublisherCallbacks cb);
  void set_subscription_policy(SubscriptionPolicy policy) { policy_ = std::move(policy); }

  /// Forwards every pending aggregate and runs the kernel, repeatedly,
  /// until nothing is pending anywhere.
  void drain();
  /// Retention sweep over all shards.
  std::size_t sweep();

  // Introspection.
  TopicId topic_of(const ConceptPattern& p) const { return oracle_map(p, config_.topic_salt); }
  TopicId topic_of(ConceptId id) const { return oracle_map(id, config_.topic_salt); }
  NodeId rendezvous(TopicId topic) const { return overlay_.owner(topic); }
  const ForwarderState* forwarder(NodeId node, TopicId topic) const;
  /// Nodes holding forwarder state for the topic, sorted.
  std::vector<NodeId> tree_nodes(TopicId topic) const;
  /// Number of tree edges between node and the rendezvous (nullopt if not in tree).
  std::optional<std::size_t> tree_depth(NodeId node, TopicId topic) const;
  /// Nodes a reply visited, in visit order.
  const std::vector<NodeId>& reply_visits(std::uint64_t reply_id) const;
  const LtsBuffer& lts(NodeId node) const;
  std::set<NodeId> upstream_links(NodeId node, TopicId topic) const;
  bool has_pending() const;

  const PubSubStats& stats() const { return stats_; }
  store::Dws& dws() { return dws_; }
  const DeploymentConfig& config() const { return config_; }
  simnet::Kernel& kernel() { return net_.kernel(); }
  const overlay::Overlay& overlay() const { return overlay_; }
  const FlowKeySchema& schema() const { return schema_; }

 private:
  struct Node;
  struct DataMsg;
  using TemplateKey = std::pair<NodeId, std::uint16_t>;

  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  void send(NodeId src, NodeId dst, std::optional<TopicId> topic, std::size_t bytes, std::function<void()> fn);
  /// Multi-hop overlay delivery to a node id; intermediate hops are charged.
  void route_to(NodeId from, NodeId dest, std::optional<TopicId> topic, std::size_t bytes, std::function<void()> fn);

  // Subscriptions.
  void on_subscribe(NodeId at, NodeId from_child, TopicId topic, SubscriptionSpec spec);
  void add_child(NodeId at, TopicId topic, const ChildKey& key, SubscriptionSpec spec, DeliverCallbacks cb);
  void refresh_upstream(NodeId at, TopicId topic);
  bool has_subscribers(NodeId at, TopicId topic) const;

  // Publications on their way to the rendezvous.
  void route_publication(NodeId at, std::shared_ptr<DataMsg> msg);
  void at_root_template(NodeId root, std::shared_ptr<const Template> t);
  void at_root_data(NodeId root, std::shared_ptr<DataMsg> msg);
  void note_early_publisher(NodeId root, TopicId topic, NodeId publisher);
  void notify_ready(NodeId root, TopicId topic);

  // Tree delivery.
  void learn_input(NodeId at, TopicId topic, std::shared_ptr<const Template> t);
  void on_tree_data(NodeId at, NodeId from, std::shared_ptr<DataMsg> msg);
  void accept_data(NodeId at, const std::shared_ptr<DataMsg>& msg, const std::shared_ptr<const Template>& input);
  std::size_t stream_for(NodeId at, TopicId topic, const ChildKey& key, const std::shared_ptr<const Template>& input);
  void send_template(NodeId at, TopicId topic, const ChildKey& key, std::size_t stream_index);
  void flush(NodeId at, TopicId topic, const ChildKey& key, std::size_t stream_index);
  void on_timer(NodeId at, TopicId topic, ChildKey key, std::size_t stream_index, bool deferred);
  void flush_child(NodeId at, TopicId topic, const ChildKey& key);

  // Replies and storage.
  void on_reply(NodeId at, TopicId topic, std::uint64_t reply_id, std::shared_ptr<const ReplyMessage> r);
  void store_entry(NodeId at, store::DwsEntry entry);

  simnet::Network& net_;
  const overlay::Overlay& overlay_;
  const FlowKeySchema& schema_;
  DeploymentConfig config_;
  store::Dws dws_;
  SubscriptionPolicy policy_;
  std::map<NodeId, std::unique_ptr<Node>> nodes_;
  std::uint64_t next_reply_id_ = 1;
  std::map<std::uint64_t, std::vector<NodeId>> reply_visits_;
  PubSubStats stats_;
};

}  // namespace disco
