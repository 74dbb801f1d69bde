#include "disco/pubsub.hpp"

#include <algorithm>
#include <fmt/format.h>

#include "disco/error.hpp"
#include "disco/hash.hpp"

namespace disco {

namespace {

constexpr std::size_t kEnvelope = 8 + 32;  // topic + z-Filter on every publication hop
constexpr std::size_t kNotificationSize = 9;
constexpr std::uint16_t kFirstDerivedTemplate = 0x8000;

bool is_pass_through_ops(const SubscriptionSpec& s) { return s.pass_through(); }

std::vector<ConceptId> filter_attrs(std::span<const FilterConstraint> fs) {
  std::vector<ConceptId> out;
  for (const auto& f : fs) out.push_back(f.attr);
  return out;
}

}  // namespace

TopicId oracle_map(const ConceptPattern& pattern, std::uint64_t salt) {
  std::uint64_t group = pattern.id.value >> (32 - kOracleGroupBits);
  return mix64(hash_combine(salt ^ 0x746f706963ULL, group));
}

std::string topic_hex(TopicId topic) { return fmt::format("{:016x}", topic); }

void SubscriptionSpec::validate() const {
  if (event_pattern.prefix_bits < kOracleGroupBits)
    throw Error(ErrorCode::kInvalidSpec, "subscription pattern broader than an oracle group");
  (void)ConceptPattern::make(event_pattern.id, event_pattern.prefix_bits);
  for (const auto& f : filters) f.validate();
  granularity.validate();
}

bool SubscriptionSpec::accepts(const EventRecord& e, const Template& t, const FlowKeySchema& schema) const {
  if (!event_pattern.matches(e.event_id)) return false;
  try {
    return eval_filter(e, t, filters, schema);
  } catch (const Error& err) {
    if (err.code() == ErrorCode::kMissingAttribute || err.code() == ErrorCode::kTypeMismatch) return false;
    throw;
  }
}

wire::Bytes encode_subscribe(TopicId topic, const SubscriptionSpec& spec) {
  wire::Bytes out;
  wire::Writer w(out);
  w.u8(static_cast<std::uint8_t>(MsgKind::kSubscribe));
  w.u64(topic);
  w.u32(spec.event_pattern.id.value);
  w.u8(spec.event_pattern.prefix_bits);
  encode_constraints(w, spec.filters);
  w.u8(static_cast<std::uint8_t>(spec.discards.size()));
  for (auto d : spec.discards) w.u32(d.value);
  w.u8(static_cast<std::uint8_t>(spec.ops.size()));
  for (const auto& [attr, op] : spec.ops) {
    w.u32(attr.value);
    w.u8(static_cast<std::uint8_t>(op));
  }
  w.u32(spec.granularity.max_events.value_or(0));
  w.u64(spec.granularity.max_period ? static_cast<std::uint64_t>(spec.granularity.max_period->count()) : 0);
  return out;
}

std::pair<TopicId, SubscriptionSpec> decode_subscribe(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  if (r.u8() != static_cast<std::uint8_t>(MsgKind::kSubscribe))
    throw Error(ErrorCode::kInvalidSpec, "not a SUBSCRIBE message");
  TopicId topic = r.u64();
  SubscriptionSpec spec;
  ConceptId id{r.u32()};
  spec.event_pattern = ConceptPattern::make(id, r.u8());
  spec.filters = decode_constraints(r);
  for (int n = r.u8(); n > 0; --n) spec.discards.push_back(ConceptId{r.u32()});
  for (int n = r.u8(); n > 0; --n) {
    ConceptId attr{r.u32()};
    auto op = r.u8();
    if (op < 1 || op > 7) throw Error(ErrorCode::kInvalidSpec, "unknown aggregator op");
    spec.ops[attr] = static_cast<AggregatorOp>(op);
  }
  spec.granularity = {};
  if (auto n = r.u32(); n != 0) spec.granularity.max_events = n;
  if (auto p = r.u64(); p != 0) spec.granularity.max_period = Duration{static_cast<std::int64_t>(p)};
  if (r.remaining() != 0) throw Error(ErrorCode::kTruncated, "trailing bytes after SUBSCRIBE");
  return {topic, std::move(spec)};
}

bool same_filters(std::span<const FilterConstraint> a, std::span<const FilterConstraint> b) {
  if (a.size() != b.size()) return false;
  std::vector<bool> used(b.size(), false);
  for (const auto& x : a) {
    bool found = false;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (!used[i] && b[i] == x) {
        used[i] = true;
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

SubscriptionSpec align_upstream(std::span<const SubscriptionSpec> children) {
  if (children.empty()) throw Error(ErrorCode::kInvalidSpec, "alignment needs at least one child");
  SubscriptionSpec up;
  up.event_pattern = children.front().event_pattern;
  for (const auto& c : children.subspan(1)) up.event_pattern = common_prefix(up.event_pattern, c.event_pattern);

  // Filters: attributes every child constrains, with the union of their constraints.
  std::set<ConceptId> common;
  for (auto a : filter_attrs(children.front().filters)) common.insert(a);
  for (const auto& c : children.subspan(1)) {
    auto attrs = filter_attrs(c.filters);
    std::erase_if(common, [&](ConceptId a) { return std::find(attrs.begin(), attrs.end(), a) == attrs.end(); });
  }
  for (const auto& c : children)
    for (const auto& f : c.filters)
      if (common.contains(f.attr) && std::find(up.filters.begin(), up.filters.end(), f) == up.filters.end())
        up.filters.push_back(f);

  // Discards: dropped by everyone and not needed by any child's filter.
  std::vector<ConceptId> needed;
  for (const auto& c : children)
    for (const auto& f : c.filters) needed.push_back(f.attr);
  for (auto d : children.front().discards) {
    bool everyone = std::all_of(children.begin(), children.end(), [&](const SubscriptionSpec& c) {
      return std::find(c.discards.begin(), c.discards.end(), d) != c.discards.end();
    });
    bool used = std::any_of(needed.begin(), needed.end(), [&](ConceptId a) { return a == d || d.is_ancestor_of(a); });
    if (everyone && !used && std::find(up.discards.begin(), up.discards.end(), d) == up.discards.end())
      up.discards.push_back(d);
  }
  std::sort(up.discards.begin(), up.discards.end());

  bool ops_agree = std::all_of(children.begin(), children.end(),
                               [&](const SubscriptionSpec& c) { return c.ops == children.front().ops; });
  bool filters_agree = std::all_of(children.begin(), children.end(), [&](const SubscriptionSpec& c) {
    return same_filters(c.filters, children.front().filters);
  });
  bool any_pass_through = std::any_of(children.begin(), children.end(), is_pass_through_ops);

  if (!ops_agree || !filters_agree || any_pass_through) {
    up.granularity = GranularitySpec::pass_through();
    return up;
  }
  up.ops = children.front().ops;
  up.granularity = GranularitySpec{};
  for (const auto& c : children) {
    const auto& g = c.granularity;
    if (g.max_events && (!up.granularity.max_events || *g.max_events < *up.granularity.max_events))
      up.granularity.max_events = g.max_events;
    if (g.max_period && (!up.granularity.max_period || *g.max_period < *up.granularity.max_period))
      up.granularity.max_period = g.max_period;
  }
  return up;
}

// ---------------------------------------------------------------------------

struct Deployment::DataMsg {
  TopicId topic = 0;
  EventRecord record;
  AggregateMeta meta;
  ZFilter z;
  bool raw = true;
  std::size_t wire_size = 0;
};

struct Deployment::Node {
  Node(NodeId id, std::size_t lts_capacity, Duration lts_ttl) : id(id), lts(lts_capacity, lts_ttl) {}

  NodeId id;
  std::map<TopicId, ForwarderState> forwarders;
  std::map<TemplateKey, std::shared_ptr<const Template>> published;  // own templates
  std::map<TemplateKey, std::shared_ptr<const Template>> inputs;     // templates feeding the local pipeline
  std::map<TemplateKey, std::vector<std::pair<NodeId, std::shared_ptr<DataMsg>>>> waiting;
  std::set<TopicId> held;
  std::map<TopicId, std::set<NodeId>> notified;  // as rendezvous
  std::map<TopicId, std::set<NodeId>> upstream;
  LtsBuffer lts;
  std::set<std::uint64_t> seen_replies;
  PublisherCallbacks publisher;
  std::uint16_t next_tid = kFirstDerivedTemplate;
};

Deployment::Deployment(simnet::Network& net, const overlay::Overlay& overlay, const FlowKeySchema& schema,
                       DeploymentConfig config)
    : net_(net),
      overlay_(overlay),
      schema_(schema),
      config_(std::move(config)),
      dws_(overlay, schema, config_.partition, config_.retention) {
  for (auto id : overlay_.nodes()) {
    net_.add_node(id);
    nodes_.emplace(id, std::make_unique<Node>(id, config_.lts_capacity, config_.lts_ttl));
  }
}

Deployment::~Deployment() = default;

Deployment::Node& Deployment::node(NodeId id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::kUnknownNode, "node not in deployment");
  return *it->second;
}

const Deployment::Node& Deployment::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::kUnknownNode, "node not in deployment");
  return *it->second;
}

void Deployment::send(NodeId src, NodeId dst, std::optional<TopicId> topic, std::size_t bytes,
                      std::function<void()> fn) {
  net_.send(src, dst, bytes, std::move(fn));
  if (topic && src != dst) {
    ++stats_.messages_by_topic[*topic];
    stats_.topic_link_bytes[{*topic, src, dst}] += bytes;
  }
}

void Deployment::route_to(NodeId from, NodeId dest, std::optional<TopicId> topic, std::size_t bytes,
                          std::function<void()> fn) {
  auto next = overlay_.next_hop(from, dest);
  if (!next) {
    send(from, from, topic, bytes, std::move(fn));
    return;
  }
  if (*next == dest) {
    send(from, dest, topic, bytes, std::move(fn));
    return;
  }
  NodeId hop = *next;
  send(from, hop, topic, bytes,
       [this, hop, dest, topic, bytes, fn = std::move(fn)]() mutable { route_to(hop, dest, topic, bytes, std::move(fn)); });
}

// --- subscriptions ----------------------------------------------------------

void Deployment::subscribe(NodeId at, SubscriptionSpec spec, DeliverCallbacks callbacks) {
  spec.validate();
  node(at);
  TopicId topic = topic_of(spec.event_pattern);
  if (policy_ && !policy_(at, at, spec)) {
    ++stats_.denied_subscriptions;
    return;
  }
  if (net_.kernel().tracing())
    net_.kernel().trace(at, "subscribe", topic_hex(topic) + " " + to_string(spec.event_pattern));
  ChildKey key{at, true, spec.event_pattern};
  add_child(at, topic, key, std::move(spec), std::move(callbacks));
}

void Deployment::on_subscribe(NodeId at, NodeId from_child, TopicId topic, SubscriptionSpec spec) {
  if (policy_ && !policy_(at, from_child, spec)) {
    ++stats_.denied_subscriptions;
    return;
  }
  if (net_.kernel().tracing()) net_.kernel().trace(at, "child", topic_hex(topic) + fmt::format(" {:016x}", from_child));
  add_child(at, topic, ChildKey{from_child, false, {}}, std::move(spec), {});
}

void Deployment::add_child(NodeId at, TopicId topic, const ChildKey& key, SubscriptionSpec spec,
                           DeliverCallbacks cb) {
  auto& n = node(at);
  auto [fit, created] = n.forwarders.try_emplace(topic);
  auto& fs = fit->second;
  if (created) {
    fs.topic = topic;
    fs.parent = overlay_.next_hop(at, topic);
  }
  bool had_children = !fs.children.empty();

  if (auto it = fs.children.find(key); it != fs.children.end()) {
    if (key.local) it->second.callbacks = std::move(cb);
    if (it->second.spec == spec) return;
    flush_child(at, topic, key);
    it->second.spec = std::move(spec);
    it->second.streams.clear();
    it->second.stream_of_input.clear();
  } else {
    ChildState child;
    child.spec = std::move(spec);
    child.callbacks = std::move(cb);
    fs.children.emplace(key, std::move(child));
  }

  // Re-derive and announce output templates for every input already known.
  for (const auto& [tk, t] : n.inputs) {
    if (topic_of(t->event_id) != topic) continue;
    if (!fs.children.at(key).spec.event_pattern.matches(t->event_id)) continue;
    stream_for(at, topic, key, t);
  }

  if (!fs.parent && !had_children) notify_ready(at, topic);
  refresh_upstream(at, topic);
}

void Deployment::refresh_upstream(NodeId at, TopicId topic) {
  auto& fs = node(at).forwarders.at(topic);
  if (!fs.parent) return;
  std::vector<SubscriptionSpec> specs;
  for (const auto& [k, c] : fs.children) specs.push_back(c.spec);
  auto up = align_upstream(specs);
  if (fs.upstream_spec && *fs.upstream_spec == up) return;
  fs.upstream_spec = up;
  auto bytes = encode_subscribe(topic, up).size();
  NodeId parent = *fs.parent;
  send(at, parent, topic, bytes, [this, parent, at, topic, up = std::move(up)]() mutable {
    on_subscribe(parent, at, topic, std::move(up));
  });
}

bool Deployment::has_subscribers(NodeId at, TopicId topic) const {
  const auto& n = node(at);
  auto it = n.forwarders.find(topic);
  return it != n.forwarders.end() && !it->second.children.empty();
}

// --- publication ------------------------------------------------------------

void Deployment::publish_template(NodeId at, Template t) {
  auto& n = node(at);
  if (t.issuer != at) throw Error(ErrorCode::kInvalidSpec, "template issuer differs from publishing node");
  auto shared = std::make_shared<const Template>(std::move(t));
  n.published[{at, shared->template_id}] = shared;
  TopicId topic = topic_of(shared->event_id);
  auto root = rendezvous(topic);
  route_to(at, root, topic, template_size(*shared) + kEnvelope, [this, root, shared] { at_root_template(root, shared); });
}

void Deployment::publish_data(NodeId at, EventRecord e) {
  auto& n = node(at);
  auto it = n.published.find({at, e.template_id});
  if (e.issuer != at || it == n.published.end())
    throw Error(ErrorCode::kUnknownTemplate, "data published before its template");
  const auto& t = it->second;
  if (e.event_id != t->event_id) throw Error(ErrorCode::kTemplateMismatch, "event id differs from template");
  check_conforms(e, *t);

  auto now = net_.kernel().now();
  auto msg = std::make_shared<DataMsg>();
  msg->topic = topic_of(e.event_id);
  msg->meta = AggregateMeta{1, now, now};
  msg->record = std::move(e);
  msg->wire_size = event_size(*t) + kEnvelope;
  n.lts.append(msg->record, msg->meta, t, {}, now);
  ++stats_.published_events;
  if (n.held.contains(msg->topic)) {
    ++stats_.held_events;
    return;
  }
  route_publication(at, std::move(msg));
}

void Deployment::route_publication(NodeId at, std::shared_ptr<DataMsg> msg) {
  auto next = overlay_.next_hop(at, msg->topic);
  if (!next) {
    at_root_data(at, std::move(msg));
    return;
  }
  NodeId hop = *next;
  auto out = std::make_shared<DataMsg>(*msg);
  out->z = stamp_forward(msg->z, {at, hop}, config_.zfilter_seed, config_.zfilter_k);
  send(at, hop, msg->topic, msg->wire_size, [this, at, hop, out] {
         node(hop).upstream[out->topic].insert(at);
         route_publication(hop, out);
       });
}

void Deployment::at_root_template(NodeId root, std::shared_ptr<const Template> t) {
  TopicId topic = topic_of(t->event_id);
  if (!has_subscribers(root, topic)) note_early_publisher(root, topic, t->issuer);
  learn_input(root, topic, std::move(t));
}

void Deployment::at_root_data(NodeId root, std::shared_ptr<DataMsg> msg) {
  if (!has_subscribers(root, msg->topic)) {
    note_early_publisher(root, msg->topic, msg->record.issuer);
    return;
  }
  auto& n = node(root);
  TemplateKey tk{msg->record.issuer, msg->record.template_id};
  auto it = n.inputs.find(tk);
  if (it == n.inputs.end()) {
    n.waiting[tk].emplace_back(root, std::move(msg));
    return;
  }
  accept_data(root, msg, it->second);
}

void Deployment::note_early_publisher(NodeId root, TopicId topic, NodeId publisher) {
  auto& n = node(root);
  auto& fs = n.forwarders[topic];
  fs.topic = topic;
  if (n.notified[topic].contains(publisher)) return;
  if (fs.early_publishers.size() >= config_.early_publisher_capacity) return;
  n.notified[topic].insert(publisher);
  fs.early_publishers.push_back(publisher);
  route_to(root, publisher, std::nullopt, kNotificationSize, [this, publisher, topic] {
    ++stats_.no_subscriber_notifications[{topic, publisher}];
    auto& p = node(publisher);
    if (config_.regulate_publishers) p.held.insert(topic);
    if (net_.kernel().tracing()) net_.kernel().trace(publisher, "no-subscriber", topic_hex(topic));
    if (p.publisher.on_no_subscriber) p.publisher.on_no_subscriber(topic);
  });
}

void Deployment::notify_ready(NodeId root, TopicId topic) {
  auto& fs = node(root).forwarders.at(topic);
  auto early = std::move(fs.early_publishers);
  fs.early_publishers.clear();
  for (auto publisher : early) {
    route_to(root, publisher, std::nullopt, kNotificationSize, [this, publisher, topic] {
      ++stats_.ready_notifications[{topic, publisher}];
      auto& p = node(publisher);
      p.held.erase(topic);
      if (net_.kernel().tracing()) net_.kernel().trace(publisher, "subscribers-ready", topic_hex(topic));
      if (p.publisher.on_subscribers_ready) p.publisher.on_subscribers_ready(topic);
    });
  }
}

void Deployment::set_publisher_callbacks(NodeId at, PublisherCallbacks cb) { node(at).publisher = std::move(cb); }

// --- tree delivery ------------------------------------------------------------

void Deployment::learn_input(NodeId at, TopicId topic, std::shared_ptr<const Template> t) {
  auto& n = node(at);
  TemplateKey tk{t->issuer, t->template_id};
  n.inputs[tk] = t;
  if (auto fit = n.forwarders.find(topic); fit != n.forwarders.end()) {
    std::vector<ChildKey> keys;
    for (const auto& [k, c] : fit->second.children)
      if (c.spec.event_pattern.matches(t->event_id)) keys.push_back(k);
    for (const auto& k : keys) stream_for(at, topic, k, t);
  }
  if (auto wit = n.waiting.find(tk); wit != n.waiting.end()) {
    auto queued = std::move(wit->second);
    n.waiting.erase(wit);
    for (auto& [from, msg] : queued) {
      if (from == at)
        at_root_data(at, msg);
      else
        accept_data(at, msg, t);
    }
  }
}

void Deployment::on_tree_data(NodeId at, NodeId from, std::shared_ptr<DataMsg> msg) {
  auto& n = node(at);
  n.upstream[msg->topic].insert(from);
  TemplateKey tk{msg->record.issuer, msg->record.template_id};
  auto it = n.inputs.find(tk);
  if (it == n.inputs.end()) {
    n.waiting[tk].emplace_back(from, std::move(msg));
    return;
  }
  accept_data(at, msg, it->second);
}

void Deployment::accept_data(NodeId at, const std::shared_ptr<DataMsg>& msg,
                             const std::shared_ptr<const Template>& input) {
  auto& n = node(at);
  auto now = net_.kernel().now();
  n.lts.append(msg->record, msg->meta, input, msg->z, now);
  auto fit = n.forwarders.find(msg->topic);
  if (fit == n.forwarders.end()) return;

  std::vector<ChildKey> targets;
  for (const auto& [key, child] : fit->second.children) {
    if (!child.spec.event_pattern.matches(msg->record.event_id)) continue;
    // Aggregates were produced under filters identical to every child's;
    // only unaggregated values can (and must) be filtered here.
    if (msg->raw && !child.spec.accepts(msg->record, *input, schema_)) continue;
    targets.push_back(key);
  }

  for (const auto& key : targets) {
    auto idx = stream_for(at, msg->topic, key, input);
    auto& child = node(at).forwarders.at(msg->topic).children.at(key);
    const auto& g = child.spec.granularity;
    std::uint32_t w = msg->meta.base_count;
    {
      auto& s = child.streams[idx];
      if (s.pending && g.max_events && s.pending->base_count() + w > *g.max_events) flush(at, msg->topic, key, idx);
    }
    auto& s = child.streams[idx];
    if (!s.pending) {
      s.pending.emplace(s.plan, now);
      s.pending_z = ZFilter{};
      s.pending_raw = true;
      if (g.max_period) {
        TopicId topic = msg->topic;
        s.timer = net_.kernel().schedule(now + *g.max_period,
                                         [this, at, topic, key, idx] { on_timer(at, topic, key, idx, false); });
      }
    }
    s.pending->accumulate(msg->record, *input, w);
    s.pending_z |= msg->z;
    s.pending_raw = s.pending_raw && msg->raw && child.spec.pass_through();
    bool full = g.max_events && s.pending->base_count() >= *g.max_events;
    bool old = g.max_period && msg->meta.period_end - msg->meta.period_start >= *g.max_period;
    if (full || old) flush(at, msg->topic, key, idx);
  }
}

std::size_t Deployment::stream_for(NodeId at, TopicId topic, const ChildKey& key,
                                   const std::shared_ptr<const Template>& input) {
  auto& n = node(at);
  auto& child = n.forwarders.at(topic).children.at(key);
  TemplateKey tk{input->issuer, input->template_id};
  if (auto it = child.stream_of_input.find(tk); it != child.stream_of_input.end()) return it->second;

  OpMap ops = child.spec.ops;
  if (child.spec.pass_through()) {
    ops.clear();
    for (const auto& f : input->fields) ops[f.attr] = AggregatorOp::kFirst;
  }
  auto plan = derive_child_template(*input, child.spec.discards, ops, at, 0);

  // Inputs of identical shape (same event from several publishers) share one stream.
  for (std::size_t i = 0; i < child.streams.size(); ++i) {
    const auto& other = *child.streams[i].plan;
    bool same = other.output.event_id == plan.output.event_id && other.fields.size() == plan.fields.size();
    for (std::size_t f = 0; same && f < plan.fields.size(); ++f) {
      const auto& a = other.fields[f];
      const auto& b = plan.fields[f];
      same = a.attr == b.attr && a.input_type == b.input_type && a.op == b.op && a.output_type == b.output_type;
    }
    if (same) {
      child.stream_of_input[tk] = i;
      return i;
    }
  }

  plan.output.template_id = n.next_tid++;
  if (n.next_tid == 0) n.next_tid = kFirstDerivedTemplate;
  ChildStream s;
  s.plan = std::make_shared<const AggregationPlan>(std::move(plan));
  child.streams.push_back(std::move(s));
  std::size_t idx = child.streams.size() - 1;
  child.stream_of_input[tk] = idx;
  send_template(at, topic, key, idx);
  return idx;
}

void Deployment::send_template(NodeId at, TopicId topic, const ChildKey& key, std::size_t idx) {
  auto& child = node(at).forwarders.at(topic).children.at(key);
  auto& s = child.streams[idx];
  if (s.template_sent) return;
  s.template_sent = true;
  std::shared_ptr<const Template> out(s.plan, &s.plan->output);
  if (key.local) {
    if (child.callbacks.on_template) {
      auto cb = child.callbacks.on_template;
      net_.kernel().schedule(net_.kernel().now(), [cb, out] { cb(*out); });
    }
    return;
  }
  NodeId dst = key.node;
  send(at, dst, topic, template_size(*out) + kEnvelope, [this, dst, topic, out] { learn_input(dst, topic, out); });
}

void Deployment::on_timer(NodeId at, TopicId topic, ChildKey key, std::size_t idx, bool deferred) {
  auto& n = node(at);
  auto fit = n.forwarders.find(topic);
  if (fit == n.forwarders.end()) return;
  auto cit = fit->second.children.find(key);
  if (cit == fit->second.children.end() || idx >= cit->second.streams.size()) return;
  auto& s = cit->second.streams[idx];
  if (!deferred) {
    // Let arrivals already queued for this instant count first.
    s.timer = net_.kernel().schedule(net_.kernel().now(),
                                     [this, at, topic, key, idx] { on_timer(at, topic, key, idx, true); });
    return;
  }
  s.timer.reset();
  flush(at, topic, key, idx);
}

void Deployment::flush(NodeId at, TopicId topic, const ChildKey& key, std::size_t idx) {
  auto& child = node(at).forwarders.at(topic).children.at(key);
  auto& s = child.streams[idx];
  if (!s.pending) return;
  if (s.timer) {
    net_.kernel().cancel(*s.timer);
    s.timer.reset();
  }
  auto now = net_.kernel().now();
  auto fin = s.pending->finalize(now);
  ZFilter z = s.pending_z;
  bool raw = s.pending_raw;
  s.pending.reset();
  send_template(at, topic, key, idx);
  std::shared_ptr<const Template> out(s.plan, &s.plan->output);

  if (key.local) {
    ++stats_.data_deliveries;
    stats_.delivered_base_events += fin.meta.base_count;
    if (net_.kernel().tracing())
      net_.kernel().trace(at, "deliver",
                          fmt::format("{} {} base={}", topic_hex(topic), to_hex(fin.record.event_id), fin.meta.base_count));
    if (child.callbacks.on_data) {
      auto cb = child.callbacks.on_data;
      Delivery d{topic, std::move(fin.record), fin.meta, z, out};
      net_.kernel().schedule(now, [cb, d = std::move(d)] { cb(d); });
    }
    return;
  }
  NodeId dst = key.node;
  auto msg = std::make_shared<DataMsg>();
  msg->topic = topic;
  msg->record = std::move(fin.record);
  msg->meta = fin.meta;
  msg->z = stamp_forward(z, {at, dst}, config_.zfilter_seed, config_.zfilter_k);
  msg->raw = raw;
  send(at, dst, topic, aggregate_size(*out) + kEnvelope, [this, dst, at, msg] { on_tree_data(dst, at, msg); });
}

void Deployment::flush_child(NodeId at, TopicId topic, const ChildKey& key) {
  auto& child = node(at).forwarders.at(topic).children.at(key);
  for (std::size_t i = 0; i < child.streams.size(); ++i) flush(at, topic, key, i);
}

void Deployment::drain() {
  auto& kernel = net_.kernel();
  for (;;) {
    kernel.run();
    if (!has_pending()) break;
    for (auto& [id, n] : nodes_) {
      for (auto& [topic, fs] : n->forwarders) {
        std::vector<ChildKey> keys;
        for (const auto& [k, c] : fs.children) keys.push_back(k);
        for (const auto& k : keys) flush_child(id, topic, k);
      }
    }
  }
}

bool Deployment::has_pending() const {
  for (const auto& [id, n] : nodes_)
    for (const auto& [topic, fs] : n->forwarders)
      for (const auto& [k, c] : fs.children)
        for (const auto& s : c.streams)
          if (s.pending) return true;
  return false;
}

std::size_t Deployment::sweep() { return dws_.sweep(net_.kernel().now()); }

// --- replies and storage ----------------------------------------------------

std::uint64_t Deployment::reply(NodeId at, ReplyMessage r) {
  r.validate();
  node(at);
  auto id = next_reply_id_++;
  auto shared = std::make_shared<const ReplyMessage>(std::move(r));
  TopicId topic = topic_of(shared->event_id);
  reply_visits_[id];
  net_.kernel().schedule(net_.kernel().now(), [this, at, topic, id, shared] { on_reply(at, topic, id, shared); });
  return id;
}

void Deployment::on_reply(NodeId at, TopicId topic, std::uint64_t id, std::shared_ptr<const ReplyMessage> r) {
  auto& n = node(at);
  if (!n.seen_replies.insert(id).second) return;
  reply_visits_[id].push_back(at);
  auto now = net_.kernel().now();
  if (net_.kernel().tracing()) net_.kernel().trace(at, "reply", fmt::format("{} id={}", to_hex(r->event_id), id));

  auto matched = n.lts.match(*r, now, schema_);
  auto elected = annotate(matched, r->tags);
  std::uint32_t subscribers = 0;
  if (auto fit = n.forwarders.find(topic); fit != n.forwarders.end())
    subscribers = static_cast<std::uint32_t>(fit->second.children.size());
  for (const auto* e : elected) {
    store::DwsEntry entry;
    entry.record = e->record;
    entry.meta = e->meta;
    entry.tmpl = e->tmpl;
    entry.tags = e->tags;
    entry.subscribers = subscribers;
    store_entry(at, std::move(entry));
  }

  std::vector<NodeId> ups;
  if (auto uit = n.upstream.find(topic); uit != n.upstream.end()) ups.assign(uit->second.begin(), uit->second.end());
  auto bytes = encode_reply(*r).size();
  for (auto u : reverse_next_hops(at, ups, r->zfilter, config_.zfilter_seed, config_.zfilter_k))
    send(at, u, topic, bytes, [this, u, topic, id, r] { on_reply(u, topic, id, r); });
}

void Deployment::store_entry(NodeId at, store::DwsEntry entry) {
  NodeId owner = dws_.owner_of(entry);
  entry.owner = owner;
  std::size_t bytes = (entry.tmpl ? aggregate_size(*entry.tmpl) : 1) + 1 + 4 * entry.tags.size();
  auto shared = std::make_shared<store::DwsEntry>(std::move(entry));
  route_to(at, owner, std::nullopt, bytes, [this, owner, shared] {
    if (dws_.shard(owner).insert(*shared, net_.kernel().now(), dws_.retention())) ++stats_.dws_inserts;
    if (net_.kernel().tracing())
      net_.kernel().trace(owner, "store", fmt::format("{} tags={}", to_hex(shared->record.event_id), shared->tags.size()));
  });
}

void Deployment::dws_insert(NodeId at, store::DwsEntry entry) {
  node(at);
  store_entry(at, std::move(entry));
}

void Deployment::dws_lookup(NodeId at, store::LookupQuery q, std::function<void(std::vector<store::DwsEntry>)> done) {
  q.validate();
  node(at);
  auto now = net_.kernel().now();
  auto owners = dws_.owners_for(q);
  struct Pending {
    std::size_t remaining;
    std::vector<store::DwsEntry> results;
    std::function<void(std::vector<store::DwsEntry>)> done;
  };
  auto pending = std::make_shared<Pending>(Pending{owners.size(), {}, std::move(done)});
  if (owners.empty()) {
    net_.kernel().schedule(now, [pending] { pending->done({}); });
    return;
  }
  auto query = std::make_shared<const store::LookupQuery>(std::move(q));
  std::size_t qbytes = 1 + 8 + 5 + constraints_size(query->attr_ranges) + 16;
  for (auto owner : owners) {
    route_to(at, owner, std::nullopt, qbytes, [this, at, owner, query, pending] {
      auto hits = dws_.shard(owner).lookup(*query, net_.kernel().now(), dws_.retention(), schema_);
      std::size_t rbytes = 1 + 8 + 4;
      for (const auto& h : hits) rbytes += h.tmpl ? aggregate_size(*h.tmpl) : 1;
      auto shared_hits = std::make_shared<std::vector<store::DwsEntry>>(std::move(hits));
      route_to(owner, at, std::nullopt, rbytes, [pending, shared_hits] {
        pending->results = store::merge_results(std::move(pending->results), std::move(*shared_hits));
        if (--pending->remaining == 0) pending->done(std::move(pending->results));
      });
    });
  }
}

// --- introspection ------------------------------------------------------------

const ForwarderState* Deployment::forwarder(NodeId at, TopicId topic) const {
  const auto& n = node(at);
  auto it = n.forwarders.find(topic);
  return it == n.forwarders.end() ? nullptr : &it->second;
}

std::vector<NodeId> Deployment::tree_nodes(TopicId topic) const {
  std::vector<NodeId> out;
  for (const auto& [id, n] : nodes_)
    if (auto it = n->forwarders.find(topic); it != n->forwarders.end() && !it->second.children.empty())
      out.push_back(id);
  return out;
}

std::optional<std::size_t> Deployment::tree_depth(NodeId at, TopicId topic) const {
  std::size_t depth = 0;
  NodeId cur = at;
  for (std::size_t guard = 0; guard <= nodes_.size(); ++guard) {
    const auto* fs = forwarder(cur, topic);
    if (!fs || fs->children.empty()) return std::nullopt;
    if (!fs->parent) return depth;
    cur = *fs->parent;
    ++depth;
  }
  return std::nullopt;
}

const std::vector<NodeId>& Deployment::reply_visits(std::uint64_t reply_id) const {
  static const std::vector<NodeId> kNone;
  auto it = reply_visits_.find(reply_id);
  return it == reply_visits_.end() ? kNone : it->second;
}

const LtsBuffer& Deployment::lts(NodeId at) const { return node(at).lts; }

std::set<NodeId> Deployment::upstream_links(NodeId at, TopicId topic) const {
  const auto& n = node(at);
  auto it = n.upstream.find(topic);
  return it == n.upstream.end() ? std::set<NodeId>{} : it->second;
}

}  // namespace disco
