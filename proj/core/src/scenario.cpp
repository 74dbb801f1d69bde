#include "disco/scenario.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <random>

#include "disco/error.hpp"
#include "disco/hash.hpp"
#include "disco/overlay.hpp"
#include "disco/pubsub.hpp"
#include "disco/simnet.hpp"

namespace disco::scenario {

namespace {

namespace pt = boost::property_tree;
using namespace std::chrono_literals;

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::kConfigInvalid, msg); }

template <class T>
T parse_integer(const std::string& text, const std::string& where) {
  std::string s = text;
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    s = s.substr(2);
    base = 16;
  }
  T out{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out, base);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) invalid(where + ": not an integer: '" + text + "'");
  return out;
}

double parse_double(const std::string& text, const std::string& where) {
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v))
    invalid(where + ": not a number: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  invalid(where + ": not a boolean: '" + text + "'");
}

/// Typed access to an INI tree that remembers which keys were consumed.
class IniReader {
 public:
  explicit IniReader(const pt::ptree& tree) : tree_(tree) {}

  template <class T>
  void get(const std::string& section, const std::string& key, T& out) {
    known_[section].insert(key);
    auto sec = tree_.get_child_optional(pt::ptree::path_type(section, '\0'));
    if (!sec) return;
    auto raw = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!raw) return;
    std::string where = "[" + section + "] " + key;
    const std::string& v = *raw;
    if constexpr (std::is_same_v<T, bool>) {
      out = parse_bool(v, where);
    } else if constexpr (std::is_same_v<T, double>) {
      out = parse_double(v, where);
    } else if constexpr (std::is_integral_v<T>) {
      out = parse_integer<T>(v, where);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = v;
    } else if constexpr (std::is_same_v<T, Ipv4Prefix>) {
      try {
        out = parse_prefix(v);
      } catch (const Error&) {
        invalid(where + ": not a prefix: '" + v + "'");
      }
    } else if constexpr (std::is_same_v<T, TrafficKind>) {
      if (v == "ddos")
        out = TrafficKind::kDdos;
      else if (v == "flash-crowd")
        out = TrafficKind::kFlashCrowd;
      else
        invalid(where + ": expected ddos or flash-crowd");
    }
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      auto it = known_.find(section);
      if (it == known_.end()) invalid("unknown section [" + section + "]");
      if (!body.data().empty() && body.empty()) invalid("key outside of a section: " + section);
      for (const auto& [key, value] : body)
        if (!it->second.contains(key)) invalid("unknown key [" + section + "] " + key);
    }
  }

 private:
  const pt::ptree& tree_;
  std::map<std::string, std::set<std::string>> known_;
};

void require(bool ok, const std::string& msg) {
  if (!ok) invalid(msg);
}

Ipv4Prefix half_of(const Ipv4Prefix& p, bool upper) {
  Ipv4Prefix out{Ipv4Addr{p.addr.v & p.mask()}, static_cast<std::uint8_t>(p.length + 1)};
  if (upper) out.addr.v |= 1u << (31 - p.length);
  return out;
}

Ipv4Addr random_host(const Ipv4Prefix& p, std::mt19937_64& rng) {
  return Ipv4Addr{(p.addr.v & p.mask()) | (static_cast<std::uint32_t>(rng()) & ~p.mask())};
}

double as_number(const Value& v) {
  if (auto g = std::get_if<Gauge>(&v)) return static_cast<double>(g->v);
  if (auto f = std::get_if<Float>(&v)) return f->v;
  if (auto c = std::get_if<Counter>(&v)) return static_cast<double>(c->v);
  return 0.0;
}

}  // namespace

void Config::validate() const {
  const auto& tp = topology;
  require(tp.per_hop_latency_us > 0, "[topology] per_hop_latency_us must be positive");
  require(tp.jitter_us >= 0, "[topology] jitter_us must be non-negative");
  require(tp.extra_nodes >= 0 && tp.extra_nodes <= 4096, "[topology] extra_nodes out of range");
  require(tp.successors >= 1 && tp.successors <= 32, "[topology] successors out of range");

  const auto& tr = traffic;
  require(tr.duration_s > 0, "[traffic] duration_s must be positive");
  require(tr.phase_start_s >= 0 && tr.phase_start_s <= tr.phase_end_s && tr.phase_end_s <= tr.duration_s,
          "[traffic] phases must satisfy 0 <= phase_start_s <= phase_end_s <= duration_s");
  for (double r : {tr.phase_drop_rate, tr.phase_queue_full_rate, tr.phase_overload_rate, tr.background_drop_rate,
                   tr.background_queue_full_rate, tr.background_overload_rate, tr.phase_cost, tr.normal_cost})
    require(r >= 0, "[traffic] rates and costs must be non-negative");
  require(tr.v_fraction >= 0 && tr.v_fraction <= 1, "[traffic] v_fraction must lie in [0, 1]");
  require(tr.dilution_fraction >= 0 && tr.dilution_fraction <= 1, "[traffic] dilution_fraction must lie in [0, 1]");
  require(tr.victim_prefix.length < 32, "[traffic] victim_prefix must leave host bits");

  const auto& dt = detector;
  require(dt.heavy_window_ms > 0 && dt.window_ms > 0, "[detector] windows must be positive");
  require(dt.heavy_threshold > 0, "[detector] heavy_threshold must be positive");
  require(dt.heavy_cooldown_s >= 0, "[detector] heavy_cooldown_s must be non-negative");
  require(dt.drop_rate_threshold > 0 && dt.cost_threshold > 0 && dt.overload_rate_threshold > 0,
          "[detector] thresholds must be positive");
  require(dt.quiet_windows >= 1, "[detector] quiet_windows must be at least 1");
  require(dt.steady_max_events >= 1 && dt.overload_max_events >= 1, "[detector] max events must be at least 1");
  require(dt.steady_max_period_ms > 0, "[detector] steady_max_period_ms must be positive");
  require(!dt.analyzer_pattern.empty(), "[detector] analyzer_pattern must not be empty");

  const auto& rm = remediation;
  require(rm.max_events >= 1 && rm.max_period_ms > 0 && rm.reply_interval_ms > 0 && rm.lookback_ms >= 0,
          "[remediation] limits must be positive");
  require(rm.attack_scale >= 0 && rm.attack_scale <= 1, "[remediation] attack_scale must lie in [0, 1]");

  const auto& ds = disco;
  require(ds.lts_capacity >= 1 && ds.lts_ttl_ms > 0, "[disco] local buffer limits must be positive");
  require(ds.zfilter_k >= 1 && ds.zfilter_k <= 32, "[disco] zfilter_k out of range");
  require(ds.early_publisher_capacity >= 1, "[disco] early_publisher_capacity must be positive");
  require(ds.bucket_ms > 0, "[disco] bucket_ms must be positive");
  require(ds.base_ttl_s >= 0 && ds.tag_bonus_s >= 0 && ds.lookup_bonus_s >= 0 && ds.subscriber_bonus_s >= 0,
          "[disco] retention durations must be non-negative");
}

Config parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    invalid(std::string("malformed config: ") + e.what());
  }
  Config c;
  IniReader r(tree);
  r.get("topology", "per_hop_latency_us", c.topology.per_hop_latency_us);
  r.get("topology", "jitter_us", c.topology.jitter_us);
  r.get("topology", "extra_nodes", c.topology.extra_nodes);
  r.get("topology", "successors", c.topology.successors);
  r.get("topology", "id_salt", c.topology.id_salt);

  auto& t = c.traffic;
  r.get("traffic", "kind", t.kind);
  r.get("traffic", "duration_s", t.duration_s);
  r.get("traffic", "phase_start_s", t.phase_start_s);
  r.get("traffic", "phase_end_s", t.phase_end_s);
  r.get("traffic", "phase_drop_rate", t.phase_drop_rate);
  r.get("traffic", "v_fraction", t.v_fraction);
  r.get("traffic", "dilution_fraction", t.dilution_fraction);
  r.get("traffic", "phase_queue_full_rate", t.phase_queue_full_rate);
  r.get("traffic", "phase_overload_rate", t.phase_overload_rate);
  r.get("traffic", "phase_cost", t.phase_cost);
  r.get("traffic", "normal_cost", t.normal_cost);
  r.get("traffic", "background_drop_rate", t.background_drop_rate);
  r.get("traffic", "background_queue_full_rate", t.background_queue_full_rate);
  r.get("traffic", "background_overload_rate", t.background_overload_rate);
  r.get("traffic", "victim_prefix", t.victim_prefix);
  r.get("traffic", "dilution_prefix", t.dilution_prefix);
  r.get("traffic", "server_prefix", t.server_prefix);

  auto& d = c.detector;
  r.get("detector", "heavy_window_ms", d.heavy_window_ms);
  r.get("detector", "heavy_threshold", d.heavy_threshold);
  r.get("detector", "heavy_cooldown_s", d.heavy_cooldown_s);
  r.get("detector", "window_ms", d.window_ms);
  r.get("detector", "drop_rate_threshold", d.drop_rate_threshold);
  r.get("detector", "cost_threshold", d.cost_threshold);
  r.get("detector", "overload_rate_threshold", d.overload_rate_threshold);
  r.get("detector", "quiet_windows", d.quiet_windows);
  r.get("detector", "steady_max_events", d.steady_max_events);
  r.get("detector", "steady_max_period_ms", d.steady_max_period_ms);
  r.get("detector", "overload_max_events", d.overload_max_events);
  r.get("detector", "analyzer_pattern", d.analyzer_pattern);

  auto& m = c.remediation;
  r.get("remediation", "enabled", m.enabled);
  r.get("remediation", "max_events", m.max_events);
  r.get("remediation", "max_period_ms", m.max_period_ms);
  r.get("remediation", "reply_interval_ms", m.reply_interval_ms);
  r.get("remediation", "lookback_ms", m.lookback_ms);
  r.get("remediation", "close_loop", m.close_loop);
  r.get("remediation", "attack_scale", m.attack_scale);

  auto& s = c.disco;
  r.get("disco", "lts_capacity", s.lts_capacity);
  r.get("disco", "lts_ttl_ms", s.lts_ttl_ms);
  r.get("disco", "zfilter_k", s.zfilter_k);
  r.get("disco", "zfilter_seed", s.zfilter_seed);
  r.get("disco", "early_publisher_capacity", s.early_publisher_capacity);
  r.get("disco", "regulate_publishers", s.regulate_publishers);
  r.get("disco", "bucket_ms", s.bucket_ms);
  r.get("disco", "base_ttl_s", s.base_ttl_s);
  r.get("disco", "tag_bonus_s", s.tag_bonus_s);
  r.get("disco", "lookup_bonus_s", s.lookup_bonus_s);
  r.get("disco", "subscriber_bonus_s", s.subscriber_bonus_s);

  r.reject_unknown();
  c.validate();
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot open config file: " + path);
  return parse_config(in);
}

SimTime parse_sim_time(const std::string& text) {
  static const std::pair<const char*, double> units[] = {{"us", 1.0}, {"ms", 1e3}, {"s", 1e6}};
  std::string num = text;
  double scale = 1.0;
  for (const auto& [suffix, factor] : units) {
    std::string_view sv(text), sx(suffix);
    if (sv.size() > sx.size() && sv.ends_with(sx)) {
      num = text.substr(0, text.size() - sx.size());
      scale = factor;
      break;
    }
  }
  double v = parse_double(num, "sim time");
  if (v < 0) invalid("sim time must be non-negative: '" + text + "'");
  return SimTime{Duration{std::llround(v * scale)}};
}

VocabularyTree build_vocabulary() {
  VocabularyTree v;
  FlowKeySchema::register_in(v);
  for (const char* name : {
           "event.network.drops.forwarding.rfc791-ttl-exceeded",
           "event.network.drops.queue-full",
           "event.server.overload.request-cost",
           "report.traffic.heavy-flow",
           "report.challenge.detected",
           "report.challenge.end-of-challenge",
           "attribute.packet.bytes",
           "attribute.time.observed",
           "attribute.queue.length",
           "attribute.cost.request",
           "attribute.count.requests",
           "attribute.count.events",
           "attribute.prefix.destination",
           "attribute.rate.drops",
           "tag.challenge.ddos",
       })
    v.add(name);
  return v;
}

std::string Metrics::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : values) std::visit([&](auto x) { j[key] = x; }, value);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

namespace {

struct Names {
  ConceptId ttl, queue_full, overload, heavy, detected, ended;
  ConceptId flow, dst, bytes, ts, qlen, cost, requests, count, prefix, rate;
  ConceptId tag_ddos;
  ConceptPattern drops_family, overload_family, challenge_family, analyzer;
};

class Run {
 public:
  Run(const Config& cfg, std::uint64_t seed, std::ostream* trace, std::optional<SimTime> until)
      : cfg_(cfg),
        seed_(seed),
        vocab_(build_vocabulary()),
        schema_(FlowKeySchema::register_in(vocab_)),
        kernel_(seed),
        net_(kernel_,
             simnet::LinkModel{Duration{cfg.topology.per_hop_latency_us}, Duration{cfg.topology.jitter_us}},
             hash_combine(seed, 0x6a6974746572ULL)) {
    horizon_ = SimTime{Duration{static_cast<std::int64_t>(std::llround(cfg.traffic.duration_s * 1e6))}};
    if (until && *until < horizon_) horizon_ = *until;
    kernel_.set_trace(trace);
    resolve_names();
    build_topology();
  }

  Metrics execute();

 private:
  struct Gen {
    std::string source, stream;
    NodeId node;
    std::function<double(SimTime)> rate;
    double max_rate;
    std::function<void(std::mt19937_64&)> emit;
    std::mt19937_64 rng;
  };

  void resolve_names();
  void build_topology();
  NodeId id(const std::string& name) const { return ids_.at(name); }
  const std::string& name(NodeId n) const { return names_.at(n); }

  bool in_phase(SimTime t) const {
    auto s = to_us(t) / 1e6;
    return s >= cfg_.traffic.phase_start_s && s < cfg_.traffic.phase_end_s;
  }
  SimTime at_seconds(double s) const { return SimTime{Duration{static_cast<std::int64_t>(std::llround(s * 1e6))}}; }

  void start_stream(const std::string& source, const std::string& stream, std::function<double(SimTime)> rate,
                    double max_rate, std::function<void(std::mt19937_64&)> emit);
  void schedule_next(const std::shared_ptr<Gen>& g);
  void every(Duration period, SimTime first, std::function<bool()> tick);
  void publish(const std::string& source, const std::string& stream, EventRecord e);

  // Participants.
  void setup_publishers();
  void setup_router();
  void setup_analyzer();
  void setup_remediator();
  void analyzer_wake(const Ipv4Prefix& prefix);
  void analyzer_tick();
  void remediator_on_challenge(const Delivery& d);
  void remediator_reply();
  void collect(Metrics& m);

  FlowKey random_flow(std::mt19937_64& rng, Ipv4Addr dst) const {
    return FlowKey{Ipv4Addr{0x64400000u | (static_cast<std::uint32_t>(rng()) & 0x003fffffu)}, dst,
                   static_cast<std::uint16_t>(1024 + rng() % 60000), static_cast<std::uint16_t>(rng() % 2 ? 80 : 443),
                   6};
  }
  Ipv4Addr attack_destination(std::mt19937_64& rng, bool at_v) const;

  const Config& cfg_;
  std::uint64_t seed_;
  VocabularyTree vocab_;
  FlowKeySchema schema_;
  Names n_{};
  simnet::Kernel kernel_;
  simnet::Network net_;
  std::unique_ptr<overlay::Overlay> overlay_;
  std::unique_ptr<Deployment> d_;
  SimTime horizon_{};
  std::map<std::string, NodeId> ids_;
  std::map<NodeId, std::string> names_;
  std::vector<std::shared_ptr<Gen>> gens_;
  std::map<TopicId, std::set<NodeId>> topic_publishers_;
  std::map<TopicId, std::set<NodeId>> topic_subscribers_;
  double attack_scale_ = 1.0;
  Metrics metrics_;

  // Router R's onset detector.
  std::map<std::uint32_t, int> heavy_hist_;
  int heavy_count_ = 0;
  SimTime heavy_cooldown_until_{};

  // Analyzer A.
  bool a_awake_ = false;
  Ipv4Prefix a_prefix_{};
  std::uint64_t a_drop_window_ = 0;
  std::uint64_t a_over_window_ = 0;
  double a_cost_window_ = 0;
  bool a_in_challenge_ = false;
  int a_quiet_ = 0;
  std::uint64_t a_over_messages_ = 0;

  // Remediator M.
  bool m_active_ = false;
  std::map<ConceptId, ZFilter> m_pending_z_;
  SimTime m_last_to_{};
  SimTime m_detected_at_{};
  std::uint64_t m_replies_ = 0;
  std::uint64_t m_reply_visits_ = 0;
  std::vector<std::uint64_t> m_reply_ids_;
};

void Run::resolve_names() {
  n_.ttl = vocab_.id_of("event.network.drops.forwarding.rfc791-ttl-exceeded");
  n_.queue_full = vocab_.id_of("event.network.drops.queue-full");
  n_.overload = vocab_.id_of("event.server.overload.request-cost");
  n_.heavy = vocab_.id_of("report.traffic.heavy-flow");
  n_.detected = vocab_.id_of("report.challenge.detected");
  n_.ended = vocab_.id_of("report.challenge.end-of-challenge");
  n_.flow = schema_.base();
  n_.dst = schema_.component_id(FlowField::kDstAddr);
  n_.bytes = vocab_.id_of("attribute.packet.bytes");
  n_.ts = vocab_.id_of("attribute.time.observed");
  n_.qlen = vocab_.id_of("attribute.queue.length");
  n_.cost = vocab_.id_of("attribute.cost.request");
  n_.requests = vocab_.id_of("attribute.count.requests");
  n_.count = vocab_.id_of("attribute.count.events");
  n_.prefix = vocab_.id_of("attribute.prefix.destination");
  n_.rate = vocab_.id_of("attribute.rate.drops");
  n_.tag_ddos = vocab_.id_of("tag.challenge.ddos");
  n_.drops_family = vocab_.resolve("event.network.drops.*");
  n_.overload_family = vocab_.resolve("event.server.overload.*");
  n_.challenge_family = vocab_.resolve("report.challenge.*");
  try {
    n_.analyzer = vocab_.resolve(cfg_.detector.analyzer_pattern);
  } catch (const Error&) {
    invalid("[detector] analyzer_pattern is not in the vocabulary: " + cfg_.detector.analyzer_pattern);
  }
  if (n_.analyzer.prefix_bits < kOracleGroupBits) invalid("[detector] analyzer_pattern is broader than a topic group");
}

void Run::build_topology() {
  std::vector<std::string> all{"R", "T", "V", "U", "S", "A", "M"};
  for (int i = 0; i < cfg_.topology.extra_nodes; ++i) all.push_back(fmt::format("n{:02d}", i));
  std::vector<NodeId> idv;
  for (const auto& nm : all) {
    NodeId nid = mix64(fnv1a(nm) ^ cfg_.topology.id_salt);
    if (names_.contains(nid)) invalid("node id collision for " + nm);
    ids_[nm] = nid;
    names_[nid] = nm;
    idv.push_back(nid);
  }
  overlay_ = std::make_unique<overlay::Overlay>(idv, static_cast<std::size_t>(cfg_.topology.successors));

  DeploymentConfig dc;
  dc.lts_capacity = cfg_.disco.lts_capacity;
  dc.lts_ttl = Duration{cfg_.disco.lts_ttl_ms * 1000};
  dc.zfilter_k = cfg_.disco.zfilter_k;
  dc.zfilter_seed = cfg_.disco.zfilter_seed;
  dc.early_publisher_capacity = cfg_.disco.early_publisher_capacity;
  dc.regulate_publishers = cfg_.disco.regulate_publishers;
  dc.partition.bucket_width = Duration{cfg_.disco.bucket_ms * 1000};
  dc.retention.base_ttl = std::chrono::seconds(cfg_.disco.base_ttl_s);
  dc.retention.per_tag_bonus[n_.tag_ddos] = std::chrono::seconds(cfg_.disco.tag_bonus_s);
  dc.retention.per_lookup_bonus = std::chrono::seconds(cfg_.disco.lookup_bonus_s);
  dc.retention.per_subscriber_bonus = std::chrono::seconds(cfg_.disco.subscriber_bonus_s);
  d_ = std::make_unique<Deployment>(net_, *overlay_, schema_, dc);
}

void Run::start_stream(const std::string& source, const std::string& stream, std::function<double(SimTime)> rate,
                       double max_rate, std::function<void(std::mt19937_64&)> emit) {
  if (max_rate <= 0) return;
  auto g = std::make_shared<Gen>();
  g->source = source;
  g->stream = stream;
  g->node = id(source);
  g->rate = std::move(rate);
  g->max_rate = max_rate;
  g->emit = std::move(emit);
  g->rng.seed(hash_combine(seed_, fnv1a(source + "/" + stream)));
  gens_.push_back(g);
  schedule_next(g);
}

void Run::schedule_next(const std::shared_ptr<Gen>& g) {
  // Poisson arrivals at the peak rate, thinned to the current rate.
  std::exponential_distribution<double> gap(g->max_rate);
  auto us = std::max<std::int64_t>(1, std::llround(gap(g->rng) * 1e6));
  auto at = kernel_.now() + Duration{us};
  if (at >= horizon_) return;
  kernel_.schedule(at, [this, g] {
    std::uniform_real_distribution<double> u(0.0, g->max_rate);
    if (u(g->rng) < g->rate(kernel_.now())) g->emit(g->rng);
    schedule_next(g);
  });
}

void Run::every(Duration period, SimTime first, std::function<bool()> tick) {
  if (first >= horizon_) return;
  kernel_.schedule(first, [this, period, first, tick = std::move(tick)]() mutable {
    if (!tick()) return;
    every(period, first + period, std::move(tick));
  });
}

void Run::publish(const std::string& source, const std::string& stream, EventRecord e) {
  metrics_.publish_log.push_back({kernel_.now(), source, stream});
  if (kernel_.tracing()) kernel_.trace(id(source), "publish", stream);
  d_->publish_data(id(source), std::move(e));
}

Ipv4Addr Run::attack_destination(std::mt19937_64& rng, bool at_v) const {
  const auto& t = cfg_.traffic;
  if (at_v) return random_host(half_of(t.victim_prefix, false), rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < t.dilution_fraction) return random_host(t.dilution_prefix, rng);
  return random_host(half_of(t.victim_prefix, true), rng);
}

void Run::setup_publishers() {
  const auto& t = cfg_.traffic;
  bool ddos = t.kind == TrafficKind::kDdos;
  SimTime at = SimTime{1ms};

  // Templates first; data of a stream never precedes its template.
  auto drop_fields = std::vector<TemplateField>{
      {n_.flow, AttrType::kFlowKey}, {n_.bytes, AttrType::kCounter64}, {n_.ts, AttrType::kTimestamp}};
  kernel_.schedule(at, [this, drop_fields] {
    for (const char* r : {"V", "U"}) {
      d_->publish_template(id(r), Template{id(r), 1, n_.ttl, drop_fields});
      topic_publishers_[d_->topic_of(n_.ttl)].insert(id(r));
    }
    d_->publish_template(id("R"), Template{id("R"), 1, n_.queue_full,
                                           {{n_.flow, AttrType::kFlowKey},
                                            {n_.qlen, AttrType::kGauge64},
                                            {n_.ts, AttrType::kTimestamp}}});
    topic_publishers_[d_->topic_of(n_.queue_full)].insert(id("R"));
    d_->publish_template(id("R"), Template{id("R"), 2, n_.heavy,
                                           {{n_.prefix, AttrType::kIpv4Prefix}, {n_.count, AttrType::kCounter64}}});
    topic_publishers_[d_->topic_of(n_.heavy)].insert(id("R"));
    d_->publish_template(id("S"), Template{id("S"), 1, n_.overload,
                                           {{n_.cost, AttrType::kGauge64},
                                            {n_.requests, AttrType::kCounter64},
                                            {n_.ts, AttrType::kTimestamp}}});
    topic_publishers_[d_->topic_of(n_.overload)].insert(id("S"));
    d_->publish_template(id("A"), Template{id("A"), 1, n_.detected,
                                           {{n_.prefix, AttrType::kIpv4Prefix},
                                            {n_.rate, AttrType::kFloat64},
                                            {n_.ts, AttrType::kTimestamp}}});
    d_->publish_template(id("A"), Template{id("A"), 2, n_.ended,
                                           {{n_.prefix, AttrType::kIpv4Prefix}, {n_.ts, AttrType::kTimestamp}}});
    topic_publishers_[d_->topic_of(n_.detected)].insert(id("A"));
  });

  auto drop_event = [this](NodeId issuer, FlowKey f, std::mt19937_64& rng) {
    return EventRecord{n_.ttl, 1, issuer,
                       {f, Counter{40 + rng() % 1461}, Timestamp{to_us(kernel_.now())}}};
  };

  // TTL-exceeded drops: attack packets expire a few hops after the bottleneck, at V and U.
  for (bool at_v : {true, false}) {
    std::string r = at_v ? "V" : "U";
    double share = at_v ? t.v_fraction : 1.0 - t.v_fraction;
    double peak = ddos ? t.phase_drop_rate * share : 0.0;
    start_stream(
        r, "attack-drop", [this, peak](SimTime now) { return in_phase(now) ? peak * attack_scale_ : 0.0; }, peak,
        [this, r, at_v, drop_event](std::mt19937_64& rng) {
          publish(r, "attack-drop", drop_event(id(r), random_flow(rng, attack_destination(rng, at_v)), rng));
        });
    start_stream(
        r, "background-drop", [rate = t.background_drop_rate](SimTime) { return rate; }, t.background_drop_rate,
        [this, r, drop_event](std::mt19937_64& rng) {
          std::uniform_real_distribution<double> u(0.0, 1.0);
          auto dst = u(rng) < 0.3 ? random_host(cfg_.traffic.victim_prefix, rng)
                                  : random_host(Ipv4Prefix{Ipv4Addr{0x0a000000}, 8}, rng);
          publish(r, "background-drop", drop_event(id(r), random_flow(rng, dst), rng));
        });
  }

  // Queue-full drops at R on the bottleneck; R's onset detector watches them locally.
  auto queue_full = [this](std::mt19937_64& rng, Ipv4Addr dst, std::int64_t qlen, const char* stream) {
    ++heavy_count_;
    ++heavy_hist_[dst.v & 0xFFFF0000u];
    publish("R", stream,
            EventRecord{n_.queue_full, 1, id("R"), {random_flow(rng, dst), Gauge{qlen}, Timestamp{to_us(kernel_.now())}}});
  };
  start_stream(
      "R", "phase-queue-full",
      [this, peak = t.phase_queue_full_rate, ddos](SimTime now) {
        return in_phase(now) ? peak * (ddos ? attack_scale_ : 1.0) : 0.0;
      },
      t.phase_queue_full_rate,
      [this, ddos, queue_full](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        Ipv4Addr dst = ddos ? attack_destination(rng, u(rng) < cfg_.traffic.v_fraction)
                            : random_host(cfg_.traffic.server_prefix, rng);
        queue_full(rng, dst, 900 + static_cast<std::int64_t>(rng() % 100), "phase-queue-full");
      });
  start_stream(
      "R", "background-queue-full", [rate = t.background_queue_full_rate](SimTime) { return rate; },
      t.background_queue_full_rate, [queue_full](std::mt19937_64& rng) {
        queue_full(rng, random_host(Ipv4Prefix{Ipv4Addr{0x0a000000}, 8}, rng), static_cast<std::int64_t>(rng() % 100),
                   "background-queue-full");
      });

  // Server overload reports; attack requests are costlier than legitimate ones.
  auto overload = [this](std::mt19937_64& rng, double mean_cost, const char* stream) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    publish("S", stream,
            EventRecord{n_.overload, 1, id("S"),
                        {Gauge{std::llround(mean_cost * u(rng))}, Counter{1 + rng() % 20}, Timestamp{to_us(kernel_.now())}}});
  };
  start_stream(
      "S", "phase-overload",
      [this, peak = t.phase_overload_rate, ddos](SimTime now) {
        return in_phase(now) ? peak * (ddos ? attack_scale_ : 1.0) : 0.0;
      },
      t.phase_overload_rate,
      [overload, cost = t.phase_cost](std::mt19937_64& rng) { overload(rng, cost, "phase-overload"); });
  start_stream(
      "S", "background-overload", [rate = t.background_overload_rate](SimTime) { return rate; },
      t.background_overload_rate,
      [overload, cost = t.normal_cost](std::mt19937_64& rng) { overload(rng, cost, "background-overload"); });
}

void Run::setup_router() {
  const auto& dt = cfg_.detector;
  Duration window = std::chrono::milliseconds(dt.heavy_window_ms);
  every(window, SimTime{} + window, [this, &dt] {
    if (heavy_count_ >= dt.heavy_threshold && kernel_.now() >= heavy_cooldown_until_) {
      // Destination /16 of the largest share of queue-full drops.
      auto top = std::max_element(heavy_hist_.begin(), heavy_hist_.end(),
                                  [](const auto& a, const auto& b) { return a.second < b.second; });
      Ipv4Prefix prefix{Ipv4Addr{top->first}, 16};
      heavy_cooldown_until_ = kernel_.now() + Duration{std::llround(dt.heavy_cooldown_s * 1e6)};
      publish("R", "heavy-flow",
              EventRecord{n_.heavy, 2, id("R"), {prefix, Counter{static_cast<std::uint64_t>(heavy_count_)}}});
    }
    heavy_count_ = 0;
    heavy_hist_.clear();
    return true;
  });
}

void Run::setup_analyzer() {
  SubscriptionSpec spec;
  spec.event_pattern = ConceptPattern::exact(n_.heavy);
  topic_subscribers_[d_->topic_of(n_.heavy)].insert(id("A"));
  d_->subscribe(id("A"), spec, {{}, [this](const Delivery& del) {
                                   if (del.record.event_id != n_.heavy || a_awake_) return;
                                   auto idx = del.tmpl->index_of(n_.prefix);
                                   if (!idx) return;
                                   analyzer_wake(std::get<Ipv4Prefix>(del.record.values[*idx]));
                                 }});
}

void Run::analyzer_wake(const Ipv4Prefix& prefix) {
  const auto& dt = cfg_.detector;
  a_awake_ = true;
  a_prefix_ = prefix;
  if (kernel_.tracing()) kernel_.trace(id("A"), "wake", to_string(prefix));

  SubscriptionSpec drops;
  drops.event_pattern = n_.analyzer;
  drops.filters = {FilterConstraint::in_prefix(n_.dst, prefix)};
  drops.discards = {n_.ts};
  drops.granularity = {dt.steady_max_events, std::chrono::milliseconds(dt.steady_max_period_ms)};
  if (dt.steady_max_events == 1) drops.granularity = GranularitySpec::pass_through();
  topic_subscribers_[d_->topic_of(n_.analyzer)].insert(id("A"));
  d_->subscribe(id("A"), drops, {{}, [this](const Delivery& del) {
                                   a_drop_window_ += del.meta.base_count;
                                   metrics_.a_drop_base += del.meta.base_count;
                                   ++metrics_.a_drop_messages;
                                   metrics_.a_drop_event_ids.insert(del.record.event_id.value);
                                   // Origins recognisable from the z-Filter: each router's first overlay link.
                                   int origins = 0;
                                   for (const char* r : {"U", "V"}) {
                                     auto hop = overlay_->next_hop(id(r), del.topic);
                                     if (hop && del.zfilter.contains(link_filter({id(r), *hop}, cfg_.disco.zfilter_seed,
                                                                                 cfg_.disco.zfilter_k)))
                                       ++origins;
                                   }
                                   if (origins == 2) ++metrics_.mixed_origin;
                                 }});

  SubscriptionSpec over;
  over.event_pattern = n_.overload_family;
  over.ops = {{n_.cost, AggregatorOp::kMean}};
  over.discards = {n_.ts};
  over.granularity = {dt.overload_max_events, std::chrono::milliseconds(dt.steady_max_period_ms)};
  if (dt.overload_max_events == 1) over.granularity = GranularitySpec::pass_through();
  topic_subscribers_[d_->topic_of(n_.overload_family)].insert(id("A"));
  d_->subscribe(id("A"), over, {{}, [this](const Delivery& del) {
                                  auto idx = del.tmpl->index_of(n_.cost);
                                  if (!idx) return;
                                  a_over_window_ += del.meta.base_count;
                                  a_cost_window_ += as_number(del.record.values[*idx]) * del.meta.base_count;
                                  ++a_over_messages_;
                                }});

  Duration window = std::chrono::milliseconds(dt.window_ms);
  every(window, kernel_.now() + window, [this] {
    analyzer_tick();
    return true;
  });
}

void Run::analyzer_tick() {
  const auto& dt = cfg_.detector;
  double secs = dt.window_ms / 1000.0;
  double drop_rate = a_drop_window_ / secs;
  double over_rate = a_over_window_ / secs;
  double mean_cost = a_over_window_ ? a_cost_window_ / a_over_window_ : 0.0;
  a_drop_window_ = a_over_window_ = 0;
  a_cost_window_ = 0;
  bool challenge = drop_rate >= dt.drop_rate_threshold ||
                   (over_rate >= dt.overload_rate_threshold && mean_cost >= dt.cost_threshold);
  if (kernel_.tracing())
    kernel_.trace(id("A"), "window", fmt::format("drops={:.1f}/s overload={:.1f}/s cost={:.2f}", drop_rate, over_rate, mean_cost));
  Timestamp now{to_us(kernel_.now())};
  if (!a_in_challenge_) {
    if (!challenge) return;
    a_in_challenge_ = true;
    a_quiet_ = 0;
    metrics_.challenges.push_back({kernel_.now(), std::nullopt, a_prefix_});
    publish("A", "challenge-detected", EventRecord{n_.detected, 1, id("A"), {a_prefix_, Float{drop_rate}, now}});
    return;
  }
  if (challenge) {
    a_quiet_ = 0;
    return;
  }
  if (++a_quiet_ < dt.quiet_windows) return;
  a_in_challenge_ = false;
  metrics_.challenges.back().ended = kernel_.now();
  publish("A", "end-of-challenge", EventRecord{n_.ended, 2, id("A"), {a_prefix_, now}});
}

void Run::setup_remediator() {
  SubscriptionSpec spec;
  spec.event_pattern = n_.challenge_family;
  topic_subscribers_[d_->topic_of(n_.challenge_family)].insert(id("M"));
  d_->subscribe(id("M"), spec, {{}, [this](const Delivery& del) { remediator_on_challenge(del); }});
}

void Run::remediator_on_challenge(const Delivery& del) {
  const auto& rm = cfg_.remediation;
  auto pidx = del.tmpl->index_of(n_.prefix);
  auto tidx = del.tmpl->index_of(n_.ts);
  if (!pidx || !tidx) return;
  auto prefix = std::get<Ipv4Prefix>(del.record.values[*pidx]);
  SimTime stamp{Duration{std::get<Timestamp>(del.record.values[*tidx]).us}};

  if (del.record.event_id == n_.detected && !m_active_) {
    m_active_ = true;
    m_detected_at_ = stamp;
    m_last_to_ = std::max(SimTime{}, stamp - std::chrono::milliseconds(rm.lookback_ms));
    // Same filter and operators as the analyzer, so shared forwarders keep aggregating.
    SubscriptionSpec drops;
    drops.event_pattern = n_.analyzer;
    drops.filters = {FilterConstraint::in_prefix(n_.dst, prefix)};
    drops.discards = {n_.ts};
    drops.granularity = {rm.max_events, std::chrono::milliseconds(rm.max_period_ms)};
    auto collect_z = [this](const Delivery& d) { m_pending_z_[d.record.event_id] |= d.zfilter; };
    topic_subscribers_[d_->topic_of(n_.analyzer)].insert(id("M"));
    d_->subscribe(id("M"), drops, {{}, collect_z});
    SubscriptionSpec over;
    over.event_pattern = n_.overload_family;
    over.ops = {{n_.cost, AggregatorOp::kMean}};
    over.discards = {n_.ts};
    over.granularity = {rm.max_events, std::chrono::milliseconds(rm.max_period_ms)};
    topic_subscribers_[d_->topic_of(n_.overload_family)].insert(id("M"));
    d_->subscribe(id("M"), over, {{}, collect_z});
    Duration interval = std::chrono::milliseconds(rm.reply_interval_ms);
    every(interval, kernel_.now() + interval, [this] {
      if (!m_active_) return false;
      remediator_reply();
      return true;
    });
    return;
  }
  if (del.record.event_id == n_.ended && m_active_) {
    remediator_reply();
    m_active_ = false;
    SimTime from = m_detected_at_, to = stamp;
    // Diagnostic pass over the challenge interval once the elections settled.
    kernel_.schedule(kernel_.now() + 500ms, [this, from, to] {
      d_->dws_lookup(id("M"), store::LookupQuery{n_.drops_family, {}, from, to},
                     [this](std::vector<store::DwsEntry> r) { metrics_.diag_drop_entries = r.size(); });
      d_->dws_lookup(id("M"), store::LookupQuery{n_.overload_family, {}, from, to},
                     [this](std::vector<store::DwsEntry> r) { metrics_.diag_overload_entries = r.size(); });
    });
  }
}

void Run::remediator_reply() {
  const auto& rm = cfg_.remediation;
  auto now = kernel_.now();
  for (auto& [event, z] : m_pending_z_) {
    if (z.empty()) continue;
    ReplyMessage r;
    r.event_id = event;
    if (n_.drops_family.matches(event)) r.constraints = {FilterConstraint::in_prefix(n_.dst, a_prefix_)};
    r.from = m_last_to_;
    r.to = now;
    r.tags = {n_.tag_ddos};
    r.zfilter = z;
    m_reply_ids_.push_back(d_->reply(id("M"), std::move(r)));
    ++m_replies_;
    z = ZFilter{};
  }
  m_last_to_ = now;
  if (rm.close_loop && m_replies_ > 0) attack_scale_ = rm.attack_scale;
}

Metrics Run::execute() {
  if (cfg_.remediation.enabled) setup_remediator();
  setup_analyzer();
  setup_router();
  setup_publishers();
  kernel_.run(horizon_);
  // Windows and generators stop at the horizon; what is left are in-flight
  // messages and pending aggregates.
  d_->drain();
  collect(metrics_);
  return std::move(metrics_);
}

void Run::collect(Metrics& m) {
  const auto& st = d_->stats();
  const auto& tr = cfg_.traffic;
  auto& v = m.values;

  for (const auto& [link, bytes] : net_.byte_counters())
    v["bytes.link." + name(link.first) + "-" + name(link.second)] = static_cast<std::int64_t>(bytes);
  v["bytes.total"] = static_cast<std::int64_t>(net_.total_bytes());
  std::uint64_t msgs = 0;
  for (const auto& [topic, count] : st.messages_by_topic) {
    v["msgs.topic." + topic_hex(topic)] = static_cast<std::int64_t>(count);
    msgs += count;
  }
  v["msgs.total"] = static_cast<std::int64_t>(net_.messages());

  v["agg.ratio"] = st.data_deliveries ? static_cast<double>(st.delivered_base_events) / st.data_deliveries : 0.0;
  v["agg.ratio.A"] = m.a_drop_messages ? static_cast<double>(m.a_drop_base) / m.a_drop_messages : 0.0;
  v["agg.mixed_origin"] = static_cast<std::int64_t>(m.mixed_origin);
  v["deliveries.A.drops"] = static_cast<std::int64_t>(m.a_drop_messages);
  v["deliveries.A.drops.base"] = static_cast<std::int64_t>(m.a_drop_base);

  // Bytes on A's delivery path: tree edges from the rendezvous down to A.
  TopicId drops_topic = d_->topic_of(n_.analyzer);
  NodeId cur = id("A");
  for (std::size_t guard = 0; guard < overlay_->size(); ++guard) {
    const auto* fs = d_->forwarder(cur, drops_topic);
    if (!fs || !fs->parent) break;
    auto it = st.topic_link_bytes.find({drops_topic, *fs->parent, cur});
    if (it != st.topic_link_bytes.end()) m.a_path_bytes += it->second;
    cur = *fs->parent;
  }
  v["bytes.path.A"] = static_cast<std::int64_t>(m.a_path_bytes);
  v["tree.depth.A"] = static_cast<std::int64_t>(d_->tree_depth(id("A"), drops_topic).value_or(0));

  bool attack = tr.kind == TrafficKind::kDdos &&
                (tr.phase_drop_rate > 0 || tr.phase_queue_full_rate > 0 || tr.phase_overload_rate > 0);
  auto slack = std::chrono::milliseconds(cfg_.detector.window_ms * (cfg_.detector.quiet_windows + 1) +
                                         cfg_.detector.steady_max_period_ms);
  std::int64_t ended = 0;
  for (const auto& c : m.challenges) {
    bool sound = attack && c.detected >= at_seconds(tr.phase_start_s) && c.detected <= at_seconds(tr.phase_end_s) + slack;
    if (!sound)
      ++m.false_alarms;
    else if (!m.detect_latency_us)
      m.detect_latency_us = to_us(c.detected) - to_us(at_seconds(tr.phase_start_s));
    if (c.ended) ++ended;
  }
  v["challenge.detected"] = static_cast<std::int64_t>(m.challenges.size());
  v["challenge.ended"] = ended;
  v["false_alarms"] = m.false_alarms;
  v["detect.latency_us"] = m.detect_latency_us.value_or(-1);

  for (const auto& [topic, pubs] : topic_publishers_) {
    if (pubs.size() != 1) continue;
    NodeId p = *pubs.begin();
    double sum = 0;
    int n = 0;
    for (auto s : topic_subscribers_[topic]) {
      auto direct = overlay_->route(p, s).size() - 1;
      auto depth = d_->tree_depth(s, topic);
      if (direct == 0 || !depth) continue;
      auto via = overlay_->route(p, topic).size() - 1 + *depth;
      sum += static_cast<double>(via) / static_cast<double>(direct);
      ++n;
    }
    if (n > 0) v["stretch.topic." + topic_hex(topic)] = sum / n;
  }

  std::uint64_t none = 0, ready = 0;
  for (const auto& [k, c] : st.no_subscriber_notifications) none += c;
  for (const auto& [k, c] : st.ready_notifications) ready += c;
  v["notifications.no_subscriber"] = static_cast<std::int64_t>(none);
  v["notifications.ready"] = static_cast<std::int64_t>(ready);
  v["events.published"] = static_cast<std::int64_t>(st.published_events);
  v["events.held"] = static_cast<std::int64_t>(st.held_events);

  for (auto rid : m_reply_ids_) m_reply_visits_ += d_->reply_visits(rid).size();
  v["replies.sent"] = static_cast<std::int64_t>(m_replies_);
  v["replies.visits"] = static_cast<std::int64_t>(m_reply_visits_);
  m.elected = st.dws_inserts;
  v["dws.inserted"] = static_cast<std::int64_t>(st.dws_inserts);
  v["dws.entries"] = static_cast<std::int64_t>(d_->dws().size());
  v["diag.lookup.drops"] = static_cast<std::int64_t>(m.diag_drop_entries);
  v["diag.lookup.overload"] = static_cast<std::int64_t>(m.diag_overload_entries);
  v["sim.end_us"] = to_us(kernel_.now());
  v["sim.actions"] = static_cast<std::int64_t>(kernel_.executed());
  (void)msgs;
}

}  // namespace

Metrics run_scenario(const Config& config, std::uint64_t seed, std::ostream* trace, std::optional<SimTime> until) {
  config.validate();
  Run run(config, seed, trace, until);
  return run.execute();
}

}  // namespace disco::scenario
