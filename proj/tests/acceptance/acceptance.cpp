// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "disco/error.hpp"
#include "disco/scenario.hpp"
#include "disco/store.hpp"
#include "test_support.hpp"

using namespace disco;
using namespace disco::testing;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1

struct Published {
  std::uint32_t dst;
  std::uint64_t bytes;
  std::int64_t ts;
  std::int64_t queue;
  std::int64_t cost;
};

struct SubSpec {
  NodeId node;
  std::optional<Ipv4Prefix> prefix;
  std::optional<std::pair<std::uint64_t, std::uint64_t>> bytes;
  bool identity = false;  // maxEvents 1: events arrive unaggregated
};

bool flat_accepts(const SubSpec& s, const Published& p) {
  if (s.prefix) {
    std::uint32_t mask = s.prefix->length == 0 ? 0u : ~0u << (32 - s.prefix->length);
    if ((p.dst & mask) != (s.prefix->addr.v & mask)) return false;
  }
  if (s.bytes && (p.bytes < s.bytes->first || p.bytes > s.bytes->second)) return false;
  return true;
}

Outcome conservation() {
  auto t0 = std::chrono::steady_clock::now();
  constexpr int kWorlds = 10, kEventsPerWorld = 1000;
  std::size_t max_depth = 0, deliveries = 0, checked = 0, identity_subs = 0;
  double worst_ratio = 0;  // observed MEAN error / allowed error
  std::string failure;

  for (int wi = 0; wi < kWorlds && failure.empty(); ++wi) {
    World w(48, 500 + wi);
    auto& d = w.d();
    auto& v = w.vocab;
    std::mt19937_64 rng(9000 + wi);
    std::vector<NodeId> nodes = w.ids;
    std::shuffle(nodes.begin(), nodes.end(), rng);

    const OpMap ops{{v.bytes, AggregatorOp::kSum},
                    {v.packets, AggregatorOp::kCount},
                    {v.ts, AggregatorOp::kMin},
                    {v.gauge, AggregatorOp::kMax},
                    {v.cost, AggregatorOp::kMean}};
    std::vector<SubSpec> subs;
    std::vector<std::vector<Delivery>> got(8);
    for (int i = 0; i < 8; ++i) {
      SubSpec s{nodes[i], {}, {}};
      SubscriptionSpec spec;
      spec.event_pattern = ConceptPattern::exact(v.ttl);
      spec.ops = ops;
      // even worlds share one filter set so forwarders aggregate in-network
      bool filtered = wi % 2 == 1;
      if (filtered && rng() % 2) {
        s.prefix = Ipv4Prefix{Ipv4Addr{0x04020000}, static_cast<std::uint8_t>(15 + rng() % 3)};
        spec.filters.push_back(FilterConstraint::in_prefix(v.dst(), *s.prefix));
      }
      if (filtered && rng() % 3 == 0) {
        std::uint64_t lo = rng() % 1000, hi = lo + rng() % 1000;
        s.bytes = {lo, hi};
        spec.filters.push_back(FilterConstraint::between(v.bytes, Counter{lo}, Counter{hi}));
      }
      switch (rng() % 3) {
        case 0: spec.granularity = GranularitySpec::events(1 + rng() % 20); break;
        case 1: spec.granularity = GranularitySpec::period(std::chrono::milliseconds(5 + rng() % 50)); break;
        default: spec.granularity = {static_cast<std::uint32_t>(2 + rng() % 30), std::chrono::milliseconds(10 + rng() % 40)};
      }
      s.identity = spec.pass_through();
      subs.push_back(s);
      d.subscribe(s.node, spec, {[](const Template&) {}, [&got, i](const Delivery& del) { got[i].push_back(del); }});
    }
    w.kernel.run();

    std::vector<NodeId> pubs(nodes.begin() + 8, nodes.begin() + 16);
    for (auto p : pubs)
      d.publish_template(p, Template{p, 1, v.ttl,
                                     {{v.flow, AttrType::kFlowKey},
                                      {v.bytes, AttrType::kCounter64},
                                      {v.packets, AttrType::kCounter64},
                                      {v.ts, AttrType::kTimestamp},
                                      {v.gauge, AttrType::kGauge64},
                                      {v.cost, AttrType::kGauge64}}});
    w.kernel.run();

    std::vector<Published> log;
    for (int i = 0; i < kEventsPerWorld; ++i) {
      Published p{0x04000000u | static_cast<std::uint32_t>(rng() % 0x40000), rng() % 2000,
                  static_cast<std::int64_t>(rng() % 1000000000), static_cast<std::int64_t>(rng() % 4000) - 2000,
                  static_cast<std::int64_t>(rng() % 100000)};
      NodeId pub = pubs[rng() % pubs.size()];
      d.publish_data(pub, EventRecord{v.ttl, 1, pub,
                                      {flow_to(p.dst), Counter{p.bytes}, Counter{1 + rng() % 9}, Timestamp{p.ts},
                                       Gauge{p.queue}, Gauge{p.cost}}});
      log.push_back(p);
      if (rng() % 4 == 0) w.kernel.run(w.kernel.now() + std::chrono::microseconds(rng() % 3000));
    }
    d.drain();

    TopicId topic = d.topic_of(v.ttl);
    for (std::size_t i = 0; i < subs.size() && failure.empty(); ++i) {
      std::uint64_t n = 0, sum = 0;
      std::int64_t mn = std::numeric_limits<std::int64_t>::max(), mx = std::numeric_limits<std::int64_t>::min();
      long double cost_sum = 0;
      for (const auto& p : log)
        if (flat_accepts(subs[i], p)) {
          ++n;
          sum += p.bytes;
          mn = std::min(mn, p.ts);
          mx = std::max(mx, p.queue);
          cost_sum += static_cast<long double>(p.cost);
        }
      if (subs[i].identity) {
        // identity aggregation: the delivered multiset is the matching publish log
        using Row = std::tuple<std::uint32_t, std::uint64_t, std::int64_t, std::int64_t, std::int64_t>;
        std::multiset<Row> want, have;
        for (const auto& p : log)
          if (flat_accepts(subs[i], p)) want.insert({p.dst, p.bytes, p.ts, p.queue, p.cost});
        bool ones = true;
        for (const auto& del : got[i]) {
          const auto& r = del.record.values;
          ones = ones && del.meta.base_count == 1 && r.size() == 6;
          if (r.size() != 6) break;
          have.insert({std::get<FlowKey>(r[0]).dst.v, std::get<Counter>(r[1]).v, std::get<Timestamp>(r[3]).us,
                       std::get<Gauge>(r[4]).v, std::get<Gauge>(r[5]).v});
        }
        deliveries += got[i].size();
        ++checked;
        ++identity_subs;
        if (!ones || have != want)
          failure = fmt::format("world {} sub {}: pass-through delivered {} events, oracle {}", wi, i, have.size(), want.size());
        continue;
      }
      std::uint64_t bc = 0, gsum = 0, gcount = 0;
      std::int64_t gmn = std::numeric_limits<std::int64_t>::max(), gmx = std::numeric_limits<std::int64_t>::min();
      long double gcost = 0;
      for (const auto& del : got[i]) {
        const auto& t = *del.tmpl;
        auto at = [&](ConceptId a) -> const Value& { return del.record.values.at(t.index_of(a).value()); };
        bc += del.meta.base_count;
        gsum += std::get<Counter>(at(v.bytes)).v;
        gcount += std::get<Counter>(at(v.packets)).v;
        gmn = std::min(gmn, std::get<Timestamp>(at(v.ts)).us);
        gmx = std::max(gmx, std::get<Gauge>(at(v.gauge)).v);
        const Value& c = at(v.cost);
        double mean = std::holds_alternative<Float>(c) ? std::get<Float>(c).v : static_cast<double>(std::get<Gauge>(c).v);
        gcost += static_cast<long double>(mean) * del.meta.base_count;
      }
      deliveries += got[i].size();
      auto depth = d.tree_depth(subs[i].node, topic).value_or(0);
      max_depth = std::max(max_depth, depth);
      ++checked;
      if (bc != n) failure = fmt::format("world {} sub {}: baseCount {} != {}", wi, i, bc, n);
      else if (gsum != sum) failure = fmt::format("world {} sub {}: SUM {} != {}", wi, i, gsum, sum);
      else if (gcount != n) failure = fmt::format("world {} sub {}: COUNT {} != {}", wi, i, gcount, n);
      else if (n && gmn != mn) failure = fmt::format("world {} sub {}: MIN {} != {}", wi, i, gmn, mn);
      else if (n && gmx != mx) failure = fmt::format("world {} sub {}: MAX {} != {}", wi, i, gmx, mx);
      else if (n) {
        double flat = static_cast<double>(cost_sum / n);
        double mean = static_cast<double>(gcost / n);
        // one merge per tree level plus the subscriber's own stage
        double allowed = static_cast<double>(depth + 2) * ulp(flat);
        double err = std::abs(mean - flat);
        worst_ratio = std::max(worst_ratio, allowed > 0 ? err / allowed : 0.0);
        if (err > allowed) failure = fmt::format("world {} sub {}: MEAN {} vs {} ({} > {})", wi, i, mean, flat, err, allowed);
      }
    }
  }
  double secs = seconds_since(t0);
  if (failure.empty() && max_depth < 3) failure = fmt::format("deepest tree only {} levels", max_depth);
  if (failure.empty() && secs >= 10) failure = fmt::format("took {:.2f}s", secs);
  return {failure.empty(),
          failure.empty() ? fmt::format("{} events, {} subscribers ({} pass-through), {} deliveries, depth<={}, mean err<={:.2f} of bound, {:.2f}s",
                                        kWorlds * kEventsPerWorld, checked, identity_subs, deliveries, max_depth, worst_ratio, secs)
                          : failure};
}

// ---------------------------------------------------------------- 2

FilterConstraint random_constraint(const Vocab& v, std::mt19937_64& rng) {
  switch (rng() % 6) {
    case 0:
      return FilterConstraint::in_prefix(v.dst(), Ipv4Prefix{Ipv4Addr{0x04000000u | static_cast<std::uint32_t>(rng() % 4) << 16},
                                                             static_cast<std::uint8_t>(8 + rng() % 16)});
    case 1: return FilterConstraint::at_least(v.bytes, Counter{rng() % 2000});
    case 2: return FilterConstraint::at_most(v.bytes, Counter{rng() % 2000});
    case 3: {
      std::int64_t lo = static_cast<std::int64_t>(rng() % 200) - 100;
      return FilterConstraint::between(v.gauge, Gauge{lo}, Gauge{lo + static_cast<std::int64_t>(rng() % 100)});
    }
    case 4: return FilterConstraint::equals(v.bytes, Counter{rng() % 20});
    default: {
      std::int64_t lo = static_cast<std::int64_t>(rng() % 1000);
      return FilterConstraint::between(v.ts, Timestamp{lo}, Timestamp{lo + static_cast<std::int64_t>(rng() % 500)});
    }
  }
}

SubscriptionSpec random_spec(const Vocab& v, std::mt19937_64& rng) {
  SubscriptionSpec s;
  switch (rng() % 3) {
    case 0: s.event_pattern = ConceptPattern::exact(v.ttl); break;
    case 1: s.event_pattern = ConceptPattern::exact(v.queue_full); break;
    default: s.event_pattern = v.tree.resolve("event.network.drops.*");
  }
  for (auto n = rng() % 4; n > 0; --n) s.filters.push_back(random_constraint(v, rng));
  for (auto a : {v.bytes, v.gauge, v.ts})
    if (rng() % 3 == 0) s.discards.push_back(a);
  if (rng() % 2) s.ops[v.bytes] = rng() % 2 ? AggregatorOp::kMax : AggregatorOp::kSum;
  switch (rng() % 3) {
    case 0: s.granularity = GranularitySpec::events(1 + rng() % 30); break;
    case 1: s.granularity = GranularitySpec::period(std::chrono::milliseconds(1 + rng() % 1000)); break;
    default: s.granularity = {static_cast<std::uint32_t>(1 + rng() % 30), std::chrono::milliseconds(1 + rng() % 1000)};
  }
  return s;
}

Outcome alignment() {
  Vocab v;
  std::mt19937_64 rng(31337);
  std::vector<Template> templates{
      Template{5, 1, v.ttl, {{v.flow, AttrType::kFlowKey}, {v.bytes, AttrType::kCounter64}, {v.gauge, AttrType::kGauge64}, {v.ts, AttrType::kTimestamp}}},
      Template{5, 2, v.queue_full, {{v.flow, AttrType::kFlowKey}, {v.bytes, AttrType::kCounter64}, {v.ts, AttrType::kTimestamp}}},
      Template{5, 3, v.ttl, {{v.flow, AttrType::kFlowKey}, {v.gauge, AttrType::kGauge64}}}};
  std::uint64_t cases = 0, accepted = 0, violations = 0, grain_violations = 0, keep_violations = 0;
  for (int pair = 0; pair < 10000; ++pair) {
    std::vector<SubscriptionSpec> kids{random_spec(v, rng), random_spec(v, rng)};
    auto up = align_upstream(kids);
    for (const auto& k : kids) {
      // maxEvents 1 forwards every event at once, finer than any period
      bool immediate = up.granularity.max_events == 1u;
      if (!immediate && k.granularity.max_events && (!up.granularity.max_events || *up.granularity.max_events > *k.granularity.max_events))
        ++grain_violations;
      if (!immediate && k.granularity.max_period && (!up.granularity.max_period || *up.granularity.max_period > *k.granularity.max_period))
        ++grain_violations;
      for (auto a : {v.flow, v.bytes, v.gauge, v.ts}) {
        bool kept = std::find(k.discards.begin(), k.discards.end(), a) == k.discards.end();
        if (kept && std::find(up.discards.begin(), up.discards.end(), a) != up.discards.end()) ++keep_violations;
      }
    }
    for (int e = 0; e < 20; ++e) {
      const auto& t = templates[rng() % templates.size()];
      EventRecord rec{t.event_id, t.template_id, t.issuer, {}};
      for (const auto& f : t.fields) {
        switch (f.type) {
          case AttrType::kFlowKey: rec.values.push_back(flow_to(0x04000000u | static_cast<std::uint32_t>(rng() % 0x40000))); break;
          case AttrType::kCounter64: rec.values.push_back(Counter{rng() % 2000}); break;
          case AttrType::kGauge64: rec.values.push_back(Gauge{static_cast<std::int64_t>(rng() % 300) - 150}); break;
          default: rec.values.push_back(Timestamp{static_cast<std::int64_t>(rng() % 1600)});
        }
      }
      ++cases;
      bool any = kids[0].accepts(rec, t, v.schema) || kids[1].accepts(rec, t, v.schema);
      if (!any) continue;
      ++accepted;
      if (!up.accepts(rec, t, v.schema)) ++violations;
    }
  }
  bool ok = violations == 0 && grain_violations == 0 && keep_violations == 0 && accepted > 0;
  return {ok, fmt::format("10000 pairs, {} events ({} child-accepted), {} filter / {} granularity / {} discard violations",
                          cases, accepted, violations, grain_violations, keep_violations)};
}

// ---------------------------------------------------------------- 3

Outcome routing() {
  constexpr std::size_t kN = 64;
  std::size_t bound = 6 + 4, worst = 0, routes = 0;
  std::string failure;
  for (std::uint64_t ring = 0; ring < 8 && failure.empty(); ++ring) {
    auto ids = random_ids(kN, 4000 + ring);
    overlay::Overlay o(ids, 4);
    std::mt19937_64 rng(ring);
    std::vector<std::uint64_t> keys;
    for (std::size_t i = 0; i < kN; ++i) keys.push_back(i % 4 == 0 ? ids[rng() % kN] + (rng() % 3) - 1 : rng());
    for (auto key : keys)
      for (auto start : ids) {
        ++routes;
        std::set<NodeId> seen{start};
        NodeId at = start;
        std::size_t hops = 0;
        while (auto next = o.next_hop(at, key)) {
          if (!seen.insert(*next).second) {
            failure = fmt::format("loop routing {:016x} from {:016x}", key, start);
            break;
          }
          at = *next;
          ++hops;
        }
        if (!failure.empty()) break;
        if (at != brute_owner(ids, key)) failure = fmt::format("{:016x} ended at {:016x}", key, at);
        else if (hops > bound) failure = fmt::format("{} hops > {}", hops, bound);
        else if (o.route(start, key).size() != hops + 1) failure = "route() disagrees with next_hop()";
        worst = std::max(worst, hops);
        if (!failure.empty()) break;
      }
  }
  return {failure.empty(), failure.empty() ? fmt::format("8 rings x 64x64 = {} routes, max {} hops (bound {})", routes, worst, bound)
                                           : failure};
}

// ---------------------------------------------------------------- 4

Outcome zfilter() {
  constexpr std::uint64_t kSeed = 0x7a46696c746572ULL;
  std::mt19937_64 rng(4242);
  std::uint64_t fp = 0, candidates = 0, missed = 0, contributors_total = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    int links = 1 + static_cast<int>(rng() % 30);
    std::vector<NodeId> ids(links + 1);
    for (auto& id : ids) id = rng();
    std::map<NodeId, NodeId> parent;
    std::map<NodeId, std::vector<NodeId>> children;
    for (int i = 1; i <= links; ++i) {
      NodeId par = ids[rng() % i];
      parent[ids[i]] = par;
      children[par].push_back(ids[i]);
    }
    // contributors: a random subset of publishers anywhere below the root
    std::set<NodeId> contributors;
    for (int i = 1; i <= links; ++i)
      if (rng() % 3 == 0) contributors.insert(ids[i]);
    if (contributors.empty()) contributors.insert(ids[1 + rng() % links]);
    contributors_total += contributors.size();
    ZFilter z;
    std::set<NodeId> on_path;
    for (auto c : contributors)
      for (NodeId n = c; n != ids[0]; n = parent[n]) {
        z = stamp_forward(z, {n, parent[n]}, kSeed);
        on_path.insert(n);
      }
    std::set<NodeId> reached;
    std::vector<NodeId> frontier{ids[0]};
    while (!frontier.empty()) {
      NodeId at = frontier.back();
      frontier.pop_back();
      const auto& ups = children[at];
      for (auto next : reverse_next_hops(at, ups, z, kSeed)) {
        reached.insert(next);
        frontier.push_back(next);
      }
      for (auto u : ups)
        if (!on_path.contains(u)) {
          ++candidates;
          if (reached.contains(u)) ++fp;
        }
    }
    for (auto c : contributors) missed += reached.contains(c) ? 0 : 1;
  }
  double rate = candidates ? static_cast<double>(fp) / static_cast<double>(candidates) : 1.0;
  return {missed == 0 && rate < 0.02,
          fmt::format("1000 trees, {} contributors, {} missed, false positives {}/{} = {:.3f}%", contributors_total, missed, fp,
                      candidates, rate * 100)};
}

// ---------------------------------------------------------------- 5

Value random_value(AttrType t, std::mt19937_64& rng) {
  switch (t) {
    case AttrType::kCounter64: return Counter{rng() >> (rng() % 64)};
    case AttrType::kGauge64: return Gauge{static_cast<std::int64_t>(rng())};
    case AttrType::kFloat64: {
      double x = std::ldexp(static_cast<double>(static_cast<std::int64_t>(rng())), static_cast<int>(rng() % 200) - 100);
      return Float{x};
    }
    case AttrType::kTimestamp: return Timestamp{static_cast<std::int64_t>(rng() >> 1)};
    case AttrType::kIpv4Addr: return Ipv4Addr{static_cast<std::uint32_t>(rng())};
    case AttrType::kIpv4Prefix: {
      auto len = static_cast<std::uint8_t>(rng() % 33);
      Ipv4Prefix p{Ipv4Addr{static_cast<std::uint32_t>(rng())}, len};
      p.addr.v &= p.mask();
      return p;
    }
    case AttrType::kFlowKey:
      return FlowKey{Ipv4Addr{static_cast<std::uint32_t>(rng())}, Ipv4Addr{static_cast<std::uint32_t>(rng())},
                     static_cast<std::uint16_t>(rng()), static_cast<std::uint16_t>(rng()), static_cast<std::uint8_t>(rng())};
    case AttrType::kNodeLoc: return NodeLoc{rng()};
  }
  return Counter{0};
}

Outcome codec() {
  std::mt19937_64 rng(55);
  std::string failure;
  for (int i = 0; i < 10000 && failure.empty(); ++i) {
    Template t{rng(), static_cast<std::uint16_t>(rng()), ConceptId{static_cast<std::uint32_t>(rng())}, {}};
    for (auto n = rng() % 16; n > 0; --n)
      t.fields.push_back({ConceptId{static_cast<std::uint32_t>(rng())}, static_cast<AttrType>(1 + rng() % 8)});
    auto tb = encode_template(t);
    if (decode_template(tb) != t || encode_template(decode_template(tb)) != tb || tb.size() != template_size(t)) {
      failure = fmt::format("template round trip {}", i);
      break;
    }
    EventRecord e{t.event_id, t.template_id, t.issuer, {}};
    for (const auto& f : t.fields) e.values.push_back(random_value(f.type, rng));
    auto eb = encode_event(e, t);
    if (decode_event(eb, t) != e || encode_event(decode_event(eb, t), t) != eb || eb.size() != event_size(t))
      failure = fmt::format("event round trip {}", i);
    AggregateMeta meta{static_cast<std::uint32_t>(rng()), sim_time_us(static_cast<std::int64_t>(rng() >> 1)),
                       sim_time_us(static_cast<std::int64_t>(rng() >> 1))};
    auto ab = encode_aggregate(e, meta, t);
    if (decode_aggregate(ab, t) != std::pair{e, meta} || ab.size() != aggregate_size(t))
      failure = fmt::format("aggregate round trip {}", i);
  }

  // golden bytes, produced by an independent encoder
  constexpr NodeId kIssuer = 0x0102030405060708ULL;
  constexpr ConceptId kEvent{0x03010101};
  constexpr ConceptId kFlow{0x04010000}, kLoc{0x04020000}, kTs{0x04030000};
  constexpr ConceptId kCnt{0x04040000}, kGau{0x04050000}, kFlt{0x04060000}, kAddr{0x04070000}, kPfx{0x04080000};
  Template empty{kIssuer, 9, kEvent, {}};
  Template drop{kIssuer, 1, kEvent, {{kFlow, AttrType::kFlowKey}, {kLoc, AttrType::kNodeLoc}, {kTs, AttrType::kTimestamp}}};
  EventRecord drop_event{kEvent, 1, kIssuer,
                         {FlowKey{parse_ipv4("10.0.0.1"), parse_ipv4("4.2.1.7"), 1234, 80, 6}, NodeLoc{0x1122334455667788ULL},
                          Timestamp{1500000}}};
  Template all{kIssuer, 2, kEvent,
               {{kCnt, AttrType::kCounter64},
                {kGau, AttrType::kGauge64},
                {kFlt, AttrType::kFloat64},
                {kTs, AttrType::kTimestamp},
                {kAddr, AttrType::kIpv4Addr},
                {kPfx, AttrType::kIpv4Prefix},
                {kFlow, AttrType::kFlowKey},
                {kLoc, AttrType::kNodeLoc}}};
  EventRecord all_event{kEvent, 2, kIssuer,
                        {Counter{0xFFFFFFFFFFFFFFFEULL}, Gauge{-42}, Float{3.25}, Timestamp{987654321}, parse_ipv4("192.168.1.1"),
                         parse_prefix("4.2.0.0/16"), FlowKey{parse_ipv4("1.2.3.4"), parse_ipv4("5.6.7.8"), 65535, 0, 17},
                         NodeLoc{0xDEADBEEFCAFEF00DULL}}};
  AggregateMeta meta{3, sim_time_us(1000), sim_time_us(2000)};
  std::vector<std::pair<std::string, std::function<wire::Bytes()>>> golden{
      {"template_empty.hex", [&] { return encode_template(empty); }},
      {"template_drop.hex", [&] { return encode_template(drop); }},
      {"event_drop.hex", [&] { return encode_event(drop_event, drop); }},
      {"aggregate_drop.hex", [&] { return encode_aggregate(drop_event, meta, drop); }},
      {"template_alltypes.hex", [&] { return encode_template(all); }},
      {"event_alltypes.hex", [&] { return encode_event(all_event, all); }}};
  for (const auto& [file, enc] : golden) {
    if (!failure.empty()) break;
    auto expected = read_hex_fixture(file);
    if (enc() != expected || enc() != enc()) failure = "golden mismatch " + file;
  }
  return {failure.empty(), failure.empty() ? fmt::format("10000 random round trips, {} golden fixtures", golden.size()) : failure};
}

// ---------------------------------------------------------------- 6

Outcome dws_oracle() {
  Vocab v;
  auto ids = random_ids(48, 606);
  overlay::Overlay o(ids);
  store::RetentionPolicy retention;
  retention.base_ttl = 5s;
  retention.per_tag_bonus = {{v.tag_ddos, 10s}, {v.tag_other, 3s}};
  store::Dws dws(o, v.schema, store::PartitionScheme{700ms}, retention);
  auto tmpl = std::make_shared<const Template>(Template{
      9, 1, v.ttl, {{v.flow, AttrType::kFlowKey}, {v.bytes, AttrType::kCounter64}, {v.gauge, AttrType::kGauge64}, {v.ts, AttrType::kTimestamp}}});
  std::vector<ConceptId> events{v.ttl, v.queue_full, v.overload};
  std::mt19937_64 rng(6006);

  struct Truth {
    store::DwsEntry e;
    std::int64_t expires_us;
  };
  std::map<store::EntryKey, Truth> truth;
  constexpr std::int64_t kSpan = 20000000;
  std::vector<std::int64_t> stamps;
  for (int i = 0; i < 4000; ++i) stamps.push_back(static_cast<std::int64_t>(rng() % kSpan));
  std::sort(stamps.begin(), stamps.end());
  std::vector<store::DwsEntry> inserted;
  for (auto ts : stamps) {
    store::DwsEntry e;
    // a fraction re-inserts an earlier event carrying new tags
    if (!inserted.empty() && rng() % 10 == 0) e = inserted[rng() % inserted.size()];
    else {
      e.record = EventRecord{events[rng() % 3], 1, 9,
                             {flow_to(0x04000000u | static_cast<std::uint32_t>(rng() % 0x40000)), Counter{rng() % 1500},
                              Gauge{static_cast<std::int64_t>(rng() % 200) - 100}, Timestamp{ts}}};
      e.meta = AggregateMeta{1, sim_time_us(ts), sim_time_us(ts)};
      e.tmpl = tmpl;
      inserted.push_back(e);
    }
    e.tags.clear();
    if (rng() % 5 == 0) e.tags.insert(v.tag_ddos);
    if (rng() % 5 == 0) e.tags.insert(v.tag_other);
    auto key = store::key_of(e);
    dws.insert(e, sim_time_us(ts));
    auto it = truth.find(key);
    if (it == truth.end()) {
      std::int64_t life = 5000000;
      for (auto t : e.tags) life += t == v.tag_ddos ? 10000000 : 3000000;
      truth.emplace(key, Truth{e, ts + life});
    } else {
      for (auto t : e.tags)
        if (it->second.e.tags.insert(t).second) it->second.expires_us += t == v.tag_ddos ? 10000000 : 3000000;
    }
  }

  const std::int64_t now = kSpan;
  std::uint64_t nonempty = 0, total_hits = 0;
  std::string failure;
  for (int qi = 0; qi < 1000 && failure.empty(); ++qi) {
    store::LookupQuery q;
    auto pick = rng() % 3;
    q.event_pattern = pick == 0 ? ConceptPattern::exact(events[rng() % 3])
                                : v.tree.resolve(pick == 1 ? "event.network.*" : "event.*");
    std::int64_t a = static_cast<std::int64_t>(rng() % kSpan), b = static_cast<std::int64_t>(rng() % kSpan);
    q.from = sim_time_us(std::min(a, b));
    q.to = sim_time_us(std::max(a, b));
    std::optional<std::pair<std::uint32_t, int>> prefix;
    std::optional<std::pair<std::uint64_t, std::uint64_t>> bytes;
    std::optional<std::pair<std::int64_t, std::int64_t>> gauge;
    if (rng() % 3) {
      prefix = {0x04000000u | static_cast<std::uint32_t>(rng() % 4) << 16, 14 + static_cast<int>(rng() % 4)};
      q.attr_ranges.push_back(FilterConstraint::in_prefix(
          v.dst(), Ipv4Prefix{Ipv4Addr{prefix->first}, static_cast<std::uint8_t>(prefix->second)}));
    }
    if (rng() % 2) {
      std::uint64_t lo = rng() % 1500;
      bytes = {lo, lo + rng() % 800};
      q.attr_ranges.push_back(FilterConstraint::between(v.bytes, Counter{bytes->first}, Counter{bytes->second}));
    }
    if (rng() % 2) {
      std::int64_t lo = static_cast<std::int64_t>(rng() % 200) - 100;
      gauge = {lo, lo + static_cast<std::int64_t>(rng() % 120)};
      q.attr_ranges.push_back(FilterConstraint::between(v.gauge, Gauge{gauge->first}, Gauge{gauge->second}));
    }
    std::set<store::EntryKey> expected;
    for (const auto& [key, t] : truth) {
      const auto& e = t.e;
      if (t.expires_us <= now) continue;
      auto name = v.tree.name(e.record.event_id);
      if (pick == 0 && e.record.event_id != q.event_pattern.id) continue;
      if (pick == 1 && !name.starts_with("event.network.")) continue;
      if (pick == 2 && !name.starts_with("event.")) continue;
      std::int64_t ts = to_us(e.meta.period_start);
      if (ts < to_us(q.from) || ts > to_us(q.to)) continue;
      std::uint32_t dst = std::get<FlowKey>(e.record.values[0]).dst.v;
      if (prefix) {
        std::uint32_t mask = ~0u << (32 - prefix->second);
        if ((dst & mask) != (prefix->first & mask)) continue;
      }
      std::uint64_t by = std::get<Counter>(e.record.values[1]).v;
      if (bytes && (by < bytes->first || by > bytes->second)) continue;
      std::int64_t g = std::get<Gauge>(e.record.values[2]).v;
      if (gauge && (g < gauge->first || g > gauge->second)) continue;
      expected.insert(key);
    }
    std::set<store::EntryKey> got;
    for (const auto& e : dws.lookup(q, sim_time_us(now))) got.insert(store::key_of(e));
    if (got != expected) failure = fmt::format("query {}: {} results, oracle {}", qi, got.size(), expected.size());
    nonempty += expected.empty() ? 0 : 1;
    total_hits += expected.size();
  }
  return {failure.empty(), failure.empty() ? fmt::format("1000 queries over {} entries, {} non-empty, {} hits", truth.size(),
                                                         nonempty, total_hits)
                                           : failure};
}

// ---------------------------------------------------------------- 7, 8

scenario::Config config_file(const std::string& name) {
  return scenario::load_config(std::string(DISCO_CONFIG_DIR) + "/" + name);
}

Outcome ddos() {
  auto base = config_file("default.ini");
  auto t0 = std::chrono::steady_clock::now();
  auto ten = scenario::run_scenario(base, 1);
  double single = seconds_since(t0);
  std::vector<std::string> problems;
  int detected = 0;
  for (const auto& e : ten.publish_log) detected += e.stream == "challenge-detected" ? 1 : 0;
  if (detected != 1 || ten.challenges.size() != 1) problems.push_back(fmt::format("default detected {} times", detected));
  if (ten.false_alarms != 0) problems.push_back(fmt::format("default raised {} false alarms", ten.false_alarms));

  auto flash = scenario::run_scenario(config_file("flash_crowd.ini"), 1);
  if (!flash.challenges.empty() || flash.false_alarms != 0)
    problems.push_back(fmt::format("flash crowd: {} detections, {} false alarms", flash.challenges.size(), flash.false_alarms));

  auto one_cfg = base;
  one_cfg.detector.steady_max_events = 1;
  base.detector.steady_max_events = 10;
  auto a = scenario::run_scenario(base, 1);
  auto b = scenario::run_scenario(one_cfg, 1);
  double ratio = a.a_path_bytes ? static_cast<double>(b.a_path_bytes) / static_cast<double>(a.a_path_bytes) : 0;
  if (ratio < 5.0) problems.push_back(fmt::format("byte reduction only {:.2f}x", ratio));
  bool same = a.challenges.size() == b.challenges.size() && a.false_alarms == b.false_alarms;
  for (std::size_t i = 0; same && i < a.challenges.size(); ++i)
    same = a.challenges[i].detected == b.challenges[i].detected && a.challenges[i].ended == b.challenges[i].ended &&
           a.challenges[i].prefix == b.challenges[i].prefix;
  if (!same) problems.push_back("paired runs disagree on detection");
  if (single >= 30) problems.push_back(fmt::format("single run took {:.1f}s", single));
  if (!problems.empty()) {
    std::string s;
    for (const auto& p : problems) s += (s.empty() ? "" : "; ") + p;
    return {false, s};
  }
  return {true, fmt::format("1 detection after {} us, flash crowd 0 alarms, A path bytes {} vs {} ({:.1f}x), run {:.2f}s",
                            ten.detect_latency_us.value_or(-1), a.a_path_bytes, b.a_path_bytes, ratio, single)};
}

Outcome determinism() {
  std::vector<std::string> files{"default.ini", "flash_crowd.ini"};
  std::size_t trace_bytes = 0;
  for (const auto& f : files)
    for (std::uint64_t seed : {1u, 7u}) {
      auto c = config_file(f);
      std::ostringstream t1, t2;
      auto m1 = scenario::run_scenario(c, seed, &t1).to_json();
      auto m2 = scenario::run_scenario(c, seed, &t2).to_json();
      if (m1 != m2) return {false, fmt::format("{} seed {}: metrics differ", f, seed)};
      if (t1.str() != t2.str()) return {false, fmt::format("{} seed {}: traces differ", f, seed)};
      if (t1.str().empty()) return {false, "empty trace"};
      trace_bytes += t1.str().size();
    }
  return {true, fmt::format("2 configs x 2 seeds identical, {} trace bytes compared", trace_bytes)};
}

// ---------------------------------------------------------------- 9

Outcome regulation() {
  std::string failure;
  int worlds = 0;
  for (std::uint64_t seed = 0; seed < 10 && failure.empty(); ++seed, ++worlds) {
    World w(32, 900 + seed);
    auto& d = w.d();
    auto& v = w.vocab;
    std::vector<ConceptId> families{v.ttl, v.overload, v.heavy};
    std::vector<NodeId> pubs{w.ids[1], w.ids[5], w.ids[9]};
    std::map<std::pair<NodeId, TopicId>, int> none, ready;
    for (auto p : pubs) {
      d.set_publisher_callbacks(p, {[&none, p](TopicId t) { ++none[{p, t}]; }, [&ready, p](TopicId t) { ++ready[{p, t}]; }});
      for (std::size_t f = 0; f < families.size(); ++f)
        d.publish_template(p, Template{p, static_cast<std::uint16_t>(f + 1), families[f],
                                       {{v.flow, AttrType::kFlowKey}, {v.bytes, AttrType::kCounter64}}});
    }
    for (int i = 0; i < 30; ++i) {
      for (auto p : pubs)
        for (std::size_t f = 0; f < families.size(); ++f)
          d.publish_data(p, EventRecord{families[f], static_cast<std::uint16_t>(f + 1), p,
                                        {flow_to(0x04020000u + i), Counter{static_cast<std::uint64_t>(i)}}});
      w.kernel.run(w.kernel.now() + 3ms);
    }
    w.kernel.run();
    for (auto p : pubs)
      for (auto fam : families) {
        TopicId t = d.topic_of(fam);
        if (none[{p, t}] != 1) failure = fmt::format("seed {}: {} no-subscriber notifications", seed, none[{p, t}]);
        if (ready[{p, t}] != 0) failure = fmt::format("seed {}: early ready notification", seed);
      }
    if (!failure.empty()) break;
    // first subscription on one topic only
    std::uint64_t got = 0;
    SubscriptionSpec s;
    s.event_pattern = ConceptPattern::exact(v.overload);
    d.subscribe(w.ids[20], s, {[](const Template&) {}, [&got](const Delivery&) { ++got; }});
    w.kernel.run();
    SubscriptionSpec s2 = s;
    d.subscribe(w.ids[21], s2, {});
    w.kernel.run();
    for (auto p : pubs) {
      for (auto fam : families) {
        TopicId t = d.topic_of(fam);
        int want = fam == v.overload ? 1 : 0;
        if (ready[{p, t}] != want) failure = fmt::format("seed {}: {} ready notifications, want {}", seed, ready[{p, t}], want);
        if (none[{p, t}] != 1) failure = fmt::format("seed {}: repeated no-subscriber notification", seed);
      }
      d.publish_data(p, EventRecord{v.overload, 2, p, {flow_to(0x04020000u), Counter{1}}});
    }
    w.kernel.run();
    if (failure.empty() && got < pubs.size()) failure = fmt::format("seed {}: only {} events after ready", seed, got);
  }
  return {failure.empty(), failure.empty() ? fmt::format("{} worlds x 3 publishers x 3 topics", worlds) : failure};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    Outcome (*fn)();
  };
  const Criterion criteria[] = {
      {1, "aggregation conservation", conservation},
      {2, "finest-grained alignment", alignment},
      {3, "tree validity and routing", routing},
      {4, "z-filter reply", zfilter},
      {5, "codec", codec},
      {6, "dws oracle equivalence", dws_oracle},
      {7, "ddos scenario", ddos},
      {8, "determinism", determinism},
      {9, "no-subscriber regulation", regulation},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
