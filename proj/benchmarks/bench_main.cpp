#include <benchmark/benchmark.h>

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "disco/aggregation.hpp"
#include "disco/events.hpp"
#include "disco/overlay.hpp"
#include "disco/reply.hpp"
#include "disco/scenario.hpp"
#include "disco/store.hpp"
#include "disco/vocabulary.hpp"

using namespace disco;

namespace {

constexpr NodeId kIssuer = 0x0102030405060708ULL;

Template drop_template(const FlowKeySchema& schema, ConceptId event, ConceptId bytes, ConceptId ts) {
  return Template{kIssuer, 1, event, {{schema.base(), AttrType::kFlowKey}, {bytes, AttrType::kCounter64}, {ts, AttrType::kTimestamp}}};
}

EventRecord drop_event(ConceptId event, std::uint32_t dst, std::uint64_t bytes, std::int64_t ts) {
  return EventRecord{event, 1, kIssuer,
                     {FlowKey{Ipv4Addr{0x0a000001}, Ipv4Addr{dst}, 1234, 80, 6}, Counter{bytes}, Timestamp{ts}}};
}

struct Fixture {
  VocabularyTree vocab;
  FlowKeySchema schema = FlowKeySchema::register_in(vocab);
  ConceptId event = vocab.add("event.network.drops.forwarding.rfc791-ttl-exceeded");
  ConceptId bytes = vocab.add("attribute.packet.bytes");
  ConceptId ts = vocab.add("attribute.time.observed");
  Template tmpl = drop_template(schema, event, bytes, ts);
};

std::vector<NodeId> ring(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<NodeId> ids(n);
  for (auto& id : ids) id = rng();
  return ids;
}

void BM_EncodeEvent(benchmark::State& state) {
  Fixture f;
  auto e = drop_event(f.event, 0x04020001, 1500, 42);
  for (auto _ : state) benchmark::DoNotOptimize(encode_event(e, f.tmpl));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * event_size(f.tmpl)));
}
BENCHMARK(BM_EncodeEvent);

void BM_DecodeEvent(benchmark::State& state) {
  Fixture f;
  auto bytes = encode_event(drop_event(f.event, 0x04020001, 1500, 42), f.tmpl);
  for (auto _ : state) benchmark::DoNotOptimize(decode_event(bytes, f.tmpl));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes.size()));
}
BENCHMARK(BM_DecodeEvent);

void BM_Route(benchmark::State& state) {
  auto ids = ring(static_cast<std::size_t>(state.range(0)), 7);
  overlay::Overlay o(ids);
  std::mt19937_64 rng(1);
  std::size_t hops = 0;
  for (auto _ : state) {
    auto path = o.route(ids[rng() % ids.size()], rng());
    hops += path.size() - 1;
    benchmark::DoNotOptimize(path);
  }
  state.counters["hops"] = benchmark::Counter(static_cast<double>(hops), benchmark::Counter::kAvgIterations);
}
BENCHMARK(BM_Route)->Arg(64)->Arg(1024)->Arg(16384);

void BM_Accumulate(benchmark::State& state) {
  Fixture f;
  OpMap ops{{f.bytes, AggregatorOp::kMean}};
  auto plan = std::make_shared<const AggregationPlan>(derive_child_template(f.tmpl, {}, ops, 9, 2));
  auto e = drop_event(f.event, 0x04020001, 1500, 42);
  for (auto _ : state) {
    PendingAggregate agg(plan, SimTime{});
    for (int i = 0; i < 64; ++i) agg.accumulate(e, f.tmpl, 1);
    benchmark::DoNotOptimize(agg.finalize(SimTime{}));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Accumulate);

void BM_ZFilterReverse(benchmark::State& state) {
  constexpr std::uint64_t kSeed = 0x7a46696c746572ULL;
  auto ups = ring(8, 3);
  ZFilter z;
  for (std::size_t i = 0; i < ups.size(); i += 2) z = stamp_forward(z, {ups[i], 99}, kSeed);
  for (auto _ : state) benchmark::DoNotOptimize(reverse_next_hops(99, ups, z, kSeed));
}
BENCHMARK(BM_ZFilterReverse);

void BM_DwsLookup(benchmark::State& state) {
  Fixture f;
  auto ids = ring(64, 5);
  overlay::Overlay o(ids);
  store::Dws dws(o, f.schema);
  auto tmpl = std::make_shared<const Template>(f.tmpl);
  std::mt19937_64 rng(2);
  for (int i = 0; i < state.range(0); ++i) {
    store::DwsEntry e;
    auto ts = static_cast<std::int64_t>(rng() % 20000000);
    e.record = drop_event(f.event, 0x04000000u | static_cast<std::uint32_t>(rng() % 0x40000), rng() % 1500, ts);
    e.meta = AggregateMeta{1, sim_time_us(ts), sim_time_us(ts)};
    e.tmpl = tmpl;
    dws.insert(e, sim_time_us(0));
  }
  store::LookupQuery q;
  q.event_pattern = ConceptPattern::exact(f.event);
  q.from = sim_time_us(5000000);
  q.to = sim_time_us(8000000);
  q.attr_ranges = {FilterConstraint::in_prefix(f.schema.component_id(FlowField::kDstAddr), parse_prefix("4.2.0.0/16"))};
  for (auto _ : state) benchmark::DoNotOptimize(dws.lookup(q, sim_time_us(1)));
}
BENCHMARK(BM_DwsLookup)->Arg(1000)->Arg(10000);

void BM_Scenario(benchmark::State& state) {
  auto config = scenario::load_config(std::string(DISCO_CONFIG_DIR) + "/default.ini");
  std::uint64_t seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(scenario::run_scenario(config, seed++));
}
BENCHMARK(BM_Scenario)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
