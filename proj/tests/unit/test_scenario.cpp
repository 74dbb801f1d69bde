#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "disco/error.hpp"
#include "disco/scenario.hpp"

using namespace disco;
using namespace disco::scenario;

namespace {

Config default_config() { return load_config(std::string(DISCO_CONFIG_DIR) + "/default.ini"); }
Config flash_config() { return load_config(std::string(DISCO_CONFIG_DIR) + "/flash_crowd.ini"); }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return ErrorCode::kInvalidSpec;
}

Config parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::int64_t metric(const Metrics& m, const std::string& key) { return std::get<std::int64_t>(m.values.at(key)); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Config, DefaultFileMatchesBuiltInDefaults) {
  auto c = default_config();
  Config d;
  EXPECT_EQ(c.traffic.phase_drop_rate, d.traffic.phase_drop_rate);
  EXPECT_EQ(c.traffic.victim_prefix, d.traffic.victim_prefix);
  EXPECT_EQ(c.detector.steady_max_events, d.detector.steady_max_events);
  EXPECT_EQ(c.disco.zfilter_seed, d.disco.zfilter_seed);
  EXPECT_EQ(c.topology.id_salt, d.topology.id_salt);
  EXPECT_EQ(c.detector.analyzer_pattern, d.detector.analyzer_pattern);
  EXPECT_EQ(flash_config().traffic.kind, TrafficKind::kFlashCrowd);
}

TEST(Config, MissingKeysKeepDefaults) {
  auto c = parse("[traffic]\nphase_drop_rate = 0\n");
  EXPECT_EQ(c.traffic.phase_drop_rate, 0.0);
  EXPECT_EQ(c.traffic.duration_s, Config{}.traffic.duration_s);
  EXPECT_EQ(parse("").detector.window_ms, Config{}.detector.window_ms);
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_EQ(code_of([] { parse("[traffic]\nphase_drop_rat = 1\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[nonsense]\nx = 1\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[traffic]\nphase_drop_rate = fast\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[traffic]\nkind = botnet\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[traffic]\nvictim_prefix = 4.2.0.0/40\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[topology]\nsuccessors = 4x\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[remediation]\nenabled = maybe\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[traffic\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { load_config("/nonexistent/disco.ini"); }), ErrorCode::kConfigInvalid);
}

TEST(Config, ValidationRanges) {
  EXPECT_EQ(code_of([] { parse("[traffic]\nphase_start_s = 9\nphase_end_s = 8\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[traffic]\nphase_end_s = 30\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[traffic]\nphase_drop_rate = -1\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[detector]\nheavy_threshold = 0\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[detector]\ndrop_rate_threshold = 0\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[topology]\nper_hop_latency_us = 0\n"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse("[disco]\nlts_capacity = 0\n"); }), ErrorCode::kConfigInvalid);
  Config c;
  c.detector.analyzer_pattern = "event.no.such.thing";
  EXPECT_EQ(code_of([&] { run_scenario(c, 1); }), ErrorCode::kConfigInvalid);
}

TEST(Config, SimTimeParsing) {
  EXPECT_EQ(to_us(parse_sim_time("1500000")), 1500000);
  EXPECT_EQ(to_us(parse_sim_time("1500000us")), 1500000);
  EXPECT_EQ(to_us(parse_sim_time("1500ms")), 1500000);
  EXPECT_EQ(to_us(parse_sim_time("1.5s")), 1500000);
  EXPECT_EQ(code_of([] { parse_sim_time("soon"); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { parse_sim_time("-1s"); }), ErrorCode::kConfigInvalid);
}

TEST(Scenario, NoAttackNoChallenge) {
  auto c = default_config();
  c.traffic.phase_drop_rate = 0;
  c.traffic.phase_queue_full_rate = 0;
  c.traffic.phase_overload_rate = 0;
  auto m = run_scenario(c, 3);
  EXPECT_EQ(m.challenges.size(), 0u);
  EXPECT_EQ(m.false_alarms, 0);
  EXPECT_EQ(metric(m, "detect.latency_us"), -1);
}

TEST(Scenario, DefaultDetectsOnceAgainstPublishLog) {
  auto c = default_config();
  auto m = run_scenario(c, 1);
  ASSERT_EQ(m.challenges.size(), 1u);
  ASSERT_TRUE(m.challenges[0].ended.has_value());
  EXPECT_EQ(m.false_alarms, 0);
  ASSERT_TRUE(m.detect_latency_us.has_value());
  EXPECT_GT(*m.detect_latency_us, 0);
  EXPECT_LE(*m.detect_latency_us, 2000000);
  EXPECT_EQ(m.challenges[0].prefix.length, 16);
  EXPECT_TRUE(m.challenges[0].prefix.contains(c.traffic.victim_prefix.addr));

  // Oracle over the publish log: one detected and one ended publication by A,
  // the detection after the first attack drop and inside the phase.
  int detected = 0, ended = 0;
  SimTime first_attack = kSimTimeMax, detect_at{}, end_at{};
  for (const auto& e : m.publish_log) {
    if (e.stream == "attack-drop") first_attack = std::min(first_attack, e.at);
    if (e.stream == "challenge-detected") {
      ++detected;
      detect_at = e.at;
      EXPECT_EQ(e.source, "A");
    }
    if (e.stream == "end-of-challenge") {
      ++ended;
      end_at = e.at;
    }
  }
  EXPECT_EQ(detected, 1);
  EXPECT_EQ(ended, 1);
  EXPECT_GE(to_us(first_attack), 5000000);
  EXPECT_GT(detect_at, first_attack);
  EXPECT_EQ(detect_at, m.challenges[0].detected);
  EXPECT_EQ(to_us(detect_at) - 5000000, *m.detect_latency_us);
  EXPECT_GE(to_us(end_at), 13000000);
  EXPECT_GT(metric(m, "dws.inserted"), 0);
  EXPECT_GT(metric(m, "diag.lookup.overload"), 0);
  EXPECT_GT(metric(m, "diag.lookup.drops"), 0);
  EXPECT_GT(metric(m, "replies.visits"), 0);
}

TEST(Scenario, FlashCrowdRaisesNoAlarm) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto m = run_scenario(flash_config(), seed);
    EXPECT_EQ(m.challenges.size(), 0u);
    EXPECT_EQ(m.false_alarms, 0);
  }
}

TEST(Scenario, SteadyAggregationCutsBytesOnAnalyzerPath) {
  auto ten = default_config();
  auto one = ten;
  one.detector.steady_max_events = 1;
  auto a = run_scenario(ten, 4), b = run_scenario(one, 4);
  ASSERT_GT(a.a_path_bytes, 0u);
  EXPECT_GE(static_cast<double>(b.a_path_bytes) / static_cast<double>(a.a_path_bytes), 5.0);
  ASSERT_EQ(a.challenges.size(), b.challenges.size());
  for (std::size_t i = 0; i < a.challenges.size(); ++i) {
    EXPECT_EQ(a.challenges[i].detected, b.challenges[i].detected);
    EXPECT_EQ(a.challenges[i].ended, b.challenges[i].ended);
  }
  EXPECT_EQ(a.a_drop_base, b.a_drop_base);
}

TEST(Scenario, AnalyzerAggregatesMixBothRouters) {
  auto m = run_scenario(default_config(), 5);
  EXPECT_GT(m.mixed_origin, 0u);
  EXPECT_GT(m.a_drop_base, m.a_drop_messages);
}

TEST(Scenario, DropsPrefixSubscriptionSeesBothDropKinds) {
  auto c = default_config();
  c.detector.analyzer_pattern = "event.network.drops.*";
  auto m = run_scenario(c, 6);
  auto vocab = build_vocabulary();
  EXPECT_TRUE(m.a_drop_event_ids.contains(vocab.id_of("event.network.drops.forwarding.rfc791-ttl-exceeded").value));
  EXPECT_TRUE(m.a_drop_event_ids.contains(vocab.id_of("event.network.drops.queue-full").value));
}

TEST(Scenario, DeterministicMetricsAndTrace) {
  auto c = default_config();
  std::ostringstream t1, t2;
  auto a = run_scenario(c, 9, &t1).to_json();
  auto b = run_scenario(c, 9, &t2).to_json();
  EXPECT_EQ(a, b);
  EXPECT_EQ(t1.str(), t2.str());
  EXPECT_FALSE(t1.str().empty());
  EXPECT_NE(a, run_scenario(c, 10).to_json());
}

TEST(Scenario, MetricsDocument) {
  auto m = run_scenario(default_config(), 1);
  auto j = nlohmann::json::parse(m.to_json());
  for (const char* k : {"agg.ratio", "detect.latency_us", "false_alarms"}) EXPECT_TRUE(j.contains(k)) << k;
  bool link = false, topic = false, stretch = false;
  std::string prev;
  for (auto it = j.begin(); it != j.end(); ++it) {
    EXPECT_LT(prev, it.key());
    prev = it.key();
    link |= it.key().starts_with("bytes.link.");
    topic |= it.key().starts_with("msgs.topic.");
    stretch |= it.key().starts_with("stretch.topic.");
    if (it->is_number()) EXPECT_GE(it->get<double>(), 0.0) << it.key() << " must be non-negative";
  }
  EXPECT_TRUE(link && topic && stretch);
  EXPECT_GE(j["agg.ratio"].get<double>(), 1.0);
}

TEST(Scenario, UntilCutsTheRunShort) {
  auto m = run_scenario(default_config(), 1, nullptr, parse_sim_time("4s"));
  EXPECT_EQ(m.challenges.size(), 0u);
  for (const auto& e : m.publish_log) EXPECT_LT(to_us(e.at), 4000000);
}

TEST(Scenario, ClosedLoopScalesAttackDown) {
  auto open = default_config();
  auto closed = open;
  closed.remediation.close_loop = true;
  auto a = run_scenario(open, 2), b = run_scenario(closed, 2);
  auto count = [](const Metrics& m) {
    return std::count_if(m.publish_log.begin(), m.publish_log.end(), [](const auto& e) { return e.stream == "attack-drop"; });
  };
  EXPECT_LT(count(b), count(a));
}

#ifdef DISCO_SIM_PATH
namespace {
int run_cli(const std::string& args) {
  int rc = std::system((std::string(DISCO_SIM_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}
}  // namespace

TEST(Cli, ExitCodesOutputAndTrace) {
  auto dir = std::filesystem::temp_directory_path() / ("disco-cli-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::string cfg = std::string(DISCO_CONFIG_DIR) + "/default.ini";
  auto out1 = (dir / "a.json").string(), out2 = (dir / "b.json").string(), trace = (dir / "t.log").string();
  EXPECT_EQ(run_cli("--seed 1"), 2);
  EXPECT_EQ(run_cli("--config /nonexistent.ini"), 2);
  std::ofstream(dir / "bad.ini") << "[traffic]\nphase_drop_rate = lots\n";
  EXPECT_EQ(run_cli("--config " + (dir / "bad.ini").string()), 2);
  EXPECT_EQ(run_cli("--config " + cfg + " --seed 1 --until 8s --out " + out1 + " --trace " + trace), 0);
  EXPECT_EQ(run_cli("--config " + cfg + " --seed 1 --until 8s --out " + out2), 0);
  EXPECT_EQ(slurp(out1), slurp(out2));
  EXPECT_FALSE(slurp(trace).empty());
  std::filesystem::remove_all(dir);
}
#endif

TEST(Vocabulary, ShippedFileMatchesBuiltIn) {
  std::ostringstream built;
  build_vocabulary().dump(built);
  EXPECT_EQ(slurp(std::string(DISCO_CONFIG_DIR) + "/vocabulary.txt"), built.str());
  std::ifstream in(std::string(DISCO_CONFIG_DIR) + "/vocabulary.txt");
  auto loaded = VocabularyTree::load(in);
  EXPECT_EQ(loaded.id_of("event.server.overload.request-cost"), build_vocabulary().id_of("event.server.overload.request-cost"));
}
