#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "disco/events.hpp"
#include "disco/time.hpp"
#include "disco/vocabulary.hpp"

namespace disco::scenario {

struct TopologyConfig {
  std::int64_t per_hop_latency_us = 2000;
  std::int64_t jitter_us = 0;
  int extra_nodes = 25;  // overlay peers besides R, T, V, U, S, A, M
  int successors = 4;
  std::uint64_t id_salt = 0x5eed;
};

enum class TrafficKind { kDdos, kFlashCrowd };

struct TrafficModel {
  TrafficKind kind = TrafficKind::kDdos;
  double duration_s = 20.0;
  double phase_start_s = 5.0;  // attack or flash crowd
  double phase_end_s = 13.0;
  double phase_drop_rate = 300.0;  // TTL-exceeded drops/s at V and U together
  double v_fraction = 0.5;
  double dilution_fraction = 0.3;  // share of U's attack drops aimed at the dilution prefix
  double phase_queue_full_rate = 400.0;
  double phase_overload_rate = 40.0;
  double phase_cost = 50.0;
  double normal_cost = 10.0;
  double background_drop_rate = 4.0;  // per router
  double background_queue_full_rate = 2.0;
  double background_overload_rate = 0.5;
  Ipv4Prefix victim_prefix{Ipv4Addr{0x04020000}, 16};
  Ipv4Prefix dilution_prefix{Ipv4Addr{0x07070000}, 16};
  Ipv4Prefix server_prefix{Ipv4Addr{0x09090000}, 16};
};

struct DetectorConfig {
  std::int64_t heavy_window_ms = 250;
  int heavy_threshold = 50;
  double heavy_cooldown_s = 5.0;
  std::int64_t window_ms = 500;
  double drop_rate_threshold = 100.0;
  double cost_threshold = 25.0;
  double overload_rate_threshold = 20.0;
  int quiet_windows = 3;
  std::uint32_t steady_max_events = 10;
  std::int64_t steady_max_period_ms = 200;
  std::uint32_t overload_max_events = 10;
  std::string analyzer_pattern = "event.network.drops.forwarding.rfc791-ttl-exceeded";
};

struct RemediationConfig {
  bool enabled = true;
  std::uint32_t max_events = 50;
  std::int64_t max_period_ms = 1000;
  std::int64_t reply_interval_ms = 1000;
  std::int64_t lookback_ms = 2000;
  bool close_loop = false;
  double attack_scale = 0.1;
};

struct DiscoConfig {
  std::size_t lts_capacity = 16384;
  std::int64_t lts_ttl_ms = 10000;
  int zfilter_k = 4;
  std::uint64_t zfilter_seed = 0x7a46696c746572ULL;
  std::size_t early_publisher_capacity = 64;
  bool regulate_publishers = true;
  std::int64_t bucket_ms = 1000;
  std::int64_t base_ttl_s = 30;
  std::int64_t tag_bonus_s = 300;
  std::int64_t lookup_bonus_s = 10;
  std::int64_t subscriber_bonus_s = 5;
};

struct Config {
  TopologyConfig topology;
  TrafficModel traffic;
  DetectorConfig detector;
  RemediationConfig remediation;
  DiscoConfig disco;

  void validate() const;  // ConfigInvalid
};

/// INI document with sections [topology], [traffic], [detector],
/// [remediation], [disco]. Missing keys keep their defaults; unknown keys
/// and malformed values throw ConfigInvalid.
Config parse_config(std::istream& in);
Config load_config(const std::string& path);

/// "1500000", "1500000us", "1500ms", "1.5s". Bare numbers are microseconds.
/// Throws ConfigInvalid.
SimTime parse_sim_time(const std::string& text);

/// Vocabulary used by every scenario participant.
VocabularyTree build_vocabulary();

using MetricValue = std::variant<std::int64_t, double>;

struct ChallengeRecord {
  SimTime detected{};
  std::optional<SimTime> ended;
  Ipv4Prefix prefix;
};

struct PublishLogEntry {
  SimTime at{};
  std::string source;  // node name
  std::string stream;  // "attack-drop", "background-drop", ...
};

struct Metrics {
  std::map<std::string, MetricValue> values;

  std::vector<ChallengeRecord> challenges;
  std::int64_t false_alarms = 0;
  std::optional<std::int64_t> detect_latency_us;
  std::uint64_t a_path_bytes = 0;
  std::uint64_t a_drop_messages = 0;
  std::uint64_t a_drop_base = 0;
  std::uint64_t mixed_origin = 0;
  std::set<std::uint32_t> a_drop_event_ids;  // event ids seen on A's drop subscription
  std::uint64_t elected = 0;
  std::uint64_t diag_drop_entries = 0;
  std::uint64_t diag_overload_entries = 0;
  std::vector<PublishLogEntry> publish_log;

  /// JSON object, keys in ascending order.
  std::string to_json() const;
};

/// Runs the scenario on a fresh simulated deployment. Throws ConfigInvalid.
/// `until` cuts the run short of the configured duration.
Metrics run_scenario(const Config& config, std::uint64_t seed, std::ostream* trace = nullptr,
                     std::optional<SimTime> until = std::nullopt);

}  // namespace disco::scenario
