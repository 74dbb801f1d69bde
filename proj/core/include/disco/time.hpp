#pragma once

#include <chrono>
#include <cstdint>

namespace disco {

/// Virtual clock of the simulated deployment. Epoch is the start of a run.
struct SimClock {
  using duration = std::chrono::microseconds;
  using rep = duration::rep;
  using period = duration::period;
  using time_point = std::chrono::time_point<SimClock, duration>;
  static constexpr bool is_steady = true;
};

using Duration = SimClock::duration;
using SimTime = SimClock::time_point;

constexpr SimTime sim_time_us(std::int64_t us) { return SimTime{Duration{us}}; }
constexpr std::int64_t to_us(SimTime t) { return t.time_since_epoch().count(); }
constexpr std::int64_t to_us(Duration d) { return d.count(); }

constexpr SimTime kSimEpoch{};
constexpr SimTime kSimTimeMax{Duration{INT64_MAX}};

}  // namespace disco
