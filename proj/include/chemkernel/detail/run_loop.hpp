#pragma once

#include <algorithm>
#include <chrono>
#include <limits>
#include <span>
#include <string>
#include <thread>

#include "chemkernel/trace.hpp"

namespace chemkernel::detail {

// Merges firings, injections, patches and tap samples in time order. At equal
// times: samples, then patches, then injections. Firings scheduled strictly
// before an external event happen first.
template <typename EngineT, typename Options, typename Injection, typename Patch>
void run_loop(EngineT& engine, Trace& trace, double t_end, std::span<const Injection> events,
              std::span<const Patch> patches, const Options& options) {
  for (std::size_t i = 1; i < events.size(); ++i)
    if (events[i].time < events[i - 1].time) throw Error("injection events must be ordered by time");
  for (std::size_t i = 1; i < patches.size(); ++i)
    if (patches[i].time < patches[i - 1].time) throw Error("patches must be ordered by time");

  const auto wall_start = std::chrono::steady_clock::now();
  const double virtual_start = engine.clock();
  auto pace = [&](double t) {
    if (!options.pace_realtime) return;
    std::this_thread::sleep_until(
        wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                         std::chrono::duration<double>(t - virtual_start)));
  };

  const double never = std::numeric_limits<double>::infinity();
  const double sample_origin = engine.clock();
  std::uint64_t sample_index = 0;
  auto sample_time = [&] {
    return options.sample_period > 0.0
               ? sample_origin + static_cast<double>(sample_index) * options.sample_period
               : never;
  };
  auto snapshot = [&] {
    std::vector<std::pair<SpeciesId, std::int64_t>> out;
    if (options.taps.empty()) {
      for (const auto& s : engine.network().species) out.emplace_back(s.id, engine.count(s.id));
    } else {
      for (auto s : options.taps) out.emplace_back(s, engine.count(s));
    }
    return out;
  };

  std::size_t next_event = 0;
  std::size_t next_patch = 0;
  while (true) {
    const double t_event = next_event < events.size() ? events[next_event].time : never;
    const double t_patch = next_patch < patches.size() ? patches[next_patch].time : never;
    const double t_sample = sample_time();
    const double t_ext = std::min({t_event, t_patch, t_sample});
    const double horizon = std::min(t_ext, t_end);
    while (auto ev = engine.step_before(horizon)) {
      pace(ev->time);
      ++trace.firings;
      if (options.record_firings) {
        TraceRecord rec{ev->time, RecordKind::fire, ev->reaction, {}, {}, {}};
        for (const auto& d : ev->delta) rec.delta.emplace_back(d.species, d.amount);
        trace.records.push_back(std::move(rec));
      }
    }
    if (t_ext > t_end) {
      engine.advance_to(t_end);
      break;
    }
    engine.advance_to(t_ext);
    if (t_sample == t_ext) {
      trace.records.push_back(TraceRecord{t_sample, RecordKind::sample, -1, {}, snapshot(), {}});
      ++sample_index;
    } else if (t_patch == t_ext) {
      const auto& p = patches[next_patch++];
      const auto outcome = engine.reconfigure(p.patch);
      trace.records.push_back(TraceRecord{
          p.time, RecordKind::reconfig, -1, {}, {},
          std::string(outcome.structural ? "structural" : "parameter") +
              " edits=" + std::to_string(outcome.edits)});
    } else {
      const auto& ev = events[next_event++];
      pace(ev.time);
      engine.inject(ev);
      ++trace.injections;
      if (options.record_injections)
        trace.records.push_back(TraceRecord{ev.time, RecordKind::inject, ev.species.value,
                                            {{ev.species, ev.amount}}, {}, {}});
    }
  }
}

}  // namespace chemkernel::detail
