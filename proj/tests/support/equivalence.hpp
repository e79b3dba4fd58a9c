#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "chemkernel/hw.hpp"
#include "chemkernel/ssa.hpp"

namespace testsupport {

struct EquivalenceResult {
  bool identical = true;
  std::size_t firings = 0;
  std::size_t injections = 0;
  std::string detail;
};

/// Steps the reference engine and the emulator side by side on one seed,
/// landing the same random injections in both, until `max_firings`, quiescence
/// or a count reaching `count_bound`.
inline EquivalenceResult run_equivalence(const chemkernel::ReactionNetwork& net, std::uint64_t seed,
                                         std::size_t max_firings = 300,
                                         std::int64_t count_bound = 1 << 12) {
  using namespace chemkernel;
  Engine ref(net, seed);
  hw::HwEngine emu(net, EngineLimits{}, seed);
  std::mt19937_64 events(seed ^ 0x9e3779b97f4a7c15ULL);
  EquivalenceResult out;

  auto fail = [&](std::string why) {
    out.identical = false;
    out.detail = std::move(why);
    return out;
  };
  auto same_counts = [&] { return ref.counts() == emu.counts(); };

  auto over_bound = [&] { return ref.counts().size() > 0 && ref.counts().maxCoeff() >= count_bound; };
  // Fires both engines up to `limit`, comparing every firing.
  auto compare_until = [&](double limit) -> bool {
    while (out.firings < max_firings && !over_bound()) {
      auto a = ref.step_before(limit);
      auto b = emu.step_before(limit);
      if (!a && !b) return true;
      if (!a || !b) {
        out.identical = false;
        out.detail = "only one engine fired at firing " + std::to_string(out.firings + 1);
        return false;
      }
      ++out.firings;
      if (a->reaction != b->reaction) {
        out.identical = false;
        out.detail = "firing " + std::to_string(out.firings) + ": reaction " +
                     std::to_string(a->reaction) + " vs " + std::to_string(b->reaction);
        return false;
      }
      if (std::abs(a->time - b->time) > 1e-4 * std::max(1.0, a->time)) {
        out.identical = false;
        out.detail = "firing " + std::to_string(out.firings) + ": time drift";
        return false;
      }
      if (!same_counts()) {
        out.identical = false;
        out.detail = "counts differ after firing " + std::to_string(out.firings);
        return false;
      }
      if (emu.registers().c_mem[0] != 1) {
        out.identical = false;
        out.detail = "constant cell overwritten";
        return false;
      }
    }
    return true;
  };

  // Injections arrive on their own clock, independent of the firing times.
  std::exponential_distribution<double> gap(20.0);
  double t = 0.0;
  while (out.firings < max_firings && !over_bound()) {
    t += gap(events);
    if (!compare_until(t)) return out;
    if (out.firings >= max_firings || over_bound()) break;
    if (net.species_count() == 0) break;
    const InjectionEvent ev{
        t,
        SpeciesId{static_cast<std::uint16_t>(
            std::uniform_int_distribution<std::size_t>(1, net.species_count())(events))},
        std::uniform_int_distribution<std::int64_t>(1, 20)(events)};
    ref.inject(ev);
    emu.inject(ev);
    ++out.injections;
    if (!same_counts()) return fail("counts differ after injection " + std::to_string(out.injections));
    if (!std::isfinite(ref.next_firing_time()) && !std::isfinite(emu.next_firing_time()) &&
        out.injections > 50)
      break;
  }
  return out;
}

}  // namespace testsupport
