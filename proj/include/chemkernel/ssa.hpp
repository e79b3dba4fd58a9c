#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "chemkernel/cadl.hpp"
#include "chemkernel/network.hpp"
#include "chemkernel/rng.hpp"
#include "chemkernel/trace.hpp"

namespace chemkernel {

inline constexpr double kNever = std::numeric_limits<double>::infinity();

/// LoMA propensity k * prod c_s^alpha, with an eligibility guard: zero unless
/// every reactant has at least alpha molecules. The product is accumulated in
/// slot order, one multiplication per unit of multiplicity, then k last; with
/// Scalar = float this is the hardware datapath's order.
template <typename Scalar, typename Derived>
Scalar propensity(const Reaction& r, const Eigen::DenseBase<Derived>& c) {
  Scalar a = Scalar(1);
  for (const auto& t : r.reactants) {
    const auto n = c(static_cast<Eigen::Index>(t.species.index()));
    if (n < static_cast<decltype(n)>(t.count)) return Scalar(0);
    const auto v = static_cast<Scalar>(n);
    for (std::uint32_t i = 0; i < t.count; ++i) a *= v;
  }
  return a * static_cast<Scalar>(r.k);
}

struct SpeciesDelta {
  SpeciesId species;
  std::int64_t amount = 0;
};

/// Sparse column of Ξ for each reaction, zero entries omitted.
std::vector<std::vector<SpeciesDelta>> net_changes(const ReactionNetwork& net);

struct FiredEvent {
  double time = 0.0;
  ReactionId reaction = 0;
  std::span<const SpeciesDelta> delta;
};

struct InjectionEvent {
  double time = 0.0;
  SpeciesId species;
  std::int64_t amount = 0;
};

/// What a structural reconfiguration does with existing molecules.
enum class CarryOver {
  by_name,      // matched species keep their counts, new species take declared initials
  declared,     // every species restarts from its declared initial
};

struct ReconfigOutcome {
  bool structural = false;
  std::size_t edits = 0;
};

struct TimedPatch {
  double time = 0.0;
  cadl::ReconfigPatch patch;
};

struct RunOptions {
  double sample_period = 0.0;         // 0 disables sampling
  std::vector<SpeciesId> taps;        // sampled species; empty = all
  bool record_firings = true;
  bool record_injections = true;
  bool pace_realtime = false;         // sleep to align virtual and wall clock
};

/// Reference next-reaction executor in virtual time. One owner mutates it;
/// independent instances may run in parallel.
class Engine {
 public:
  Engine(ReactionNetwork net, std::uint64_t seed, VariateMode mode = VariateMode::sampled);

  const ReactionNetwork& network() const { return net_; }
  double clock() const { return clock_; }
  const Counts& counts() const { return c_; }
  std::int64_t count(SpeciesId s) const { return c_(static_cast<Eigen::Index>(s.index())); }
  double next_time(ReactionId r) const { return next_[r]; }
  double last_propensity(ReactionId r) const { return last_a_[r]; }
  std::uint64_t fire_count(ReactionId r) const { return fired_[r]; }
  std::uint64_t total_firings() const { return total_fired_; }
  std::uint64_t seed() const { return seed_; }
  const VariateStream& variates() const { return rng_; }
  const std::vector<std::vector<ReactionId>>& dependencies() const { return deps_; }

  /// Earliest scheduled firing and its reaction; kNever when quiescent.
  double next_firing_time() const;

  /// Fires the earliest reaction (ties: lowest id). nullopt when quiescent.
  std::optional<FiredEvent> step();

  /// Fires the earliest reaction only if it is scheduled strictly before `limit`.
  std::optional<FiredEvent> step_before(double limit);

  /// Fires everything scheduled before `t`, then moves the clock to `t`.
  void advance_to(double t);

  /// Lands an external event. Firings scheduled before ev.time happen first.
  /// Throws NegativeConcentration when the amount would underflow.
  void inject(const InjectionEvent& ev);

  /// Applies a patch at the current clock; the clock never resets.
  ReconfigOutcome reconfigure(const cadl::ReconfigPatch& patch,
                              CarryOver policy = CarryOver::by_name);

  /// Called on every firing, including those run implicitly by inject/advance.
  void set_observer(std::function<void(const FiredEvent&)> observer) {
    observer_ = std::move(observer);
  }

 private:
  void rebuild_tables();
  void schedule_all_fresh();
  void reschedule(ReactionId r, bool fresh);
  FiredEvent fire(ReactionId r);
  ReactionId earliest() const;

  ReactionNetwork net_;
  std::uint64_t seed_;
  VariateStream rng_;
  Counts c_;
  std::vector<double> next_;
  std::vector<double> last_a_;
  std::vector<std::uint64_t> fired_;
  std::uint64_t total_fired_ = 0;
  double clock_ = 0.0;
  std::vector<std::vector<ReactionId>> deps_;
  std::vector<std::vector<ReactionId>> users_;
  std::vector<std::vector<SpeciesDelta>> delta_;
  std::function<void(const FiredEvent&)> observer_;
};

/// Runs to t_end, interleaving firings, the time-ordered injections, patches
/// and tap samples. Injection and patch errors propagate.
Trace run_until(Engine& engine, double t_end, std::span<const InjectionEvent> events,
                const RunOptions& options = {}, std::span<const TimedPatch> patches = {});

}  // namespace chemkernel
