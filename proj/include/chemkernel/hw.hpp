#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "chemkernel/cadl.hpp"
#include "chemkernel/network.hpp"
#include "chemkernel/rng.hpp"
#include "chemkernel/ssa.hpp"
#include "chemkernel/trace.hpp"

namespace chemkernel::hw {

/// Level-2 register images of the chemical engine. Cell 0 of c_mem is the
/// constant 1; address 0 in a stoichiometric record means "inactive".
struct RegisterMap {
  EngineLimits limits;
  std::vector<std::uint32_t> c_mem;      // max_species + 1 cells
  std::vector<std::uint16_t> alpha_mem;  // [reaction][slot][order]
  std::vector<std::uint16_t> beta_mem;   // [reaction][slot][order]
  std::vector<float> k_mem;              // one per reaction

  explicit RegisterMap(const EngineLimits& lim = {});

  std::size_t alpha_index(std::size_t r, std::size_t slot, std::size_t rec) const {
    return (r * limits.max_slots + slot) * limits.max_reactant_order + rec;
  }
  std::size_t beta_index(std::size_t r, std::size_t slot, std::size_t rec) const {
    return (r * limits.max_slots + slot) * limits.max_product_order + rec;
  }
  std::uint16_t alpha(std::size_t r, std::size_t slot, std::size_t rec) const {
    return alpha_mem[alpha_index(r, slot, rec)];
  }
  std::uint16_t beta(std::size_t r, std::size_t slot, std::size_t rec) const {
    return beta_mem[beta_index(r, slot, rec)];
  }

  /// A reaction record is in use when any of its α or β records is active.
  bool reaction_active(std::size_t r) const;
  /// Number of active α records of reaction r (the propensity's operand count).
  std::size_t reactant_records(std::size_t r) const;

  /// Total cells across the four memories.
  std::size_t cell_count() const;

  friend bool operator==(const RegisterMap&, const RegisterMap&) = default;
};

/// Throws ResourceExceeded naming every violated bound.
RegisterMap compile(const ReactionNetwork& net, const EngineLimits& lim = {});

/// Species and reactions are named S<id> and r<id>. Throws MalformedMap.
ReactionNetwork decompile(const RegisterMap& map);

/// Cells that differ between two maps of the same geometry.
std::size_t differing_cells(const RegisterMap& a, const RegisterMap& b);

/// Little-endian: "CAHW", version u16, |R| |Ψ| |S| |C| |α| |β| as u16, then
/// c_mem, alpha_mem, beta_mem, k_mem, each cell padded to whole bytes.
inline constexpr std::uint16_t kMapFormatVersion = 1;
void write_binary(std::ostream& os, const RegisterMap& map);
RegisterMap read_binary(std::istream& is);

/// One line per populated cell.
void write_listing(std::ostream& os, const RegisterMap& map, const ReactionNetwork* names = nullptr);

// --- cost model ----------------------------------------------------------------

enum class Topology { single_core_linear, per_reaction_cores, per_reaction_log_pipeline };

std::string_view to_string(Topology t);
std::optional<Topology> parse_topology(std::string_view s);

struct CycleCostModel {
  std::uint32_t hls_step = 1;   // one subtract/add step across all HLSs
  std::uint32_t mul_stage = 8;  // one single-precision multiply
  std::uint32_t divide = 8;     // one single-precision divide
  Topology topology = Topology::single_core_linear;
  double clock_hz = 80e6;
};

/// Multiply stages needed for one propensity with `records` active operands.
std::uint64_t multiply_depth(std::size_t records, Topology t);

/// Cycles to reschedule the given reactions after one event.
std::uint64_t reschedule_cycles(const RegisterMap& map, std::span<const ReactionId> reactions,
                                const CycleCostModel& cost);

/// Cycles to reschedule every active reaction at once.
std::uint64_t full_reschedule_cycles(const RegisterMap& map, const CycleCostModel& cost);

// --- engine ----------------------------------------------------------------------

struct HwFiredEvent {
  double time = 0.0;
  ReactionId reaction = 0;
  std::vector<SpeciesDelta> delta;  // as applied, after saturation
};

struct Saturation {
  double time = 0.0;
  std::uint64_t firing = 0;  // firings so far, the saturating one included
  SpeciesId species;
  bool injection = false;    // an injection saturated, not a firing
};

struct PropensityResult {
  float value = 0.0f;
  std::uint64_t cycles = 0;
};

/// Bit-level emulation of the chemical engine running in virtual time. The
/// schedule registers hold single-precision time remaining to each firing.
class HwEngine {
 public:
  HwEngine(const ReactionNetwork& net, const EngineLimits& lim, std::uint64_t seed,
           CycleCostModel cost = {}, VariateMode mode = VariateMode::sampled);
  HwEngine(RegisterMap map, std::uint64_t seed, CycleCostModel cost = {},
           VariateMode mode = VariateMode::sampled);

  const RegisterMap& registers() const { return map_; }
  const ReactionNetwork& network() const { return names_; }
  const CycleCostModel& cost() const { return cost_; }
  double clock() const { return clock_; }
  std::uint64_t cycles() const { return cycles_; }
  std::uint64_t seed() const { return seed_; }
  std::int64_t count(SpeciesId s) const { return map_.c_mem[s.value]; }
  Counts counts() const;
  float remaining(ReactionId r) const { return remaining_[r]; }
  std::uint64_t fire_count(ReactionId r) const { return fired_[r]; }
  std::uint64_t total_firings() const { return total_fired_; }
  std::uint64_t events_processed() const { return total_fired_ + injections_; }
  bool saturated() const { return first_saturation_.has_value(); }
  const std::optional<Saturation>& first_saturation() const { return first_saturation_; }

  /// Propensity through the record-selection datapath, in single precision.
  PropensityResult propensity(ReactionId r) const;

  /// Applies reaction r to c_mem. Returns cycles consumed; throws IneligibleReaction.
  std::uint64_t apply_reaction(ReactionId r);

  /// Reschedules after `fired` fired (or, with nullopt, after an injection
  /// touched the given reactions). Returns cycles consumed.
  std::uint64_t schedule(std::span<const ReactionId> reactions, std::optional<ReactionId> fired);

  double next_firing_time() const;
  std::optional<HwFiredEvent> step();
  std::optional<HwFiredEvent> step_before(double limit);
  void advance_to(double t);
  void inject(const InjectionEvent& ev);

  /// Writes registers for a patch. Returns the outcome; cycles are the number
  /// of register writes.
  ReconfigOutcome reconfigure(const cadl::ReconfigPatch& patch);
  std::uint64_t last_patch_writes() const { return last_patch_writes_; }

 private:
  void rebuild();
  void schedule_all_fresh();
  void reschedule(ReactionId r, bool fresh);
  ReactionId earliest() const;
  std::optional<HwFiredEvent> fire(ReactionId r);
  void elapse(double dt);
  void write_cell(std::size_t cell, std::int64_t value);

  RegisterMap map_;
  ReactionNetwork names_;
  CycleCostModel cost_;
  std::uint64_t seed_;
  VariateStream rng_;
  double clock_ = 0.0;
  std::uint64_t cycles_ = 0;
  std::vector<float> remaining_;
  std::vector<float> last_a_;
  std::vector<std::uint64_t> fired_;
  std::uint64_t total_fired_ = 0;
  std::uint64_t injections_ = 0;
  std::uint64_t last_patch_writes_ = 0;
  bool injecting_ = false;
  std::vector<std::vector<ReactionId>> deps_;
  std::vector<std::vector<ReactionId>> users_;
  std::vector<std::vector<SpeciesId>> touched_;
  std::optional<Saturation> first_saturation_;
};

struct HwRunReport {
  Trace trace;
  std::uint64_t cycles = 0;
  double cycles_per_event = 0.0;
  double max_event_rate = 0.0;  // events per second at the configured clock
};

HwRunReport hw_run(HwEngine& engine, double t_end, std::span<const InjectionEvent> events,
                   const RunOptions& options = {}, std::span<const TimedPatch> patches = {});

}  // namespace chemkernel::hw
