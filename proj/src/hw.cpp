#include "chemkernel/hw.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

#include "chemkernel/detail/run_loop.hpp"

namespace chemkernel::hw {

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

std::size_t bytes_for(std::uint32_t bits) { return (bits + 7) / 8; }

}  // namespace

RegisterMap::RegisterMap(const EngineLimits& lim)
    : limits(lim),
      c_mem(static_cast<std::size_t>(lim.max_species) + 1, 0),
      alpha_mem(static_cast<std::size_t>(lim.max_reactions) * lim.max_slots * lim.max_reactant_order,
                0),
      beta_mem(static_cast<std::size_t>(lim.max_reactions) * lim.max_slots * lim.max_product_order,
               0),
      k_mem(lim.max_reactions, 0.0f) {
  c_mem[0] = 1;
}

bool RegisterMap::reaction_active(std::size_t r) const {
  for (std::size_t s = 0; s < limits.max_slots; ++s) {
    if (alpha(r, s, 0) != 0 || beta(r, s, 0) != 0) return true;
    for (std::size_t i = 1; i < limits.max_reactant_order; ++i)
      if (alpha(r, s, i) != 0) return true;
    for (std::size_t i = 1; i < limits.max_product_order; ++i)
      if (beta(r, s, i) != 0) return true;
  }
  return false;
}

std::size_t RegisterMap::reactant_records(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t s = 0; s < limits.max_slots; ++s)
    for (std::size_t i = 0; i < limits.max_reactant_order; ++i) n += alpha(r, s, i) != 0;
  return n;
}

std::size_t RegisterMap::cell_count() const {
  return c_mem.size() + alpha_mem.size() + beta_mem.size() + k_mem.size();
}

RegisterMap compile(const ReactionNetwork& net, const EngineLimits& lim) {
  net.validate();
  auto report = validate_against_limits(net, lim);
  for (const auto& r : net.reactions) {
    const float k = static_cast<float>(r.k);
    if (!(k > 0.0f) || std::isinf(k))
      report.violations.push_back(
          {Bound::k_width, "k width: k of '" + r.name + "' is not a positive finite float"});
  }
  if (!report.ok()) {
    std::string msg = "network exceeds engine limits";
    for (const auto& v : report.violations) msg += "; " + v.message;
    throw ResourceExceeded(msg);
  }

  RegisterMap map(lim);
  for (const auto& s : net.species) map.c_mem[s.id.value] = static_cast<std::uint32_t>(s.initial);
  for (const auto& r : net.reactions) {
    for (std::size_t slot = 0; slot < r.reactants.size(); ++slot)
      for (std::uint32_t i = 0; i < r.reactants[slot].count; ++i)
        map.alpha_mem[map.alpha_index(r.id, slot, i)] = r.reactants[slot].species.value;
    for (std::size_t slot = 0; slot < r.products.size(); ++slot)
      for (std::uint32_t i = 0; i < r.products[slot].count; ++i)
        map.beta_mem[map.beta_index(r.id, slot, i)] = r.products[slot].species.value;
    map.k_mem[r.id] = static_cast<float>(r.k);
  }
  return map;
}

namespace {

// Reads the slots of one reaction side. Active records must be contiguous
// from index 0 and repeat one address; active slots must be contiguous too.
std::vector<Term> read_side(const RegisterMap& map, std::size_t r, bool reactants,
                            std::uint16_t& highest) {
  const auto& lim = map.limits;
  const std::size_t order = reactants ? lim.max_reactant_order : lim.max_product_order;
  const char* mem = reactants ? "alpha" : "beta";
  std::vector<Term> terms;
  bool slot_gap = false;
  for (std::size_t slot = 0; slot < lim.max_slots; ++slot) {
    auto rec = [&](std::size_t i) { return reactants ? map.alpha(r, slot, i) : map.beta(r, slot, i); };
    const std::uint16_t addr = rec(0);
    std::uint32_t count = 0;
    bool ended = false;
    for (std::size_t i = 0; i < order; ++i) {
      const auto a = rec(i);
      if (a == 0) {
        ended = true;
        continue;
      }
      if (ended || a != addr)
        throw MalformedMap(std::string(mem) + "_mem reaction " + std::to_string(r) + " slot " +
                           std::to_string(slot) + ": records are not one contiguous address run");
      ++count;
    }
    if (count == 0) {
      slot_gap = true;
      continue;
    }
    if (slot_gap)
      throw MalformedMap(std::string(mem) + "_mem reaction " + std::to_string(r) +
                         ": active slot after an empty one");
    if (addr > lim.max_species)
      throw MalformedMap(std::string(mem) + "_mem reaction " + std::to_string(r) +
                         ": address " + std::to_string(addr) + " out of range");
    for (const auto& t : terms)
      if (t.species.value == addr)
        throw MalformedMap(std::string(mem) + "_mem reaction " + std::to_string(r) +
                           ": species in two slots");
    highest = std::max(highest, addr);
    terms.push_back(Term{SpeciesId{addr}, count});
  }
  return terms;
}

}  // namespace

ReactionNetwork decompile(const RegisterMap& map) {
  const auto& lim = map.limits;
  if (map.c_mem.empty() || map.c_mem[0] != 1) throw MalformedMap("c_mem[0] must hold 1");
  for (auto v : map.c_mem)
    if (v > lim.max_concentration()) throw MalformedMap("c_mem cell exceeds |C| bits");

  struct Parsed {
    std::vector<Term> reactants, products;
    double k;
  };
  std::vector<Parsed> reactions;
  std::uint16_t highest = 0;
  bool gap = false;
  for (std::size_t r = 0; r < lim.max_reactions; ++r) {
    if (!map.reaction_active(r)) {
      if (map.k_mem[r] != 0.0f)
        throw MalformedMap("k_mem[" + std::to_string(r) + "] set on an inactive reaction");
      gap = true;
      continue;
    }
    if (gap) throw MalformedMap("reaction " + std::to_string(r) + " follows an inactive record");
    const float k = map.k_mem[r];
    if (!(k > 0.0f) || std::isinf(k))
      throw MalformedMap("k_mem[" + std::to_string(r) + "] is not a positive finite float");
    auto reactants = read_side(map, r, true, highest);
    auto products = read_side(map, r, false, highest);
    reactions.push_back({std::move(reactants), std::move(products), static_cast<double>(k)});
  }
  for (std::size_t s = map.c_mem.size(); s-- > 1;) {
    if (map.c_mem[s] != 0) {
      highest = std::max(highest, static_cast<std::uint16_t>(s));
      break;
    }
  }

  ReactionNetwork net;
  for (std::uint16_t s = 1; s <= highest; ++s) net.add_species("S" + std::to_string(s), map.c_mem[s]);
  for (std::size_t r = 0; r < reactions.size(); ++r)
    net.add_reaction("r" + std::to_string(r), std::move(reactions[r].reactants),
                     std::move(reactions[r].products), reactions[r].k);
  return net;
}

std::size_t differing_cells(const RegisterMap& a, const RegisterMap& b) {
  if (!(a.limits.max_reactions == b.limits.max_reactions && a.c_mem.size() == b.c_mem.size() &&
        a.alpha_mem.size() == b.alpha_mem.size() && a.beta_mem.size() == b.beta_mem.size()))
    throw MalformedMap("register maps have different geometry");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.c_mem.size(); ++i) n += a.c_mem[i] != b.c_mem[i];
  for (std::size_t i = 0; i < a.alpha_mem.size(); ++i) n += a.alpha_mem[i] != b.alpha_mem[i];
  for (std::size_t i = 0; i < a.beta_mem.size(); ++i) n += a.beta_mem[i] != b.beta_mem[i];
  for (std::size_t i = 0; i < a.k_mem.size(); ++i)
    n += std::bit_cast<std::uint32_t>(a.k_mem[i]) != std::bit_cast<std::uint32_t>(b.k_mem[i]);
  return n;
}

// --- binary format -------------------------------------------------------------

namespace {

void put_le(std::ostream& os, std::uint64_t v, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::istream& is, std::size_t bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) {
    const int ch = is.get();
    if (ch == std::char_traits<char>::eof()) throw MalformedMap("register file is truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) << (8 * i);
  }
  return v;
}

}  // namespace

void write_binary(std::ostream& os, const RegisterMap& map) {
  const auto& lim = map.limits;
  os.write("CAHW", 4);
  put_le(os, kMapFormatVersion, 2);
  for (std::uint32_t v : {lim.max_reactions, lim.max_slots, lim.max_species, lim.concentration_bits,
                          lim.max_reactant_order, lim.max_product_order})
    put_le(os, v, 2);
  const auto cell = bytes_for(lim.concentration_bits);
  const auto addr = bytes_for(lim.address_bits());
  for (auto v : map.c_mem) put_le(os, v, cell);
  for (auto v : map.alpha_mem) put_le(os, v, addr);
  for (auto v : map.beta_mem) put_le(os, v, addr);
  for (auto v : map.k_mem) put_le(os, std::bit_cast<std::uint32_t>(v), 4);
}

RegisterMap read_binary(std::istream& is) {
  char magic[4] = {};
  if (!is.read(magic, 4) || std::string_view(magic, 4) != "CAHW")
    throw MalformedMap("not a register map (bad magic)");
  const auto version = get_le(is, 2);
  if (version != kMapFormatVersion)
    throw MalformedMap("unsupported register map version " + std::to_string(version));
  EngineLimits lim;
  lim.max_reactions = static_cast<std::uint32_t>(get_le(is, 2));
  lim.max_slots = static_cast<std::uint32_t>(get_le(is, 2));
  lim.max_species = static_cast<std::uint32_t>(get_le(is, 2));
  lim.concentration_bits = static_cast<std::uint32_t>(get_le(is, 2));
  lim.max_reactant_order = static_cast<std::uint32_t>(get_le(is, 2));
  lim.max_product_order = static_cast<std::uint32_t>(get_le(is, 2));
  if (lim.max_reactions == 0 || lim.max_slots == 0 || lim.max_species == 0 ||
      lim.concentration_bits == 0 || lim.concentration_bits > 32 || lim.max_reactant_order == 0 ||
      lim.max_product_order == 0)
    throw MalformedMap("register map header has a zero or oversized dimension");

  RegisterMap map(lim);
  const auto cell = bytes_for(lim.concentration_bits);
  const auto addr = bytes_for(lim.address_bits());
  for (auto& v : map.c_mem) v = static_cast<std::uint32_t>(get_le(is, cell));
  for (auto& v : map.alpha_mem) v = static_cast<std::uint16_t>(get_le(is, addr));
  for (auto& v : map.beta_mem) v = static_cast<std::uint16_t>(get_le(is, addr));
  for (auto& v : map.k_mem) v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(is, 4)));
  return map;
}

void write_listing(std::ostream& os, const RegisterMap& map, const ReactionNetwork* names) {
  const auto& lim = map.limits;
  os << "# geometry R=" << lim.max_reactions << " slots=" << lim.max_slots
     << " S=" << lim.max_species << " C=" << lim.concentration_bits
     << " alpha=" << lim.max_reactant_order << " beta=" << lim.max_product_order
     << " addr_bits=" << lim.address_bits() << '\n';
  auto species = [&](std::size_t s) -> std::string {
    if (s == 0) return "const";
    if (names && s <= names->species_count()) return names->species[s - 1].name;
    return "S" + std::to_string(s);
  };
  auto reaction = [&](std::size_t r) -> std::string {
    if (names && r < names->reaction_count()) return names->reactions[r].name;
    return "r" + std::to_string(r);
  };
  for (std::size_t s = 0; s < map.c_mem.size(); ++s)
    if (map.c_mem[s] != 0) os << "c_mem[" << s << "]=" << map.c_mem[s] << "  # " << species(s) << '\n';
  for (std::size_t r = 0; r < lim.max_reactions; ++r) {
    for (std::size_t slot = 0; slot < lim.max_slots; ++slot) {
      for (std::size_t i = 0; i < lim.max_reactant_order; ++i)
        if (auto a = map.alpha(r, slot, i))
          os << "alpha_mem[" << r << "][" << slot << "][" << i << "]=" << a << "  # "
             << reaction(r) << ' ' << species(a) << '\n';
      for (std::size_t i = 0; i < lim.max_product_order; ++i)
        if (auto b = map.beta(r, slot, i))
          os << "beta_mem[" << r << "][" << slot << "][" << i << "]=" << b << "  # "
             << reaction(r) << ' ' << species(b) << '\n';
    }
  }
  for (std::size_t r = 0; r < map.k_mem.size(); ++r) {
    if (map.k_mem[r] == 0.0f) continue;
    auto text = cadl::format_real(static_cast<double>(map.k_mem[r]));
    if (text.find_first_of(".e") == std::string::npos) text += ".0";
    os << "k_mem[" << r << "]=" << text << "  # " << reaction(r) << '\n';
  }
}

// --- cost model ------------------------------------------------------------------

std::string_view to_string(Topology t) {
  switch (t) {
    case Topology::single_core_linear: return "linear";
    case Topology::per_reaction_cores: return "per-reaction";
    case Topology::per_reaction_log_pipeline: return "log-pipeline";
  }
  return "?";
}

std::optional<Topology> parse_topology(std::string_view s) {
  for (auto t : {Topology::single_core_linear, Topology::per_reaction_cores,
                 Topology::per_reaction_log_pipeline})
    if (s == to_string(t)) return t;
  return std::nullopt;
}

std::uint64_t multiply_depth(std::size_t records, Topology t) {
  // operands: every active record plus k
  const std::uint64_t operands = records + 1;
  if (t != Topology::per_reaction_log_pipeline) return operands;
  return static_cast<std::uint64_t>(std::bit_width(operands - 1));  // ceil(log2(operands))
}

std::uint64_t reschedule_cycles(const RegisterMap& map, std::span<const ReactionId> reactions,
                                const CycleCostModel& cost) {
  std::uint64_t total = 0, longest = 0;
  for (auto r : reactions) {
    const auto one = multiply_depth(map.reactant_records(r), cost.topology) * cost.mul_stage +
                     cost.divide;
    total += one;
    longest = std::max(longest, one);
  }
  return cost.topology == Topology::single_core_linear ? total : longest;
}

std::uint64_t full_reschedule_cycles(const RegisterMap& map, const CycleCostModel& cost) {
  std::vector<ReactionId> all;
  for (std::size_t r = 0; r < map.limits.max_reactions; ++r)
    if (map.reaction_active(r)) all.push_back(static_cast<ReactionId>(r));
  return reschedule_cycles(map, all, cost);
}

// --- engine ----------------------------------------------------------------------

HwEngine::HwEngine(const ReactionNetwork& net, const EngineLimits& lim, std::uint64_t seed,
                   CycleCostModel cost, VariateMode mode)
    : map_(compile(net, lim)), names_(net), cost_(cost), seed_(seed), rng_(seed, mode) {
  rebuild();
  schedule_all_fresh();
}

HwEngine::HwEngine(RegisterMap map, std::uint64_t seed, CycleCostModel cost, VariateMode mode)
    : map_(std::move(map)), cost_(cost), seed_(seed), rng_(seed, mode) {
  names_ = decompile(map_);
  rebuild();
  schedule_all_fresh();
}

Counts HwEngine::counts() const {
  Counts c(static_cast<Eigen::Index>(names_.species_count()));
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = map_.c_mem[static_cast<std::size_t>(i) + 1];
  return c;
}

void HwEngine::rebuild() {
  deps_ = dependency_graph(names_);
  users_ = reactant_users(names_);
  touched_.assign(names_.reaction_count(), {});
  for (const auto& r : names_.reactions) {
    std::set<SpeciesId> s;
    for (const auto& t : r.reactants) s.insert(t.species);
    for (const auto& t : r.products) s.insert(t.species);
    touched_[r.id].assign(s.begin(), s.end());
  }
  remaining_.assign(names_.reaction_count(), kInf);
  last_a_.assign(names_.reaction_count(), 0.0f);
  fired_.assign(names_.reaction_count(), 0);
}

PropensityResult HwEngine::propensity(ReactionId r) const {
  const auto& lim = map_.limits;
  PropensityResult out;
  out.cycles = multiply_depth(map_.reactant_records(r), cost_.topology) * cost_.mul_stage;
  // eligibility: each slot's cell must hold at least its record count
  for (std::size_t slot = 0; slot < lim.max_slots; ++slot) {
    std::uint32_t need = 0;
    for (std::size_t i = 0; i < lim.max_reactant_order; ++i) need += map_.alpha(r, slot, i) != 0;
    if (need > 0 && map_.c_mem[map_.alpha(r, slot, 0)] < need) return out;
  }
  // inactive records select cell 0, the multiplicative identity
  float a = 1.0f;
  for (std::size_t slot = 0; slot < lim.max_slots; ++slot)
    for (std::size_t i = 0; i < lim.max_reactant_order; ++i)
      a *= static_cast<float>(map_.c_mem[map_.alpha(r, slot, i)]);
  out.value = a * map_.k_mem[r];
  return out;
}

void HwEngine::write_cell(std::size_t cell, std::int64_t value) {
  const auto cap = static_cast<std::int64_t>(map_.limits.max_concentration());
  if (value > cap) {
    value = cap;
    if (!first_saturation_)
      first_saturation_ = Saturation{clock_, total_fired_, SpeciesId{static_cast<std::uint16_t>(cell)},
                                     injecting_};
  }
  map_.c_mem[cell] = static_cast<std::uint32_t>(value);
}

std::uint64_t HwEngine::apply_reaction(ReactionId r) {
  const auto& lim = map_.limits;
  for (std::size_t slot = 0; slot < lim.max_slots; ++slot) {
    std::uint32_t need = 0;
    for (std::size_t i = 0; i < lim.max_reactant_order; ++i) need += map_.alpha(r, slot, i) != 0;
    if (need > 0 && map_.c_mem[map_.alpha(r, slot, 0)] < need)
      throw IneligibleReaction("reaction " + std::to_string(r) + " lacks reactant molecules");
  }
  // reactant side: one decrement per active record per step, slots in parallel
  std::uint64_t steps = 0;
  for (std::size_t i = 0; i < lim.max_reactant_order; ++i) {
    bool any = false;
    for (std::size_t slot = 0; slot < lim.max_slots; ++slot) {
      if (auto a = map_.alpha(r, slot, i)) {
        --map_.c_mem[a];
        any = true;
      }
    }
    steps += any;
  }
  for (std::size_t i = 0; i < lim.max_product_order; ++i) {
    bool any = false;
    for (std::size_t slot = 0; slot < lim.max_slots; ++slot) {
      if (auto b = map_.beta(r, slot, i)) {
        write_cell(b, static_cast<std::int64_t>(map_.c_mem[b]) + 1);
        any = true;
      }
    }
    steps += any;
  }
  const auto cycles = steps * cost_.hls_step;
  cycles_ += cycles;
  return cycles;
}

void HwEngine::reschedule(ReactionId r, bool fresh) {
  const float a_new = propensity(r).value;
  const float a_old = last_a_[r];
  last_a_[r] = a_new;
  if (a_new <= 0.0f) {
    remaining_[r] = kInf;
  } else if (!fresh && a_old > 0.0f && remaining_[r] != kInf) {
    remaining_[r] = remaining_[r] * (a_old / a_new);
  } else {
    remaining_[r] = static_cast<float>(rng_.exponential()) / a_new;
  }
}

std::uint64_t HwEngine::schedule(std::span<const ReactionId> reactions,
                                 std::optional<ReactionId> fired) {
  for (auto r : reactions) reschedule(r, fired && *fired == r);
  const auto cycles = reschedule_cycles(map_, reactions, cost_);
  cycles_ += cycles;
  return cycles;
}

void HwEngine::schedule_all_fresh() {
  std::vector<ReactionId> all;
  for (const auto& r : names_.reactions) {
    reschedule(r.id, true);
    all.push_back(r.id);
  }
  cycles_ += reschedule_cycles(map_, all, cost_);
}

ReactionId HwEngine::earliest() const {
  ReactionId best = 0;
  for (ReactionId r = 1; r < remaining_.size(); ++r)
    if (remaining_[r] < remaining_[best]) best = r;
  return best;
}

double HwEngine::next_firing_time() const {
  if (remaining_.empty()) return kNever;
  const float rem = remaining_[earliest()];
  return rem == kInf ? kNever : clock_ + static_cast<double>(rem);
}

void HwEngine::elapse(double dt) {
  const float d = static_cast<float>(dt);
  for (auto& rem : remaining_)
    if (rem != kInf) rem = std::max(0.0f, rem - d);
}

std::optional<HwFiredEvent> HwEngine::fire(ReactionId r) {
  const double dt = static_cast<double>(remaining_[r]);
  elapse(dt);
  clock_ += dt;
  remaining_[r] = 0.0f;

  std::vector<std::int64_t> before;
  before.reserve(touched_[r].size());
  for (auto s : touched_[r]) before.push_back(map_.c_mem[s.value]);
  ++fired_[r];
  ++total_fired_;
  apply_reaction(r);
  schedule(deps_[r], r);

  HwFiredEvent ev{clock_, r, {}};
  for (std::size_t i = 0; i < touched_[r].size(); ++i) {
    const auto s = touched_[r][i];
    const auto d = static_cast<std::int64_t>(map_.c_mem[s.value]) - before[i];
    if (d != 0) ev.delta.push_back(SpeciesDelta{s, d});
  }
  return ev;
}

std::optional<HwFiredEvent> HwEngine::step() {
  if (remaining_.empty()) return std::nullopt;
  const auto r = earliest();
  if (remaining_[r] == kInf) return std::nullopt;
  return fire(r);
}

std::optional<HwFiredEvent> HwEngine::step_before(double limit) {
  if (remaining_.empty()) return std::nullopt;
  const auto r = earliest();
  if (remaining_[r] == kInf || !(clock_ + static_cast<double>(remaining_[r]) < limit))
    return std::nullopt;
  return fire(r);
}

void HwEngine::advance_to(double t) {
  while (step_before(t)) {
  }
  if (t > clock_) {
    elapse(t - clock_);
    clock_ = t;
  }
}

void HwEngine::inject(const InjectionEvent& ev) {
  if (ev.species.value == 0 || ev.species.index() >= names_.species_count())
    throw InvalidNetwork("injection into unknown species " + std::to_string(ev.species.value));
  advance_to(ev.time);
  const auto cell = static_cast<std::int64_t>(map_.c_mem[ev.species.value]);
  if (cell + ev.amount < 0)
    throw NegativeConcentration("injecting " + std::to_string(ev.amount) + " into '" +
                                names_.species_at(ev.species).name + "' (holding " +
                                std::to_string(cell) + ") would go negative");
  injecting_ = true;
  write_cell(ev.species.value, cell + ev.amount);
  injecting_ = false;
  ++injections_;
  cycles_ += cost_.hls_step;
  if (ev.amount != 0) schedule(users_[ev.species.index()], std::nullopt);
}

ReconfigOutcome HwEngine::reconfigure(const cadl::ReconfigPatch& patch) {
  auto next_names = cadl::apply(names_, patch);
  ReconfigOutcome outcome{!patch.is_pure_parameter(), patch.edits.size()};
  last_patch_writes_ = 0;

  if (!outcome.structural) {
    for (const auto& e : patch.edits) {
      if (const auto* set_k = std::get_if<cadl::SetK>(&e)) {
        const auto r = *names_.find_reaction(set_k->reaction);
        const float k = static_cast<float>(set_k->k);
        if (!(k > 0.0f) || std::isinf(k))
          throw ResourceExceeded("k width: k of '" + set_k->reaction + "' is not a positive finite float");
        names_.reactions[r].k = set_k->k;
        map_.k_mem[r] = k;
        ++last_patch_writes_;
        reschedule(r, false);
        const ReactionId one[] = {r};
        cycles_ += reschedule_cycles(map_, one, cost_);
      } else if (const auto* set_c = std::get_if<cadl::SetConcentration>(&e)) {
        const auto s = *names_.find_species(set_c->species);
        if (set_c->value > map_.limits.max_concentration())
          throw ResourceExceeded("initial concentration: '" + set_c->species + "' set to " +
                                 std::to_string(set_c->value));
        names_.species[s.index()].initial = set_c->value;
        map_.c_mem[s.value] = static_cast<std::uint32_t>(set_c->value);
        ++last_patch_writes_;
        for (auto r : users_[s.index()]) reschedule(r, false);
        cycles_ += reschedule_cycles(map_, users_[s.index()], cost_);
      }
    }
    cycles_ += last_patch_writes_;
    return outcome;
  }

  RegisterMap next = compile(next_names, map_.limits);
  for (const auto& s : next_names.species)
    if (auto old = names_.find_species(s.name)) next.c_mem[s.id.value] = map_.c_mem[old->value];
  for (const auto& e : patch.edits)
    if (const auto* set_c = std::get_if<cadl::SetConcentration>(&e))
      if (auto s = next_names.find_species(set_c->species))
        next.c_mem[s->value] = static_cast<std::uint32_t>(set_c->value);

  last_patch_writes_ = differing_cells(map_, next);
  cycles_ += last_patch_writes_;
  map_ = std::move(next);
  names_ = std::move(next_names);
  rebuild();
  schedule_all_fresh();
  return outcome;
}

HwRunReport hw_run(HwEngine& engine, double t_end, std::span<const InjectionEvent> events,
                   const RunOptions& options, std::span<const TimedPatch> patches) {
  HwRunReport report;
  report.trace.header = TraceHeader{engine.seed(), std::string(VariateStream::algorithm),
                                    cadl::network_hash(engine.network()), "hw"};
  const auto cycles0 = engine.cycles();
  const auto events0 = engine.events_processed();
  detail::run_loop(engine, report.trace, t_end, events, patches, options);
  report.cycles = engine.cycles() - cycles0;
  const auto processed = engine.events_processed() - events0;
  if (processed > 0) {
    report.cycles_per_event = static_cast<double>(report.cycles) / static_cast<double>(processed);
    if (report.cycles_per_event > 0.0)
      report.max_event_rate = engine.cost().clock_hz / report.cycles_per_event;
  }
  return report;
}

}  // namespace chemkernel::hw
