#include "chemkernel/ssa.hpp"

#include <algorithm>

#include "chemkernel/detail/run_loop.hpp"

namespace chemkernel {

std::vector<std::vector<SpeciesDelta>> net_changes(const ReactionNetwork& net) {
  std::vector<std::vector<SpeciesDelta>> out(net.reactions.size());
  for (const auto& r : net.reactions) {
    auto& col = out[r.id];
    auto add = [&](SpeciesId s, std::int64_t v) {
      auto it = std::find_if(col.begin(), col.end(),
                             [&](const SpeciesDelta& d) { return d.species == s; });
      if (it == col.end())
        col.push_back(SpeciesDelta{s, v});
      else
        it->amount += v;
    };
    for (const auto& t : r.reactants) add(t.species, -static_cast<std::int64_t>(t.count));
    for (const auto& t : r.products) add(t.species, static_cast<std::int64_t>(t.count));
    std::erase_if(col, [](const SpeciesDelta& d) { return d.amount == 0; });
    std::sort(col.begin(), col.end(),
              [](const SpeciesDelta& a, const SpeciesDelta& b) { return a.species < b.species; });
  }
  return out;
}

Engine::Engine(ReactionNetwork net, std::uint64_t seed, VariateMode mode)
    : net_(std::move(net)), seed_(seed), rng_(seed, mode) {
  net_.validate();
  c_ = initial_counts(net_);
  rebuild_tables();
  schedule_all_fresh();
}

void Engine::rebuild_tables() {
  deps_ = dependency_graph(net_);
  users_ = reactant_users(net_);
  delta_ = net_changes(net_);
  next_.assign(net_.reactions.size(), kNever);
  last_a_.assign(net_.reactions.size(), 0.0);
  fired_.resize(net_.reactions.size(), 0);
}

void Engine::schedule_all_fresh() {
  for (const auto& r : net_.reactions) reschedule(r.id, true);
}

void Engine::reschedule(ReactionId r, bool fresh) {
  const double a_new = propensity<double>(net_.reactions[r], c_);
  const double a_old = last_a_[r];
  last_a_[r] = a_new;
  if (a_new <= 0.0) {
    next_[r] = kNever;
  } else if (!fresh && a_old > 0.0 && next_[r] != kNever) {
    next_[r] = clock_ + (next_[r] - clock_) * (a_old / a_new);
  } else {
    next_[r] = clock_ + rng_.exponential() / a_new;
  }
}

ReactionId Engine::earliest() const {
  ReactionId best = 0;
  for (ReactionId r = 1; r < next_.size(); ++r)
    if (next_[r] < next_[best]) best = r;
  return best;
}

double Engine::next_firing_time() const {
  return next_.empty() ? kNever : next_[earliest()];
}

FiredEvent Engine::fire(ReactionId r) {
  clock_ = next_[r];
  for (const auto& d : delta_[r]) c_(static_cast<Eigen::Index>(d.species.index())) += d.amount;
  ++fired_[r];
  ++total_fired_;
  for (auto dep : deps_[r]) reschedule(dep, dep == r);
  FiredEvent ev{clock_, r, delta_[r]};
  if (observer_) observer_(ev);
  return ev;
}

std::optional<FiredEvent> Engine::step() {
  if (next_.empty()) return std::nullopt;
  const auto r = earliest();
  if (next_[r] == kNever) return std::nullopt;
  return fire(r);
}

std::optional<FiredEvent> Engine::step_before(double limit) {
  if (next_.empty()) return std::nullopt;
  const auto r = earliest();
  if (!(next_[r] < limit)) return std::nullopt;
  return fire(r);
}

void Engine::advance_to(double t) {
  while (step_before(t)) {
  }
  if (t > clock_) clock_ = t;
}

void Engine::inject(const InjectionEvent& ev) {
  if (ev.species.value == 0 || ev.species.index() >= net_.species.size())
    throw InvalidNetwork("injection into unknown species " + std::to_string(ev.species.value));
  advance_to(ev.time);
  auto& cell = c_(static_cast<Eigen::Index>(ev.species.index()));
  if (cell + ev.amount < 0)
    throw NegativeConcentration("injecting " + std::to_string(ev.amount) + " into '" +
                                net_.species_at(ev.species).name + "' (holding " +
                                std::to_string(cell) + ") would go negative");
  cell += ev.amount;
  if (ev.amount != 0)
    for (auto r : users_[ev.species.index()]) reschedule(r, false);
}

ReconfigOutcome Engine::reconfigure(const cadl::ReconfigPatch& patch, CarryOver policy) {
  auto next_net = cadl::apply(net_, patch);
  ReconfigOutcome outcome{!patch.is_pure_parameter(), patch.edits.size()};

  if (!outcome.structural) {
    // Registers are written in place, edit by edit, rescaling what each touches.
    for (const auto& e : patch.edits) {
      if (const auto* set_k = std::get_if<cadl::SetK>(&e)) {
        const auto r = *net_.find_reaction(set_k->reaction);
        net_.reactions[r].k = set_k->k;
        reschedule(r, false);
      } else if (const auto* set_c = std::get_if<cadl::SetConcentration>(&e)) {
        const auto s = *net_.find_species(set_c->species);
        net_.species[s.index()].initial = set_c->value;
        c_(static_cast<Eigen::Index>(s.index())) = static_cast<std::int64_t>(set_c->value);
        for (auto r : users_[s.index()]) reschedule(r, false);
      }
    }
    return outcome;
  }

  Counts carried = initial_counts(next_net);
  if (policy == CarryOver::by_name) {
    for (const auto& s : next_net.species)
      if (auto old = net_.find_species(s.name))
        carried(static_cast<Eigen::Index>(s.id.index())) = count(*old);
  }
  // Explicit set-conc edits override what was carried over.
  for (const auto& e : patch.edits)
    if (const auto* set_c = std::get_if<cadl::SetConcentration>(&e))
      if (auto s = next_net.find_species(set_c->species))
        carried(static_cast<Eigen::Index>(s->index())) = static_cast<std::int64_t>(set_c->value);

  net_ = std::move(next_net);
  c_ = std::move(carried);
  fired_.assign(net_.reactions.size(), 0);
  rebuild_tables();
  schedule_all_fresh();
  return outcome;
}

Trace run_until(Engine& engine, double t_end, std::span<const InjectionEvent> events,
                const RunOptions& options, std::span<const TimedPatch> patches) {
  Trace trace;
  trace.header = TraceHeader{engine.seed(), std::string(VariateStream::algorithm),
                             cadl::network_hash(engine.network()), "ssa"};
  detail::run_loop(engine, trace, t_end, events, patches, options);
  return trace;
}

}  // namespace chemkernel
