#include "chemkernel/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace chemkernel {

std::uint32_t Reaction::order() const {
  std::uint32_t total = 0;
  for (const auto& t : reactants) total += t.count;
  return total;
}

std::uint32_t Reaction::multiplicity_in(const std::vector<Term>& side, SpeciesId s) const {
  std::uint32_t total = 0;
  for (const auto& t : side)
    if (t.species == s) total += t.count;
  return total;
}

std::optional<SpeciesId> ReactionNetwork::find_species(std::string_view name) const {
  for (const auto& s : species)
    if (s.name == name) return s.id;
  return std::nullopt;
}

std::optional<ReactionId> ReactionNetwork::find_reaction(std::string_view name) const {
  for (const auto& r : reactions)
    if (r.name == name) return r.id;
  return std::nullopt;
}

SpeciesId ReactionNetwork::species_id(std::string_view name) const {
  if (auto id = find_species(name)) return *id;
  throw InvalidNetwork("unknown species '" + std::string(name) + "'");
}

SpeciesId ReactionNetwork::add_species(std::string name, std::uint64_t initial) {
  if (species.size() >= 0xFFFF) throw InvalidNetwork("too many species");
  const auto id = SpeciesId::from_index(species.size());
  species.push_back(SpeciesDef{id, std::move(name), initial});
  return id;
}

namespace {

// Merges repeated species on one side ("S + S" == "2 S"), keeping first-seen order.
std::vector<Term> merge_terms(std::vector<Term> terms) {
  std::vector<Term> out;
  for (const auto& t : terms) {
    if (t.count == 0) continue;
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const Term& o) { return o.species == t.species; });
    if (it == out.end())
      out.push_back(t);
    else
      it->count += t.count;
  }
  return out;
}

}  // namespace

ReactionId ReactionNetwork::add_reaction(std::string name, std::vector<Term> reactants,
                                         std::vector<Term> products, double k) {
  const auto id = static_cast<ReactionId>(reactions.size());
  reactions.push_back(
      Reaction{id, std::move(name), merge_terms(std::move(reactants)),
               merge_terms(std::move(products)), k});
  return id;
}

void ReactionNetwork::validate() const {
  std::set<std::string_view> names;
  for (std::size_t i = 0; i < species.size(); ++i) {
    const auto& s = species[i];
    if (s.id != SpeciesId::from_index(i))
      throw InvalidNetwork("species '" + s.name + "' has a non-dense id");
    if (!names.insert(s.name).second)
      throw InvalidNetwork("duplicate species name '" + s.name + "'");
  }
  auto check_side = [&](const Reaction& r, const std::vector<Term>& side) {
    for (const auto& t : side) {
      if (t.species.value == 0 || t.species.index() >= species.size())
        throw InvalidNetwork("reaction '" + r.name + "' references an unknown species");
      if (t.count == 0) throw InvalidNetwork("reaction '" + r.name + "' has a zero multiplicity");
    }
  };
  std::set<std::string_view> reaction_names;
  for (std::size_t i = 0; i < reactions.size(); ++i) {
    const auto& r = reactions[i];
    if (r.id != i) throw InvalidNetwork("reaction '" + r.name + "' has a non-dense id");
    if (!reaction_names.insert(r.name).second)
      throw InvalidNetwork("duplicate reaction name '" + r.name + "'");
    if (!(r.k > 0.0) || !std::isfinite(r.k))
      throw InvalidNetwork("reaction '" + r.name + "': k must be positive");
    if (r.reactants.empty() && r.products.empty())
      throw InvalidNetwork("reaction '" + r.name + "' has neither reactants nor products");
    check_side(r, r.reactants);
    check_side(r, r.products);
  }
  auto check_roles = [&](const std::vector<SpeciesId>& ids) {
    for (auto id : ids)
      if (id.value == 0 || id.index() >= species.size())
        throw InvalidNetwork("io role references an unknown species");
  };
  check_roles(roles.inputs);
  check_roles(roles.outputs);
  check_roles(roles.drops);
}

namespace {

using NamedSide = std::map<std::string, std::uint32_t>;

NamedSide named(const ReactionNetwork& net, const std::vector<Term>& side) {
  NamedSide out;
  for (const auto& t : side) out[net.species_at(t.species).name] += t.count;
  return out;
}

std::vector<std::string> role_names(const ReactionNetwork& net, const std::vector<SpeciesId>& ids) {
  std::vector<std::string> out;
  for (auto id : ids) out.push_back(net.species_at(id).name);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

bool structurally_equal(const ReactionNetwork& a, const ReactionNetwork& b) {
  if (a.species.size() != b.species.size() || a.reactions.size() != b.reactions.size())
    return false;
  for (const auto& s : a.species) {
    auto other = b.find_species(s.name);
    if (!other || b.species_at(*other).initial != s.initial) return false;
  }
  for (const auto& r : a.reactions) {
    auto other = b.find_reaction(r.name);
    if (!other) return false;
    const auto& o = b.reactions[*other];
    if (o.k != r.k || named(a, r.reactants) != named(b, o.reactants) ||
        named(a, r.products) != named(b, o.products))
      return false;
  }
  return role_names(a, a.roles.inputs) == role_names(b, b.roles.inputs) &&
         role_names(a, a.roles.outputs) == role_names(b, b.roles.outputs) &&
         role_names(a, a.roles.drops) == role_names(b, b.roles.drops);
}

Counts initial_counts(const ReactionNetwork& net) {
  Counts c(static_cast<Eigen::Index>(net.species.size()));
  for (const auto& s : net.species) c(static_cast<Eigen::Index>(s.id.index())) =
      static_cast<std::int64_t>(s.initial);
  return c;
}

StoichMatrix build_stoich_matrix(const ReactionNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.species.size());
  const auto m = static_cast<Eigen::Index>(net.reactions.size());
  StoichMatrix out{IntMatrix::Zero(n, m), IntMatrix::Zero(n, m), IntMatrix::Zero(n, m),
                   Eigen::VectorXd::Zero(m)};
  for (const auto& r : net.reactions) {
    const auto col = static_cast<Eigen::Index>(r.id);
    for (const auto& t : r.reactants) out.alpha(static_cast<Eigen::Index>(t.species.index()), col) += t.count;
    for (const auto& t : r.products) out.beta(static_cast<Eigen::Index>(t.species.index()), col) += t.count;
    out.k(col) = r.k;
  }
  out.xi = out.beta - out.alpha;
  return out;
}

ReactionNetwork reconstruct_reactions(const StoichMatrix& m, const ReactionNetwork& shape) {
  ReactionNetwork out;
  out.species = shape.species;
  out.roles = shape.roles;
  for (Eigen::Index col = 0; col < m.cols(); ++col) {
    std::vector<Term> reactants, products;
    for (Eigen::Index row = 0; row < m.rows(); ++row) {
      const auto id = SpeciesId::from_index(static_cast<std::size_t>(row));
      if (m.alpha(row, col) > 0)
        reactants.push_back(Term{id, static_cast<std::uint32_t>(m.alpha(row, col))});
      if (m.beta(row, col) > 0)
        products.push_back(Term{id, static_cast<std::uint32_t>(m.beta(row, col))});
    }
    out.add_reaction(shape.reactions.at(static_cast<std::size_t>(col)).name, std::move(reactants),
                     std::move(products), m.k(col));
  }
  return out;
}

std::uint32_t EngineLimits::address_bits() const {
  std::uint32_t bits = 1;
  while ((std::uint64_t{1} << bits) < static_cast<std::uint64_t>(max_species) + 1) ++bits;
  return bits;
}

std::string_view to_string(Bound b) {
  switch (b) {
    case Bound::reaction_count: return "reaction count";
    case Bound::species_count: return "species count";
    case Bound::reactant_slots: return "reactant slots";
    case Bound::product_slots: return "product slots";
    case Bound::reactant_order: return "reactant order";
    case Bound::product_order: return "product order";
    case Bound::initial_concentration: return "initial concentration";
    case Bound::k_width: return "k width";
    case Bound::limits: return "limits";
  }
  return "unknown";
}

bool ValidationReport::has(Bound b) const {
  return std::any_of(violations.begin(), violations.end(),
                     [b](const Violation& v) { return v.bound == b; });
}

ValidationReport validate_against_limits(const ReactionNetwork& net, const EngineLimits& lim) {
  ValidationReport report;
  auto add = [&](Bound b, std::string msg) {
    report.violations.push_back(Violation{b, std::string(to_string(b)) + ": " + std::move(msg)});
  };
  if (lim.max_reactions == 0 || lim.max_slots == 0 || lim.max_species == 0 ||
      lim.concentration_bits == 0 || lim.concentration_bits > 32 || lim.max_reactant_order == 0 ||
      lim.max_product_order == 0 || lim.max_species > 0xFFFF) {
    add(Bound::limits, "limits must be positive (and |C| <= 32, |S| <= 65535)");
    return report;
  }
  if (lim.k_bits != 32) add(Bound::k_width, "only 32-bit single-precision k is supported");
  if (net.reactions.size() > lim.max_reactions)
    add(Bound::reaction_count, std::to_string(net.reactions.size()) + " > " +
                                   std::to_string(lim.max_reactions));
  if (net.species.size() > lim.max_species)
    add(Bound::species_count, std::to_string(net.species.size()) + " > " +
                                  std::to_string(lim.max_species));
  for (const auto& r : net.reactions) {
    if (r.reactants.size() > lim.max_slots)
      add(Bound::reactant_slots, "reaction '" + r.name + "' has " +
                                     std::to_string(r.reactants.size()) + " distinct reactants");
    if (r.products.size() > lim.max_slots)
      add(Bound::product_slots, "reaction '" + r.name + "' has " +
                                    std::to_string(r.products.size()) + " distinct products");
    for (const auto& t : r.reactants)
      if (t.count > lim.max_reactant_order)
        add(Bound::reactant_order, "reaction '" + r.name + "' consumes " +
                                       std::to_string(t.count) + " of one species");
    for (const auto& t : r.products)
      if (t.count > lim.max_product_order)
        add(Bound::product_order, "reaction '" + r.name + "' produces " +
                                      std::to_string(t.count) + " of one species");
  }
  for (const auto& s : net.species)
    if (s.initial > lim.max_concentration())
      add(Bound::initial_concentration,
          "species '" + s.name + "' starts at " + std::to_string(s.initial) + " > " +
              std::to_string(lim.max_concentration()));
  return report;
}

std::vector<std::vector<ReactionId>> reactant_users(const ReactionNetwork& net) {
  std::vector<std::vector<ReactionId>> users(net.species.size());
  for (const auto& r : net.reactions)
    for (const auto& t : r.reactants) users[t.species.index()].push_back(r.id);
  for (auto& u : users) {
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
  }
  return users;
}

std::vector<std::vector<ReactionId>> dependency_graph(const ReactionNetwork& net) {
  const auto users = reactant_users(net);
  std::vector<std::vector<ReactionId>> deps(net.reactions.size());
  for (const auto& r : net.reactions) {
    std::set<ReactionId> out{r.id};
    for (std::size_t s = 0; s < net.species.size(); ++s) {
      const auto id = SpeciesId::from_index(s);
      if (r.beta(id) == r.alpha(id)) continue;
      out.insert(users[s].begin(), users[s].end());
    }
    deps[r.id].assign(out.begin(), out.end());
  }
  return deps;
}

namespace {

struct MoietySearch {
  const IntMatrix& xi;
  std::size_t n;
  std::size_t max_support;
  std::vector<std::vector<std::int64_t>> found;
  std::vector<std::size_t> support;

  bool support_covers_found(const std::vector<std::int64_t>& w) const {
    for (const auto& f : found) {
      bool subset = true;
      for (std::size_t i = 0; i < n && subset; ++i)
        if (f[i] != 0 && w[i] == 0) subset = false;
      if (subset) return true;
    }
    return false;
  }

  void try_weights(std::size_t pos, std::vector<std::int64_t>& w) {
    if (pos == support.size()) {
      std::int64_t g = 0;
      for (auto s : support) g = std::gcd(g, w[s]);
      if (g != 1) return;
      for (Eigen::Index r = 0; r < xi.cols(); ++r) {
        std::int64_t dot = 0;
        for (auto s : support) dot += w[s] * xi(static_cast<Eigen::Index>(s), r);
        if (dot != 0) return;
      }
      if (!support_covers_found(w)) found.push_back(w);
      return;
    }
    for (std::int64_t v : {1, 2}) {
      w[support[pos]] = v;
      try_weights(pos + 1, w);
    }
    w[support[pos]] = 0;
  }

  void choose(std::size_t start, std::size_t size) {
    if (support.size() == size) {
      std::vector<std::int64_t> w(n, 0);
      try_weights(0, w);
      return;
    }
    for (std::size_t s = start; s < n; ++s) {
      support.push_back(s);
      choose(s + 1, size);
      support.pop_back();
    }
  }
};

}  // namespace

std::vector<Moiety> conserved_moieties(const ReactionNetwork& net, std::size_t max_support) {
  if (net.species.size() > kMoietySearchSpeciesBound)
    throw SearchBoundExceeded("conserved-moiety search supports at most " +
                              std::to_string(kMoietySearchSpeciesBound) + " species, got " +
                              std::to_string(net.species.size()));
  const auto m = build_stoich_matrix(net);
  MoietySearch search{m.xi, net.species.size(), max_support, {}, {}};
  // Increasing support size guarantees that anything kept is support-minimal.
  for (std::size_t size = 1; size <= std::min(max_support, search.n); ++size)
    search.choose(0, size);

  const auto c0 = initial_counts(net);
  std::vector<Moiety> out;
  for (auto& w : search.found) {
    std::int64_t total = 0;
    for (std::size_t i = 0; i < w.size(); ++i) total += w[i] * c0(static_cast<Eigen::Index>(i));
    out.push_back(Moiety{std::move(w), total});
  }
  return out;
}

}  // namespace chemkernel
