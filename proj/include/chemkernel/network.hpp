#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "chemkernel/errors.hpp"

namespace chemkernel {

/// Dense species handle. Ids start at 1; 0 is the hardware constant cell.
struct SpeciesId {
  std::uint16_t value = 0;

  constexpr std::size_t index() const { return static_cast<std::size_t>(value) - 1; }
  static constexpr SpeciesId from_index(std::size_t i) {
    return SpeciesId{static_cast<std::uint16_t>(i + 1)};
  }
  friend constexpr auto operator<=>(SpeciesId, SpeciesId) = default;
};

/// Reactions are identified by their 0-based declaration index.
using ReactionId = std::uint16_t;

/// One species with its stoichiometric multiplicity on one side of a reaction.
struct Term {
  SpeciesId species;
  std::uint32_t count = 1;

  friend bool operator==(const Term&, const Term&) = default;
};

struct SpeciesDef {
  SpeciesId id;
  std::string name;
  std::uint64_t initial = 0;

  friend bool operator==(const SpeciesDef&, const SpeciesDef&) = default;
};

struct Reaction {
  ReactionId id = 0;
  std::string name;
  std::vector<Term> reactants;  // distinct species, declaration order
  std::vector<Term> products;
  double k = 0.0;

  std::uint32_t order() const;
  std::uint32_t multiplicity_in(const std::vector<Term>& side, SpeciesId s) const;
  std::uint32_t alpha(SpeciesId s) const { return multiplicity_in(reactants, s); }
  std::uint32_t beta(SpeciesId s) const { return multiplicity_in(products, s); }

  friend bool operator==(const Reaction&, const Reaction&) = default;
};

/// Named io roles consumed by the queue harness.
struct IoRoles {
  std::vector<SpeciesId> inputs;
  std::vector<SpeciesId> outputs;
  std::vector<SpeciesId> drops;

  friend bool operator==(const IoRoles&, const IoRoles&) = default;
};

/// A chemical algorithm: species, reactions and io roles.
struct ReactionNetwork {
  std::vector<SpeciesDef> species;
  std::vector<Reaction> reactions;
  IoRoles roles;

  std::size_t species_count() const { return species.size(); }
  std::size_t reaction_count() const { return reactions.size(); }

  const SpeciesDef& species_at(SpeciesId id) const { return species.at(id.index()); }
  std::optional<SpeciesId> find_species(std::string_view name) const;
  std::optional<ReactionId> find_reaction(std::string_view name) const;
  SpeciesId species_id(std::string_view name) const;  // throws InvalidNetwork

  SpeciesId add_species(std::string name, std::uint64_t initial = 0);
  ReactionId add_reaction(std::string name, std::vector<Term> reactants,
                          std::vector<Term> products, double k);

  /// Throws InvalidNetwork on dangling references, duplicate names or k <= 0.
  void validate() const;

  friend bool operator==(const ReactionNetwork&, const ReactionNetwork&) = default;
};

/// Name-keyed comparison: species/reaction order is irrelevant, ids are not compared.
bool structurally_equal(const ReactionNetwork& a, const ReactionNetwork& b);

using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;
using IntMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Initial concentrations as a dense vector indexed by SpeciesId::index().
Counts initial_counts(const ReactionNetwork& net);

/// Ξ = β − α with the α/β parts and rate coefficients recorded alongside.
struct StoichMatrix {
  IntMatrix xi;     // species x reactions
  IntMatrix alpha;  // reactant multiplicities
  IntMatrix beta;   // product multiplicities
  Eigen::VectorXd k;

  Eigen::Index rows() const { return xi.rows(); }
  Eigen::Index cols() const { return xi.cols(); }
};

StoichMatrix build_stoich_matrix(const ReactionNetwork& net);

/// Rebuilds reactions from the α/β split. Names and species come from `shape`.
ReactionNetwork reconstruct_reactions(const StoichMatrix& m, const ReactionNetwork& shape);

/// Resource bounds of a chemical engine. Defaults are the XC6SLX9 build.
struct EngineLimits {
  std::uint32_t max_reactions = 8;
  std::uint32_t max_slots = 8;
  std::uint32_t max_species = 255;
  std::uint32_t concentration_bits = 16;
  std::uint32_t max_reactant_order = 8;
  std::uint32_t max_product_order = 8;
  std::uint32_t k_bits = 32;

  friend bool operator==(const EngineLimits&, const EngineLimits&) = default;

  std::uint64_t max_concentration() const {
    return (std::uint64_t{1} << concentration_bits) - 1;
  }
  /// Width of a species address record, ceil(log2(|S|+1)) so cell 0 stays addressable.
  std::uint32_t address_bits() const;
};

enum class Bound {
  reaction_count,
  species_count,
  reactant_slots,
  product_slots,
  reactant_order,
  product_order,
  initial_concentration,
  k_width,
  limits,
};

std::string_view to_string(Bound b);

struct Violation {
  Bound bound;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(Bound b) const;
};

ValidationReport validate_against_limits(const ReactionNetwork& net, const EngineLimits& lim);

/// For each reaction r, the sorted reactions to reschedule after r fires:
/// r itself plus every reaction with a reactant whose net count r changes.
std::vector<std::vector<ReactionId>> dependency_graph(const ReactionNetwork& net);

/// For each species, the sorted reactions that use it as a reactant.
std::vector<std::vector<ReactionId>> reactant_users(const ReactionNetwork& net);

struct Moiety {
  std::vector<std::int64_t> weights;  // one per species
  std::int64_t total = 0;             // weights . c(0)
};

/// Conserved moieties by bounded search: weights in {0,1,2}, support of at
/// most `max_support` species. Support-minimal, primitive vectors only; this
/// is a generating heuristic, not a complete left-null-space basis.
std::vector<Moiety> conserved_moieties(const ReactionNetwork& net, std::size_t max_support = 4);

inline constexpr std::size_t kMoietySearchSpeciesBound = 32;

}  // namespace chemkernel
