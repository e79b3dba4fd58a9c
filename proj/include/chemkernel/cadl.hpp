#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "chemkernel/network.hpp"

namespace chemkernel::cadl {

/// Where a declaration came from, for diagnostics.
struct SourceSpan {
  std::size_t line = 0;
  std::size_t column = 0;
};

struct SpecDocument {
  std::string source;
  ReactionNetwork network;
  std::vector<SourceSpan> species_spans;   // by species index
  std::vector<SourceSpan> reaction_spans;  // by reaction id
};

/// Line-oriented grammar:
///   species <name> init <uint>
///   reaction <name>: <terms> -> <terms> @ k=<float>
///   input|output|drop <name>
/// where an empty side is written `0` and `#` starts a comment.
/// Throws ParseError carrying line and column.
SpecDocument parse(std::string_view text);
ReactionNetwork parse_network(std::string_view text);
ReactionNetwork load_network(const std::string& path);

/// Canonical text: species by id, reactions by id, shortest round-trip k.
std::string serialize(const ReactionNetwork& net);

/// Shortest decimal that round-trips the double.
std::string format_real(double v);

/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string network_hash(const ReactionNetwork& net);

// --- reconfiguration patches ----------------------------------------------

struct SetK {
  std::string reaction;
  double k = 0.0;
  friend bool operator==(const SetK&, const SetK&) = default;
};

struct SetConcentration {
  std::string species;
  std::uint64_t value = 0;
  friend bool operator==(const SetConcentration&, const SetConcentration&) = default;
};

struct AddSpecies {
  std::string name;
  std::uint64_t initial = 0;
  friend bool operator==(const AddSpecies&, const AddSpecies&) = default;
};

/// Reaction given by species names so it survives id renumbering.
struct AddReaction {
  std::string name;
  std::vector<std::pair<std::string, std::uint32_t>> reactants;
  std::vector<std::pair<std::string, std::uint32_t>> products;
  double k = 0.0;
  friend bool operator==(const AddReaction&, const AddReaction&) = default;
};

struct RemoveReaction {
  std::string name;
  friend bool operator==(const RemoveReaction&, const RemoveReaction&) = default;
};

struct RemoveSpecies {
  std::string name;
  friend bool operator==(const RemoveSpecies&, const RemoveSpecies&) = default;
};

struct ReplaceNetwork {
  ReactionNetwork network;
  friend bool operator==(const ReplaceNetwork&, const ReplaceNetwork&) = default;
};

using Edit = std::variant<SetK, SetConcentration, AddSpecies, AddReaction, RemoveReaction,
                          RemoveSpecies, ReplaceNetwork>;

struct ReconfigPatch {
  std::vector<Edit> edits;

  bool empty() const { return edits.empty(); }
  /// Only SetK / SetConcentration edits (an empty patch counts as pure).
  bool is_pure_parameter() const;

  friend bool operator==(const ReconfigPatch&, const ReconfigPatch&) = default;
};

/// Minimal name-matched edit list turning `from` into `to`.
ReconfigPatch diff(const ReactionNetwork& from, const ReactionNetwork& to);

/// Applies edits in order. Throws PatchConflict on absent or duplicate entities.
/// Surviving species and reactions keep their relative order; ids are re-densified.
ReactionNetwork apply(const ReactionNetwork& net, const ReconfigPatch& patch);

AddReaction describe(const ReactionNetwork& net, const Reaction& r);

/// `.capatch`: one edit per line, applied in order.
///   set-k <reaction> <k>
///   set-conc <species> <uint>
///   add-species <name> init <uint>
///   add-reaction <name>: <terms> -> <terms> @ k=<float>
///   remove-reaction <name>
///   remove-species <name>
///   replace-network <cadl statements separated by ';'>
std::string serialize_patch(const ReconfigPatch& patch);
ReconfigPatch parse_patch(std::string_view text);
ReconfigPatch load_patch(const std::string& path);

std::string_view edit_name(const Edit& e);

}  // namespace chemkernel::cadl
