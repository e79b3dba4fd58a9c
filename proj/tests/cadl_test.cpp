#include <random>

#include "doctest.h"

#include "chemkernel/cadl.hpp"
#include "chemkernel/catalog.hpp"
#include "support/networks.hpp"

using namespace chemkernel;

TEST_CASE("parse the rate controller") {
  const auto doc = cadl::parse(testsupport::kRnet1);
  const auto& net = doc.network;
  REQUIRE(net.species_count() == 4);
  CHECK(net.species[0].name == "S");
  CHECK(net.species[1].initial == 25000);
  CHECK(net.species[1].id == SpeciesId{2});
  REQUIRE(net.reaction_count() == 2);
  CHECK(net.reactions[0].k == 1.0);
  CHECK(net.reactions[1].k == 20.0);
  CHECK(net.roles.inputs == std::vector<SpeciesId>{SpeciesId{1}});
  CHECK(net.roles.outputs == std::vector<SpeciesId>{SpeciesId{4}});
  CHECK(structurally_equal(net, catalog::rate_controller()));
  CHECK(doc.reaction_spans[1].line == 7);
}

TEST_CASE("parse errors carry positions") {
  try {
    cadl::parse("species A init 0\nspecies B init 0\nreaction r: A -> B @ k=-1\n");
    FAIL("expected a semantic error");
  } catch (const SemanticError& e) {
    CHECK(std::string(e.what()).find("k must be positive") != std::string::npos);
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(cadl::parse("species A init 0\nreaction r: A -> Q @ k=1\n"), SemanticError);
  CHECK_THROWS_AS(cadl::parse("species A init 0\nspecies A init 1\n"), SemanticError);
  try {
    cadl::parse("species A init 0\nreaction r A -> A @ k=1\n");
    FAIL("expected a syntax error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(e.column() > 1);
  }
  CHECK_THROWS_AS(cadl::parse("species 9A init 0\n"), ParseError);
  CHECK_THROWS_AS(cadl::parse("species A init -4\n"), ParseError);
}

TEST_CASE("empty and comment-only documents") {
  CHECK(cadl::parse("").network.species_count() == 0);
  const auto net = cadl::parse_network("# nothing\n\n   # still nothing\n");
  CHECK(net.species_count() == 0);
  CHECK(net.reaction_count() == 0);
}

TEST_CASE("multiplicities and empty sides") {
  const auto net = cadl::parse_network(
      "species S init 3\nspecies D init 0\n"
      "reaction src: 0 -> S @ k=2.5\n"
      "reaction r3: 2 S -> S + D @ k=0.01\n"
      "reaction sink: D -> 0 @ k=1\n");
  CHECK(net.reactions[0].reactants.empty());
  CHECK(net.reactions[1].alpha(SpeciesId{1}) == 2);
  CHECK(net.reactions[1].beta(SpeciesId{1}) == 1);
  CHECK(net.reactions[2].products.empty());
}

TEST_CASE("canonical serialization") {
  const auto text = cadl::serialize(catalog::rate_controller());
  CHECK(text.find("@ k=20\n") != std::string::npos);
  CHECK(text.find("reaction r1: S + E -> ES @ k=1\n") != std::string::npos);

  const auto aqm = cadl::serialize(catalog::aqm_controller(100, 1, 20, 0.001));
  CHECK(aqm.find("r3: 2 S -> S + D @ k=0.001") != std::string::npos);
  CHECK(aqm.find("drop D") != std::string::npos);

  CHECK(cadl::format_real(0.1) == "0.1");
  CHECK(cadl::format_real(1e-300) == "1e-300");
}

TEST_CASE("serialize then parse round-trips") {
  for (const auto& net : {catalog::rate_controller(), catalog::pacer(),
                          catalog::aqm_controller(20000, 1, 20, 0.01)}) {
    const auto back = cadl::parse_network(cadl::serialize(net));
    CHECK(structurally_equal(back, net));
    CHECK(cadl::serialize(back) == cadl::serialize(net));
  }
  std::mt19937_64 rng(5);
  for (int i = 0; i < 300; ++i) {
    auto net = testsupport::random_network(rng);
    net.reactions[0].k = std::ldexp(0.7310585786300049, -i % 40);
    const auto back = cadl::parse_network(cadl::serialize(net));
    CHECK(back.reactions[0].k == net.reactions[0].k);
    CHECK(cadl::serialize(back) == cadl::serialize(net));
  }
}

TEST_CASE("network hash follows the canonical text") {
  const auto a = catalog::rate_controller();
  CHECK(cadl::network_hash(a) == cadl::network_hash(cadl::parse_network(testsupport::kRnet1)));
  CHECK(cadl::network_hash(a).size() == 16);
  CHECK(cadl::network_hash(a) != cadl::network_hash(catalog::rate_controller(25000, 1, 10)));
}

TEST_CASE("diff of a parameter retune") {
  const auto from = catalog::rate_controller(25000, 1, 20);
  const auto to = catalog::rate_controller(50000, 1, 10);
  const auto patch = cadl::diff(from, to);
  const cadl::ReconfigPatch expected{{cadl::SetK{"r2", 10.0}, cadl::SetConcentration{"E", 50000}}};
  CHECK(patch == expected);
  CHECK(patch.is_pure_parameter());
  CHECK(structurally_equal(cadl::apply(from, patch), to));
}

TEST_CASE("diff of identical networks is empty") {
  const auto net = catalog::aqm_controller(20000, 1, 20, 0.01);
  CHECK(cadl::diff(net, net).empty());
  CHECK(cadl::apply(net, {}) == net);
}

TEST_CASE("diff from pacer to rate controller is structural") {
  const auto from = catalog::pacer();
  const auto to = catalog::rate_controller();
  const auto patch = cadl::diff(from, to);
  CHECK_FALSE(patch.is_pure_parameter());

  std::vector<std::string> kinds;
  for (const auto& e : patch.edits) kinds.emplace_back(cadl::edit_name(e));
  CHECK(std::count(kinds.begin(), kinds.end(), "replace-network") == 0);
  CHECK(std::holds_alternative<cadl::RemoveReaction>(patch.edits.front()));
  CHECK(std::get<cadl::RemoveReaction>(patch.edits.front()).name == "r0");

  std::vector<std::string> added_species, added_reactions;
  for (const auto& e : patch.edits) {
    if (auto* s = std::get_if<cadl::AddSpecies>(&e)) added_species.push_back(s->name);
    if (auto* r = std::get_if<cadl::AddReaction>(&e)) added_reactions.push_back(r->name);
  }
  CHECK(added_species == std::vector<std::string>{"E", "ES"});
  CHECK(added_reactions == std::vector<std::string>{"r1", "r2"});
  CHECK(structurally_equal(cadl::apply(from, patch), to));
}

TEST_CASE("diff with nothing shared replaces the network") {
  ReactionNetwork other;
  const auto x = other.add_species("X", 5);
  other.add_reaction("decay", {{x, 1}}, {}, 0.5);
  const auto patch = cadl::diff(catalog::rate_controller(), other);
  REQUIRE(patch.edits.size() == 1);
  CHECK(std::holds_alternative<cadl::ReplaceNetwork>(patch.edits[0]));
  CHECK(structurally_equal(cadl::apply(catalog::rate_controller(), patch), other));
}

TEST_CASE("apply(old, diff(old, new)) equals new on random pairs") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 500; ++i) {
    const auto a = testsupport::random_network(rng);
    auto b = (i % 2) ? testsupport::random_network(rng) : a;
    if (i % 2 == 0 && !b.reactions.empty()) {
      b.reactions.back().k *= 2;
      b.species.front().initial += 1;
    }
    const auto patch = cadl::diff(a, b);
    const auto applied = cadl::apply(a, patch);
    CHECK(structurally_equal(applied, b));
    if (patch.is_pure_parameter()) {
      CHECK(applied.species_count() == a.species_count());
      CHECK(applied.reaction_count() == a.reaction_count());
      CHECK(build_stoich_matrix(applied).xi == build_stoich_matrix(a).xi);
    }
    // the text form carries the same edits
    CHECK(cadl::parse_patch(cadl::serialize_patch(patch)) == patch);
  }
}

TEST_CASE("patch conflicts") {
  const auto net = catalog::rate_controller();
  CHECK_THROWS_AS(cadl::apply(net, {{cadl::SetK{"nope", 1.0}}}), PatchConflict);
  CHECK_THROWS_AS(cadl::apply(net, {{cadl::AddSpecies{"E", 0}}}), PatchConflict);
  CHECK_THROWS_AS(cadl::apply(net, {{cadl::RemoveSpecies{"ES"}}}), PatchConflict);
  CHECK_THROWS_AS(cadl::apply(net, {{cadl::RemoveReaction{"r9"}}}), PatchConflict);
}

TEST_CASE("patch text format") {
  const auto patch = cadl::parse_patch(
      "# retune\nset-k r2 10\nset-conc E 50000\n"
      "add-species X init 4\n"
      "add-reaction leak: X -> 0 @ k=0.5\n"
      "remove-reaction leak\nremove-species X\n");
  REQUIRE(patch.edits.size() == 6);
  CHECK(std::get<cadl::SetK>(patch.edits[0]).k == 10.0);
  CHECK(std::get<cadl::SetConcentration>(patch.edits[1]).value == 50000);
  const auto& add = std::get<cadl::AddReaction>(patch.edits[3]);
  CHECK(add.reactants == std::vector<std::pair<std::string, std::uint32_t>>{{"X", 1}});
  CHECK(add.products.empty());
  const auto out = cadl::apply(catalog::rate_controller(), patch);
  CHECK(out.reactions[1].k == 10.0);
  CHECK(out.species_count() == 4);

  const auto replace = cadl::parse_patch(
      "replace-network species S init 0; species P init 0; reaction r0: S -> P @ k=20; input S\n");
  REQUIRE(replace.edits.size() == 1);
  auto pacer_without_output = catalog::pacer();
  pacer_without_output.roles.outputs.clear();
  CHECK(structurally_equal(std::get<cadl::ReplaceNetwork>(replace.edits[0]).network,
                           pacer_without_output));
  CHECK_THROWS_AS(cadl::parse_patch("frobnicate r2\n"), ParseError);
}
