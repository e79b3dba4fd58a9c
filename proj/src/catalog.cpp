#include "chemkernel/catalog.hpp"

#include "chemkernel/cadl.hpp"

namespace chemkernel::catalog {

ReactionNetwork rate_controller(std::uint64_t e0, double k1, double k2) {
  ReactionNetwork net;
  const auto s = net.add_species("S");
  const auto e = net.add_species("E", e0);
  const auto es = net.add_species("ES");
  const auto p = net.add_species("P");
  net.add_reaction("r1", {{s, 1}, {e, 1}}, {{es, 1}}, k1);
  net.add_reaction("r2", {{es, 1}}, {{e, 1}, {p, 1}}, k2);
  net.roles.inputs = {s};
  net.roles.outputs = {p};
  return net;
}

ReactionNetwork pacer(double k0) {
  ReactionNetwork net;
  const auto s = net.add_species("S");
  const auto p = net.add_species("P");
  net.add_reaction("r0", {{s, 1}}, {{p, 1}}, k0);
  net.roles.inputs = {s};
  net.roles.outputs = {p};
  return net;
}

ReactionNetwork aqm_controller(std::uint64_t e0, double k1, double k2, double kd) {
  ReactionNetwork net = rate_controller(e0, k1, k2);
  const auto s = net.species_id("S");
  const auto d = net.add_species("D");
  net.add_reaction("r3", {{s, 2}}, {{s, 1}, {d, 1}}, kd);
  net.roles.drops = {d};
  return net;
}

}  // namespace chemkernel::catalog
