#pragma once

#include <cstdint>

#include "chemkernel/network.hpp"

namespace chemkernel::catalog {

/// Enzymatic rate controller: S + E -> ES (k1), ES -> E + P (k2).
/// Species [S, E, ES, P]; E starts at e0. Rate cap e0 * k2.
ReactionNetwork rate_controller(std::uint64_t e0 = 25000, double k1 = 1.0, double k2 = 20.0);

/// LoMA pacer: S -> P (k0). Species [S, P].
ReactionNetwork pacer(double k0 = 20.0);

/// Rate controller plus a second-order drop branch 2 S -> S + D (kd).
/// Species [S, E, ES, P, D].
ReactionNetwork aqm_controller(std::uint64_t e0, double k1, double k2, double kd);

}  // namespace chemkernel::catalog
