#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "chemkernel/network.hpp"

namespace chemkernel {

/// ċ = Ξ·v(k, c) + λ with LoMA rates on real-valued concentrations.
class OdeSystem {
 public:
  OdeSystem(const ReactionNetwork& net, Eigen::VectorXd inflow);

  Eigen::Index dimension() const { return xi_.rows(); }
  const IntMatrix& xi() const { return xi_; }
  const IntMatrix& alpha() const { return alpha_; }
  const Eigen::VectorXd& k() const { return k_; }
  const Eigen::VectorXd& inflow() const { return inflow_; }
  void set_inflow(Eigen::VectorXd inflow);

  /// Species that appear as a reactant somewhere; the rest only accumulate.
  const std::vector<bool>& reactive() const { return reactive_; }

  /// Reaction rates v_r = k_r · Π c_s^α.
  template <typename Derived>
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> rates(
      const Eigen::MatrixBase<Derived>& c) const {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v(alpha_.cols());
    for (Eigen::Index r = 0; r < alpha_.cols(); ++r) {
      Scalar a = Scalar(k_(r));
      for (Eigen::Index s = 0; s < alpha_.rows(); ++s)
        for (std::int64_t i = 0; i < alpha_(s, r); ++i) a *= c(s);
      v(r) = a;
    }
    return v;
  }

  Eigen::VectorXd rhs(const Eigen::VectorXd& c) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& c) const;

 private:
  IntMatrix xi_;
  IntMatrix alpha_;
  Eigen::VectorXd k_;
  Eigen::VectorXd inflow_;
  Eigen::MatrixXd xi_real_;
  std::vector<bool> reactive_;
};

/// Inflows are given by species name; unknown names throw InvalidNetwork.
OdeSystem build_odes(const ReactionNetwork& net,
                     std::span<const std::pair<std::string, double>> inflows = {});

struct Tolerances {
  double atol = 1e-8;
  double rtol = 1e-6;
  std::size_t max_steps = 20'000'000;
};

struct Trajectory {
  std::vector<double> times;
  Eigen::MatrixXd states;  // one row per sample time
  std::size_t steps = 0;
  std::size_t rejected = 0;
  Tolerances tolerances;
  bool clipped = false;  // a negative undershoot was clipped to zero

  Eigen::VectorXd final_state() const { return states.row(states.rows() - 1).transpose(); }
};

/// Dormand-Prince 5(4) with error control. Steps land exactly on the sample
/// times, which must be nondecreasing and start at or after t0.
Trajectory integrate(const OdeSystem& sys, const Eigen::VectorXd& c0, double t0,
                     std::span<const double> sample_times, const Tolerances& tol = {});

/// Samples every `period` from t0 through t1 inclusive.
Trajectory integrate(const OdeSystem& sys, const Eigen::VectorXd& c0, double t0, double t1,
                     double period, const Tolerances& tol = {});

/// Piecewise-constant inflow: each segment runs up to `until`.
struct InflowSegment {
  double until = 0.0;
  Eigen::VectorXd inflow;
};

Trajectory integrate_segments(OdeSystem sys, const Eigen::VectorXd& c0, double t0,
                              std::span<const InflowSegment> segments, double period,
                              const Tolerances& tol = {});

enum class SteadyStatus { converged, divergent, not_converged };

std::string_view to_string(SteadyStatus s);

struct SteadyStateOptions {
  double residual_tol = 1e-9;       // on ‖ċ‖∞ over reactive species, scaled by max(1, ‖c‖∞)
  double divergence_bound = 1e12;
  double t_max = 0.0;               // 0: 1e4 × slowest time constant at c0
  std::size_t max_iterations = 20000;
};

struct SteadyState {
  SteadyStatus status = SteadyStatus::not_converged;
  Eigen::VectorXd c;
  Eigen::VectorXd rates;
  double residual = 0.0;
  double pseudo_time = 0.0;
  std::vector<SpeciesId> divergent;  // coordinates that grew without bound
};

/// Pseudo-transient continuation: implicit Euler steps with growing step size
/// until the reactive species settle. Species that never act as reactants
/// only accumulate output and are left out of the residual.
SteadyState steady_state(const OdeSystem& sys, const Eigen::VectorXd& c0,
                         const SteadyStateOptions& opt = {});

struct Linearization {
  Eigen::MatrixXd jacobian;
  Eigen::VectorXcd eigenvalues;  // ascending real part
};

/// Central-difference Jacobian at a fixed point. Throws NotAFixedPoint.
Linearization linearize(const OdeSystem& sys, const Eigen::VectorXd& c_star,
                        const SteadyStateOptions& opt = {});

/// Michaelis-Menten output rate of the enzymatic controller.
inline double mm_rate(double s, double e0, double k1, double k2) {
  return e0 * k2 * s / (k2 / k1 + s);
}

/// S + E -> ES (k1), ES -> E + P (k2) found inside a larger network.
struct EnzymaticPattern {
  SpeciesId substrate, enzyme, complex, product;
  ReactionId bind = 0, release = 0;
  double e0 = 0.0;  // initial E + ES
  double k1 = 0.0, k2 = 0.0;

  double km() const { return k2 / k1; }
  double cap() const { return e0 * k2; }
};

/// First bind/release pair in declaration order; other reactions are ignored.
std::optional<EnzymaticPattern> match_enzymatic(const ReactionNetwork& net);

/// CSV with a `t` column and one column per species.
void write_csv(std::ostream& os, const Trajectory& traj, const ReactionNetwork& net);

}  // namespace chemkernel
