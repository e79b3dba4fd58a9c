#include "chemkernel/fluid.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace chemkernel {

OdeSystem::OdeSystem(const ReactionNetwork& net, Eigen::VectorXd inflow) {
  const auto m = build_stoich_matrix(net);
  xi_ = m.xi;
  alpha_ = m.alpha;
  k_ = m.k;
  xi_real_ = xi_.cast<double>();
  reactive_.assign(static_cast<std::size_t>(xi_.rows()), false);
  for (Eigen::Index s = 0; s < alpha_.rows(); ++s)
    reactive_[static_cast<std::size_t>(s)] = (alpha_.row(s).array() > 0).any();
  set_inflow(std::move(inflow));
}

void OdeSystem::set_inflow(Eigen::VectorXd inflow) {
  if (inflow.size() == 0) inflow = Eigen::VectorXd::Zero(xi_.rows());
  if (inflow.size() != xi_.rows()) throw InvalidNetwork("inflow vector has the wrong dimension");
  inflow_ = std::move(inflow);
}

Eigen::VectorXd OdeSystem::rhs(const Eigen::VectorXd& c) const {
  return xi_real_ * rates(c) + inflow_;
}

Eigen::MatrixXd OdeSystem::jacobian(const Eigen::VectorXd& c) const {
  // dv_r/dc_s = α_{s,r} k_r c_s^(α-1) Π_{q≠s} c_q^α
  Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(alpha_.cols(), alpha_.rows());
  for (Eigen::Index r = 0; r < alpha_.cols(); ++r) {
    for (Eigen::Index s = 0; s < alpha_.rows(); ++s) {
      if (alpha_(s, r) == 0) continue;
      double d = k_(r) * static_cast<double>(alpha_(s, r));
      for (Eigen::Index q = 0; q < alpha_.rows(); ++q) {
        const auto n = alpha_(q, r) - (q == s ? 1 : 0);
        for (std::int64_t i = 0; i < n; ++i) d *= c(q);
      }
      dv(r, s) = d;
    }
  }
  return xi_real_ * dv;
}

OdeSystem build_odes(const ReactionNetwork& net,
                     std::span<const std::pair<std::string, double>> inflows) {
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.species_count()));
  for (const auto& [name, rate] : inflows)
    lambda(static_cast<Eigen::Index>(net.species_id(name).index())) += rate;
  return OdeSystem(net, std::move(lambda));
}

// --- integration -----------------------------------------------------------

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

class DormandPrince {
 public:
  DormandPrince(const OdeSystem& sys, const Tolerances& tol, Trajectory& out)
      : sys_(sys), tol_(tol), out_(out) {}

  // Advances y from t to t_end exactly.
  void advance(Eigen::VectorXd& y, double& t, double t_end) {
    if (t_end <= t) return;
    if (!have_k1_) {
      k1_ = sys_.rhs(y);
      have_k1_ = true;
    }
    if (h_ <= 0.0) h_ = initial_step(y, t_end - t);
    while (t < t_end) {
      if (out_.steps + out_.rejected >= tol_.max_steps)
        throw StepSizeUnderflow("integrator exceeded " + std::to_string(tol_.max_steps) +
                                " steps at t=" + std::to_string(t));
      const bool last = t + h_ >= t_end;
      const double h = last ? t_end - t : h_;
      if (h < 1e-14 * std::max(1.0, std::abs(t)))
        throw StepSizeUnderflow("step size underflow at t=" + std::to_string(t));

      const Eigen::VectorXd k2 = sys_.rhs(y + h * a21 * k1_);
      const Eigen::VectorXd k3 = sys_.rhs(y + h * (a31 * k1_ + a32 * k2));
      const Eigen::VectorXd k4 = sys_.rhs(y + h * (a41 * k1_ + a42 * k2 + a43 * k3));
      const Eigen::VectorXd k5 = sys_.rhs(y + h * (a51 * k1_ + a52 * k2 + a53 * k3 + a54 * k4));
      const Eigen::VectorXd k6 =
          sys_.rhs(y + h * (a61 * k1_ + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      Eigen::VectorXd y_new = y + h * (b1 * k1_ + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const Eigen::VectorXd k7 = sys_.rhs(y_new);
      const Eigen::VectorXd err = h * (e1 * k1_ + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

      const Eigen::ArrayXd scale =
          tol_.atol + tol_.rtol * y.array().abs().max(y_new.array().abs());
      const double norm =
          y.size() == 0 ? 0.0 : (err.array() / scale).abs().maxCoeff();

      if (norm <= 1.0) {
        ++out_.steps;
        t = last ? t_end : t + h;
        if ((y_new.array() < 0.0).any()) {
          y_new = y_new.cwiseMax(0.0);
          out_.clipped = true;
          k1_ = sys_.rhs(y_new);
        } else {
          k1_ = k7;
        }
        y = std::move(y_new);
        const double grow = norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(norm, -0.2), 0.2, 5.0);
        // a short final step says nothing about the step size that works
        if (!last || h >= h_) h_ = h * grow;
      } else {
        ++out_.rejected;
        h_ = h * std::max(0.2, 0.9 * std::pow(norm, -0.2));
      }
    }
  }

 private:
  double initial_step(const Eigen::VectorXd& y, double span) const {
    const Eigen::ArrayXd scale = tol_.atol + tol_.rtol * y.array().abs();
    const double d0 = y.size() ? std::sqrt((y.array() / scale).square().mean()) : 0.0;
    const double d1 = y.size() ? std::sqrt((k1_.array() / scale).square().mean()) : 0.0;
    double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    return std::min(h, span);
  }

  const OdeSystem& sys_;
  const Tolerances& tol_;
  Trajectory& out_;
  Eigen::VectorXd k1_;
  bool have_k1_ = false;
  double h_ = 0.0;
};

void check_start(const OdeSystem& sys, const Eigen::VectorXd& c0) {
  if (c0.size() != sys.dimension())
    throw InvalidNetwork("initial state has the wrong dimension");
  if ((c0.array() < 0.0).any()) throw NegativeConcentration("initial state has a negative entry");
}

std::vector<double> sample_grid(double t0, double t1, double period) {
  if (!(period > 0.0) || t1 < t0) throw Error("invalid sampling grid");
  std::vector<double> times;
  const auto n = static_cast<std::size_t>(std::floor((t1 - t0) / period + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) times.push_back(t0 + static_cast<double>(i) * period);
  if (times.back() < t1 - 1e-12 * std::max(1.0, std::abs(t1))) times.push_back(t1);
  return times;
}

}  // namespace

Trajectory integrate(const OdeSystem& sys, const Eigen::VectorXd& c0, double t0,
                     std::span<const double> sample_times, const Tolerances& tol) {
  check_start(sys, c0);
  Trajectory out;
  out.tolerances = tol;
  out.states.resize(static_cast<Eigen::Index>(sample_times.size()), sys.dimension());
  DormandPrince dp(sys, tol, out);
  Eigen::VectorXd y = c0;
  double t = t0;
  for (std::size_t i = 0; i < sample_times.size(); ++i) {
    if (sample_times[i] < t) throw Error("sample times must be nondecreasing and >= t0");
    dp.advance(y, t, sample_times[i]);
    out.times.push_back(sample_times[i]);
    out.states.row(static_cast<Eigen::Index>(i)) = y.transpose();
  }
  return out;
}

Trajectory integrate(const OdeSystem& sys, const Eigen::VectorXd& c0, double t0, double t1,
                     double period, const Tolerances& tol) {
  const auto times = sample_grid(t0, t1, period);
  return integrate(sys, c0, t0, times, tol);
}

Trajectory integrate_segments(OdeSystem sys, const Eigen::VectorXd& c0, double t0,
                              std::span<const InflowSegment> segments, double period,
                              const Tolerances& tol) {
  check_start(sys, c0);
  Trajectory out;
  out.tolerances = tol;
  const double t_end = segments.empty() ? t0 : segments.back().until;
  const auto times = sample_grid(t0, t_end, period);
  out.states.resize(static_cast<Eigen::Index>(times.size()), sys.dimension());
  Eigen::VectorXd y = c0;
  double t = t0;
  std::size_t next = 0;
  for (const auto& seg : segments) {
    sys.set_inflow(seg.inflow);
    // a fresh stepper per segment: the derivative jumps at the boundary
    DormandPrince dp(sys, tol, out);
    while (next < times.size() && times[next] <= seg.until) {
      dp.advance(y, t, times[next]);
      out.times.push_back(times[next]);
      out.states.row(static_cast<Eigen::Index>(next)) = y.transpose();
      ++next;
    }
    dp.advance(y, t, seg.until);
  }
  out.states.conservativeResize(static_cast<Eigen::Index>(next), Eigen::NoChange);
  return out;
}

// --- steady state ------------------------------------------------------------

std::string_view to_string(SteadyStatus s) {
  switch (s) {
    case SteadyStatus::converged: return "converged";
    case SteadyStatus::divergent: return "divergent";
    case SteadyStatus::not_converged: return "not converged";
  }
  return "?";
}

namespace {

double reactive_norm(const OdeSystem& sys, const Eigen::VectorXd& v) {
  double m = 0.0;
  for (Eigen::Index s = 0; s < v.size(); ++s)
    if (sys.reactive()[static_cast<std::size_t>(s)]) m = std::max(m, std::abs(v(s)));
  return m;
}

double scaled_residual(const OdeSystem& sys, const Eigen::VectorXd& c) {
  return reactive_norm(sys, sys.rhs(c)) / std::max(1.0, reactive_norm(sys, c));
}

double slowest_time_constant(const OdeSystem& sys, const Eigen::VectorXd& c) {
  if (sys.dimension() == 0) return 1.0;
  const Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(sys.jacobian(c), false).eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  double slowest = 0.0;
  for (const auto& l : ev) {
    const double re = std::abs(l.real());
    if (re > 1e-9 * scale) slowest = std::max(slowest, 1.0 / re);
  }
  return slowest > 0.0 ? slowest : 1.0;
}

}  // namespace

SteadyState steady_state(const OdeSystem& sys, const Eigen::VectorXd& c0,
                         const SteadyStateOptions& opt) {
  check_start(sys, c0);
  const double t_max = opt.t_max > 0.0 ? opt.t_max : 1e4 * slowest_time_constant(sys, c0);
  const auto n = sys.dimension();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

  SteadyState out;
  Eigen::VectorXd c = c0;
  Eigen::VectorXd f = sys.rhs(c);
  double dt = 1e-6 / std::max(1.0, reactive_norm(sys, f) / std::max(1.0, reactive_norm(sys, c)));
  double t = 0.0;
  // Per species: consecutive accepted steps over which it kept increasing.
  std::vector<int> growing(static_cast<std::size_t>(n), 0);

  auto finish = [&](SteadyStatus status) {
    out.status = status;
    out.c = c;
    out.rates = sys.rates(c);
    out.residual = scaled_residual(sys, c);
    out.pseudo_time = t;
    return out;
  };

  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    if (scaled_residual(sys, c) < opt.residual_tol) return finish(SteadyStatus::converged);

    // implicit Euler step by Newton iteration
    Eigen::VectorXd x = c;
    bool ok = false;
    for (int newton = 0; newton < 10; ++newton) {
      const Eigen::VectorXd g = sys.rhs(x) - (x - c) / dt;
      const Eigen::VectorXd dx = (eye / dt - sys.jacobian(x)).partialPivLu().solve(g);
      if (!dx.allFinite()) break;
      x += dx;
      x = x.cwiseMax(0.0);
      if (dx.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
        ok = true;
        break;
      }
    }
    if (!ok || !x.allFinite()) {
      dt *= 0.25;
      if (dt < 1e-300) break;
      continue;
    }

    for (Eigen::Index s = 0; s < n; ++s) {
      auto& g = growing[static_cast<std::size_t>(s)];
      g = x(s) > c(s) * (1.0 + 1e-12) ? g + 1 : 0;
    }
    c = std::move(x);
    t += dt;
    dt *= 2.0;

    for (Eigen::Index s = 0; s < n; ++s) {
      if (sys.reactive()[static_cast<std::size_t>(s)] && c(s) > opt.divergence_bound)
        out.divergent.push_back(SpeciesId::from_index(static_cast<std::size_t>(s)));
    }
    if (!out.divergent.empty()) return finish(SteadyStatus::divergent);

    if (t > t_max) {
      // Past the horizon, keep going only while a reactive coordinate is
      // still climbing steadily; it will either settle or cross the bound.
      bool climbing = false;
      for (Eigen::Index s = 0; s < n; ++s)
        if (sys.reactive()[static_cast<std::size_t>(s)] && growing[static_cast<std::size_t>(s)] >= 8)
          climbing = true;
      if (!climbing) break;
    }
  }
  return finish(SteadyStatus::not_converged);
}

Linearization linearize(const OdeSystem& sys, const Eigen::VectorXd& c_star,
                        const SteadyStateOptions& opt) {
  check_start(sys, c_star);
  const double res = scaled_residual(sys, c_star);
  if (!(res < opt.residual_tol))
    throw NotAFixedPoint("residual " + std::to_string(res) + " exceeds tolerance");

  const auto n = sys.dimension();
  Linearization out;
  out.jacobian.resize(n, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double h = std::max(1e-6, 1e-6 * std::abs(c_star(s)));
    Eigen::VectorXd up = c_star, down = c_star;
    up(s) += h;
    down(s) -= h;
    out.jacobian.col(s) = (sys.rhs(up) - sys.rhs(down)) / (2.0 * h);
  }
  if (n > 0) {
    out.eigenvalues = Eigen::EigenSolver<Eigen::MatrixXd>(out.jacobian, false).eigenvalues();
    std::sort(out.eigenvalues.begin(), out.eigenvalues.end(),
              [](const std::complex<double>& a, const std::complex<double>& b) {
                return a.real() < b.real() || (a.real() == b.real() && a.imag() < b.imag());
              });
  }
  return out;
}

std::optional<EnzymaticPattern> match_enzymatic(const ReactionNetwork& net) {
  auto unit = [](const std::vector<Term>& side) {
    return std::all_of(side.begin(), side.end(), [](const Term& t) { return t.count == 1; });
  };
  for (const auto& bind : net.reactions) {
    if (bind.reactants.size() != 2 || bind.products.size() != 1 || !unit(bind.reactants) ||
        bind.products[0].count != 1)
      continue;
    const auto complex = bind.products[0].species;
    for (const auto& release : net.reactions) {
      if (release.reactants.size() != 1 || release.reactants[0].species != complex ||
          release.reactants[0].count != 1 || release.products.size() != 2 || !unit(release.products))
        continue;
      for (int e = 0; e < 2; ++e) {
        const auto enzyme = bind.reactants[e].species;
        const auto substrate = bind.reactants[1 - e].species;
        if (release.beta(enzyme) != 1) continue;
        const auto product = release.products[0].species == enzyme ? release.products[1].species
                                                                    : release.products[0].species;
        if (product == substrate || product == complex) continue;
        return EnzymaticPattern{substrate,
                                enzyme,
                                complex,
                                product,
                                bind.id,
                                release.id,
                                double(net.species_at(enzyme).initial + net.species_at(complex).initial),
                                bind.k,
                                release.k};
      }
    }
  }
  return std::nullopt;
}

void write_csv(std::ostream& os, const Trajectory& traj, const ReactionNetwork& net) {
  os << 't';
  for (const auto& s : net.species) os << ',' << s.name;
  os << '\n';
  const Eigen::IOFormat row(Eigen::FullPrecision, Eigen::DontAlignCols, ",", ",");
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    os << traj.times[i] << ',' << traj.states.row(static_cast<Eigen::Index>(i)).format(row) << '\n';
  }
}

}  // namespace chemkernel
