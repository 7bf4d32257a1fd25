#pragma once

#include <unsupported/Eigen/MatrixFunctions>

#include <cstddef>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "units.hpp"

namespace nhflux {

// U = exp(-i H dt / hbar), Ubar = exp(+i H^dagger dt / hbar); rho -> U rho Ubar
struct BarePropagators {
  CMatrix U, Ubar;
  double dt = 0.0;

  std::size_t n() const { return static_cast<std::size_t>(U.rows()); }

  // Liouville step on the row-major vectorised rho, alpha = p * n + m:
  // G(a', a) = U(p', p) Ubar(m, m')
  CMatrix liouville() const {
    const auto d = n();
    CMatrix G(d * d, d * d);
    for (std::size_t pp = 0; pp < d; ++pp)
      for (std::size_t mp = 0; mp < d; ++mp)
        for (std::size_t p = 0; p < d; ++p)
          for (std::size_t m = 0; m < d; ++m) G(pp * d + mp, p * d + m) = U(pp, p) * Ubar(m, mp);
    return G;
  }
};

inline BarePropagators bare_propagators(const SystemHamiltonian& sys, double dt, const UnitSystem& u = kUnits) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidParameter("dt must be positive");
  const CMatrix H = sys.matrix();
  const cd i(0.0, 1.0);
  BarePropagators bp;
  bp.dt = dt;
  bp.U = (CMatrix(-i * dt / u.hbar * H)).exp();
  bp.Ubar = (CMatrix(i * dt / u.hbar * H.adjoint())).exp();
  return bp;
}

struct TrajectoryMetadata {
  std::string engine;
  double dt = 0.0;
  std::size_t memory_steps = 0;
  double svd_cutoff = 0.0;
  std::size_t max_bond = 0;
  std::size_t max_bond_reached = 0;
  double truncation_error = 0.0;  // accumulated discarded weight estimate
};

struct Trajectory {
  std::vector<double> times;
  std::vector<CMatrix> rho;
  TrajectoryMetadata metadata;

  std::size_t size() const { return rho.size(); }
  std::size_t n_states() const { return rho.empty() ? 0 : static_cast<std::size_t>(rho.front().rows()); }
  std::vector<double> trace() const {
    std::vector<double> t;
    t.reserve(rho.size());
    for (const auto& r : rho) t.push_back(r.trace().real());
    return t;
  }
};

inline CMatrix vec_to_rho(const Eigen::VectorXcd& v, std::size_t d) {
  CMatrix r(d, d);
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t m = 0; m < d; ++m) r(p, m) = v(p * d + m);
  return r;
}

inline Eigen::VectorXcd rho_to_vec(const CMatrix& r) {
  const auto d = static_cast<std::size_t>(r.rows());
  Eigen::VectorXcd v(d * d);
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t m = 0; m < d; ++m) v(p * d + m) = r(p, m);
  return v;
}

inline Trajectory propagate_bare(const SystemHamiltonian& sys, const CMatrix& rho0, double dt, std::size_t n_steps,
                                 const UnitSystem& u = kUnits) {
  const auto bp = bare_propagators(sys, dt, u);
  if (static_cast<std::size_t>(rho0.rows()) != sys.n_states()) throw InvalidParameter("rho0 dimension mismatch");
  Trajectory tr;
  tr.metadata.engine = "bare";
  tr.metadata.dt = dt;
  tr.times.reserve(n_steps + 1);
  tr.rho.reserve(n_steps + 1);
  CMatrix r = rho0;
  for (std::size_t n = 0; n <= n_steps; ++n) {
    tr.times.push_back(dt * static_cast<double>(n));
    tr.rho.push_back(r);
    r = bp.U * r * bp.Ubar;
  }
  return tr;
}

}  // namespace nhflux
