#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "propagators.hpp"
#include "units.hpp"

namespace nhflux {

// Cumulative transfers P_{j<-k}(t_n); column j * n + k of `transfer`.
struct FluxRecord {
  std::vector<double> times;
  std::size_t n_states = 0;
  RMatrix transfer;                  // n_times x n_states^2
  std::vector<std::size_t> lossy;    // lossy state indices
  std::vector<double> total;         // L(t) = 1 - Tr rho

  std::size_t size() const { return times.size(); }
  Eigen::VectorXd P(std::size_t j, std::size_t k) const { return transfer.col(Eigen::Index(j * n_states + k)); }
  double P(std::size_t j, std::size_t k, std::size_t n) const { return transfer(Eigen::Index(n), Eigen::Index(j * n_states + k)); }
  // L_j(t) = -P_{j<-j}(t)
  Eigen::VectorXd loss(std::size_t j) const { return -P(j, j); }
  // sum over lossy sites of L_j
  Eigen::VectorXd summed_site_loss() const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(Eigen::Index(times.size()));
    for (auto j : lossy) s += loss(j);
    return s;
  }
};

inline std::vector<double> total_loss(const Trajectory& traj) {
  std::vector<double> L;
  L.reserve(traj.size());
  for (const auto& r : traj.rho) L.push_back(1.0 - r.trace().real());
  return L;
}

// P_{j<-k}(t) = (2/hbar) int_0^t [Im H_jk Re rho_jk - Re H_jk Im rho_jk] dt'
// (for j = k only the loss term survives), composite trapezoid on the trajectory grid.
inline FluxRecord pairwise_transfer(const Trajectory& traj, const SystemHamiltonian& sys, const UnitSystem& u = kUnits) {
  const auto d = sys.n_states();
  if (traj.size() == 0) throw InvalidParameter("empty trajectory");
  if (traj.n_states() != d) throw InvalidParameter("trajectory dimension does not match the system");
  if (traj.times.size() != traj.rho.size()) throw InvalidParameter("trajectory times and states differ in length");
  const CMatrix H = sys.matrix();
  const auto nt = traj.size();
  FluxRecord f;
  f.times = traj.times;
  f.n_states = d;
  f.lossy = sys.lossy_states();
  f.total = total_loss(traj);
  f.transfer = RMatrix::Zero(Eigen::Index(nt), Eigen::Index(d * d));
  // Hermitian part of rho: truncated engines leave a small anti-Hermitian residue
  // that would otherwise break P_{j<-k} = -P_{k<-j}
  auto rate = [&](std::size_t n, std::size_t j, std::size_t k) {
    const cd h = H(j, k), r = 0.5 * (traj.rho[n](j, k) + std::conj(traj.rho[n](k, j)));
    return 2.0 / u.hbar * (h.imag() * r.real() - h.real() * r.imag());
  };
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = 0; k < d; ++k) {
      const auto c = Eigen::Index(j * d + k);
      double prev = rate(0, j, k), acc = 0.0;
      for (std::size_t n = 1; n < nt; ++n) {
        const double cur = rate(n, j, k);
        acc += 0.5 * (traj.times[n] - traj.times[n - 1]) * (prev + cur);
        f.transfer(Eigen::Index(n), c) = acc;
        prev = cur;
      }
    }
  return f;
}

// max_n |L(t_n) - sum_j L_j(t_n)|
inline double loss_partition_check(const FluxRecord& flux, const std::vector<double>& totalL) {
  if (totalL.size() != flux.size()) throw InvalidParameter("loss series and flux record have different grids");
  const auto s = flux.summed_site_loss();
  double m = 0.0;
  for (std::size_t n = 0; n < totalL.size(); ++n) m = std::max(m, std::abs(totalL[n] - s(Eigen::Index(n))));
  return m;
}

}  // namespace nhflux
