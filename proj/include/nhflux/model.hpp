#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "units.hpp"

namespace nhflux {

using cd = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using RMatrix = Eigen::MatrixXd;

// How a lifetime T maps onto Im(eps).
//  PiHbarOverT : Im eps = -pi hbar / T   (population decays as exp(-2 pi t / T))
//  Population  : Im eps = -hbar / (2 T)  (population decays as exp(-t / T))
enum class LifetimeConvention { PiHbarOverT, Population };

inline const char* to_string(LifetimeConvention c) {
  return c == LifetimeConvention::PiHbarOverT ? "pi-hbar-over-T" : "population";
}

inline LifetimeConvention lifetime_convention_from_string(const std::string& s) {
  if (s == "pi-hbar-over-T") return LifetimeConvention::PiHbarOverT;
  if (s == "population") return LifetimeConvention::Population;
  throw InvalidParameter("unknown lifetime convention '" + s + "'");
}

// Imaginary part of a site energy for local decay time T (ps). T = inf gives 0.
inline double loss_energy_from_lifetime(double T_loss, const UnitSystem& u = kUnits,
                                        LifetimeConvention conv = LifetimeConvention::PiHbarOverT) {
  if (!(T_loss > 0.0)) throw InvalidParameter("loss lifetime must be positive");
  if (std::isinf(T_loss)) return 0.0;
  return conv == LifetimeConvention::PiHbarOverT ? -kPi * u.hbar / T_loss : -u.hbar / (2.0 * T_loss);
}

class SystemHamiltonian {
 public:
  SystemHamiltonian() = default;

  SystemHamiltonian(std::vector<cd> eps, RMatrix h, std::vector<std::string> labels)
      : eps_(std::move(eps)), h_(std::move(h)), labels_(std::move(labels)) {
    const auto n = eps_.size();
    if (n == 0) throw InvalidParameter("system needs at least one state");
    if (static_cast<std::size_t>(h_.rows()) != n || static_cast<std::size_t>(h_.cols()) != n)
      throw InvalidParameter("coupling matrix shape does not match number of states");
    if (labels_.empty())
      for (std::size_t j = 0; j < n; ++j) labels_.push_back("site" + std::to_string(j + 1));
    if (labels_.size() != n) throw InvalidParameter("label count does not match number of states");
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(eps_[j].real()) || !std::isfinite(eps_[j].imag()))
        throw InvalidParameter("non-finite site energy");
      if (eps_[j].imag() > 0.0) throw InvalidParameter("gain (Im eps > 0) is not supported");
      if (h_(j, j) != 0.0) throw InvalidParameter("coupling matrix must have zero diagonal");
      for (std::size_t k = 0; k < n; ++k)
        if (h_(j, k) != h_(k, j)) throw InvalidParameter("coupling matrix must be symmetric");
    }
  }

  std::size_t n_states() const { return eps_.size(); }
  const std::vector<cd>& eps() const { return eps_; }
  cd eps(std::size_t j) const { return eps_.at(j); }
  const RMatrix& couplings() const { return h_; }
  const std::vector<std::string>& labels() const { return labels_; }

  bool is_hermitian() const {
    return std::all_of(eps_.begin(), eps_.end(), [](cd e) { return e.imag() == 0.0; });
  }
  bool has_cavity() const { return cavity_index().has_value(); }
  std::optional<std::size_t> cavity_index() const {
    auto it = std::find(labels_.begin(), labels_.end(), "cavity");
    if (it == labels_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels_.begin());
  }
  std::vector<std::size_t> lossy_states() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < eps_.size(); ++j)
      if (eps_[j].imag() < 0.0) out.push_back(j);
    return out;
  }

  CMatrix matrix() const {
    CMatrix H = h_.cast<cd>();
    for (std::size_t j = 0; j < eps_.size(); ++j) H(j, j) = eps_[j];
    return H;
  }

 private:
  std::vector<cd> eps_;
  RMatrix h_;
  std::vector<std::string> labels_;
};

// Nearest-neighbour chain; loss_map is 0-based site -> lifetime (ps).
inline SystemHamiltonian build_excitonic_chain(std::size_t n, double site_energy, double h,
                                               const std::map<std::size_t, double>& loss_map = {},
                                               const UnitSystem& u = kUnits,
                                               LifetimeConvention conv = LifetimeConvention::PiHbarOverT) {
  if (n < 1) throw InvalidParameter("chain needs at least one site");
  std::vector<cd> eps(n, cd(site_energy, 0.0));
  for (auto [site, T] : loss_map) {
    if (site >= n) throw InvalidParameter("loss on out-of-range site " + std::to_string(site + 1));
    eps[site] = cd(site_energy, loss_energy_from_lifetime(T, u, conv));
  }
  RMatrix hm = RMatrix::Zero(n, n);
  for (std::size_t j = 0; j + 1 < n; ++j) hm(j, j + 1) = hm(j + 1, j) = h;
  return SystemHamiltonian(std::move(eps), std::move(hm), {});
}

// Appends a "cavity" state with energy omega_c - i pi hbar / T_c (or the population
// convention) coupled by Omega to every existing state.
inline SystemHamiltonian embed_cavity(const SystemHamiltonian& sys, double omega_c, double T_c, double Omega,
                                      const UnitSystem& u = kUnits,
                                      LifetimeConvention conv = LifetimeConvention::PiHbarOverT) {
  if (sys.has_cavity()) throw InvalidParameter("system already contains a cavity state");
  if (!std::isfinite(Omega)) throw InvalidParameter("cavity coupling must be finite");
  const auto n = sys.n_states();
  std::vector<cd> eps = sys.eps();
  eps.emplace_back(omega_c, loss_energy_from_lifetime(T_c, u, conv));
  RMatrix h = RMatrix::Zero(n + 1, n + 1);
  h.topLeftCorner(n, n) = sys.couplings();
  for (std::size_t j = 0; j < n; ++j) h(j, n) = h(n, j) = Omega;
  auto labels = sys.labels();
  labels.emplace_back("cavity");
  return SystemHamiltonian(std::move(eps), std::move(h), std::move(labels));
}

class InitialCondition {
 public:
  static InitialCondition site(std::size_t j) {
    InitialCondition ic;
    ic.site_ = j;
    return ic;
  }
  static InitialCondition matrix(CMatrix rho) {
    InitialCondition ic;
    ic.rho_ = std::move(rho);
    return ic;
  }

  bool is_pure_site() const { return site_.has_value(); }
  std::size_t site_index() const { return site_.value(); }

  // validated rho(0): Hermitian, PSD, unit trace
  CMatrix density_matrix(std::size_t n) const {
    if (site_) {
      if (*site_ >= n) throw InvalidParameter("initial site out of range");
      CMatrix r = CMatrix::Zero(n, n);
      r(*site_, *site_) = 1.0;
      return r;
    }
    const CMatrix& r = *rho_;
    if (static_cast<std::size_t>(r.rows()) != n || static_cast<std::size_t>(r.cols()) != n)
      throw InvalidParameter("initial density matrix has wrong dimension");
    if ((r - r.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
      throw InvalidParameter("initial density matrix is not Hermitian");
    if (std::abs(r.trace() - cd(1.0)) > 1e-12) throw InvalidParameter("initial density matrix must have trace 1");
    Eigen::SelfAdjointEigenSolver<CMatrix> es(r);
    if (es.eigenvalues().minCoeff() < -1e-12)
      throw InvalidParameter("initial density matrix is not positive semidefinite");
    return r;
  }

 private:
  std::optional<std::size_t> site_;
  std::optional<CMatrix> rho_;
};

}  // namespace nhflux
