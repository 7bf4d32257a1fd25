#pragma once

#include <nhflux/nhflux.hpp>

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <complex>
#include <map>
#include <vector>

namespace th {

using namespace nhflux;

inline SystemHamiltonian trimer(bool drain = true, LifetimeConvention c = LifetimeConvention::Population) {
  std::map<std::size_t, double> loss;
  if (drain) loss[2] = 0.3;
  return build_excitonic_chain(3, 0.0, -181.5, loss, kUnits, c);
}

inline std::vector<BathAttachment> site_baths(std::size_t n, const SpectralDensity& sd) {
  std::vector<BathAttachment> b;
  for (std::size_t j = 0; j < n; ++j) b.push_back({j, sd, 1.0, -1.0});
  return b;
}

inline CMatrix site_rho(std::size_t n, std::size_t j) {
  CMatrix r = CMatrix::Zero(n, n);
  r(j, j) = 1.0;
  return r;
}

inline double max_abs(const CMatrix& a, const CMatrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline double max_traj_dev(const Trajectory& a, const Trajectory& b) {
  double m = 0.0;
  for (std::size_t n = 0; n < std::min(a.size(), b.size()); ++n) m = std::max(m, max_abs(a.rho[n], b.rho[n]));
  return m;
}

// Independent correlation function for the Ohmic-exponential density: composite
// Simpson on a dense uniform frequency grid out to 40 omega_c.
struct CorrelationOracle {
  double xi, wc, beta, hbar;
  std::vector<double> w, jc, js;  // Simpson-weighted J coth and J
  double dw;

  CorrelationOracle(double xi_, double wc_, double T, std::size_t n = 80000)
      : xi(xi_), wc(wc_), beta(1.0 / (kUnits.kB * T)), hbar(kUnits.hbar) {
    const double top = 40.0 * wc;
    dw = top / double(n);
    for (std::size_t i = 0; i <= n; ++i) {
      const double e = dw * double(i);
      const double wt = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      const double J = 0.5 * kPi * xi * e * std::exp(-e / wc);
      // J coth(beta e / 2) -> xi pi / beta at e = 0
      const double jcoth = e == 0.0 ? kPi * xi / beta : J / std::tanh(0.5 * beta * e);
      w.push_back(e);
      jc.push_back(wt * jcoth);
      js.push_back(wt * J);
    }
  }

  std::complex<double> operator()(double t) const {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double ph = w[i] * t / hbar;
      re += jc[i] * std::cos(ph);
      im -= js[i] * std::sin(ph);
    }
    return std::complex<double>(re, im) * (dw / 3.0) / kPi;
  }

  // (1/hbar^2) * double integral of C(t'-t'') over two cells of width h whose
  // centres are c apart (t'' < t' inside one cell when c = 0). The inner
  // integral is rewritten in the difference variable u with weight (h - |u|).
  std::complex<double> cell_pair(double h, double c) const {
    using G = boost::math::quadrature::gauss<double, 40>;
    std::complex<double> s = 0.0;
    if (c == 0.0) {
      s = G::integrate([&](double u) { return (*this)(u) * (h - u); }, 0.0, h);
    } else {
      s = G::integrate([&](double u) { return (*this)(c + u) * (h - std::abs(u)); }, -h, 0.0) +
          G::integrate([&](double u) { return (*this)(c + u) * (h - std::abs(u)); }, 0.0, h);
    }
    return s / (hbar * hbar);
  }

  // Re of (1/hbar^2) int_0^t int_0^t' C(t' - t'') = (1/hbar^2) int_0^t (t - u) Re C(u) du
  double re_g(double t) const {
    using G = boost::math::quadrature::gauss<double, 40>;
    const std::size_t panels = 8;
    double s = 0.0;
    for (std::size_t p = 0; p < panels; ++p) {
      const double a = t * double(p) / panels, b = t * double(p + 1) / panels;
      s += G::integrate([&](double u) { return (*this)(u).real() * (t - u); }, a, b);
    }
    return s / (hbar * hbar);
  }
};

}  // namespace th
