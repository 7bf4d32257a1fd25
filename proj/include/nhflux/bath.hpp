#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "units.hpp"

namespace nhflux {

// J(omega) in cm^-1 with omega an energy in cm^-1.
class SpectralDensity {
 public:
  enum class Form { OhmicExponential, Tabulated };

  static SpectralDensity ohmic_exponential(double xi, double omega_c) {
    if (!(xi >= 0.0) || !std::isfinite(xi)) throw InvalidParameter("xi must be finite and >= 0");
    if (!(omega_c > 0.0) || !std::isfinite(omega_c)) throw InvalidParameter("omega_c must be positive");
    SpectralDensity sd;
    sd.form_ = Form::OhmicExponential;
    sd.xi_ = xi;
    sd.omega_c_ = omega_c;
    return sd;
  }

  // Piecewise-linear through the samples, J(0) = 0 assumed, zero beyond the last sample.
  static SpectralDensity tabulated(std::vector<double> omega, std::vector<double> J) {
    if (omega.size() != J.size() || omega.size() < 2) throw InvalidParameter("tabulated J needs >= 2 (omega, J) pairs");
    for (std::size_t i = 0; i < omega.size(); ++i) {
      if (!(omega[i] >= 0.0) || !std::isfinite(J[i]) || J[i] < 0.0)
        throw InvalidParameter("tabulated J must have omega >= 0 and J >= 0");
      if (i > 0 && !(omega[i] > omega[i - 1])) throw InvalidParameter("tabulated omega must be strictly increasing");
    }
    if (omega.front() > 0.0) {
      omega.insert(omega.begin(), 0.0);
      J.insert(J.begin(), 0.0);
    } else if (J.front() != 0.0) {
      throw InvalidParameter("tabulated J(0) must vanish");
    }
    SpectralDensity sd;
    sd.form_ = Form::Tabulated;
    sd.w_ = std::move(omega);
    sd.j_ = std::move(J);
    return sd;
  }

  // two columns "omega J", '#' starts a comment
  static SpectralDensity from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidParameter("cannot open spectral density file " + path);
    std::vector<double> w, j;
    std::string line;
    while (std::getline(in, line)) {
      if (auto p = line.find('#'); p != std::string::npos) line.erase(p);
      std::istringstream ls(line);
      double a, b;
      if (!(ls >> a)) continue;
      if (!(ls >> b)) throw InvalidParameter("malformed line in " + path + ": " + line);
      w.push_back(a);
      j.push_back(b);
    }
    return tabulated(std::move(w), std::move(j));
  }

  Form form() const { return form_; }
  double xi() const { return xi_; }
  double omega_c() const { return omega_c_; }
  const std::vector<double>& table_omega() const { return w_; }
  const std::vector<double>& table_J() const { return j_; }

  bool is_zero() const {
    if (form_ == Form::OhmicExponential) return xi_ == 0.0;
    return std::all_of(j_.begin(), j_.end(), [](double v) { return v == 0.0; });
  }

  double operator()(double omega) const {
    if (omega < 0.0) throw InvalidParameter("spectral density evaluated at negative frequency");
    if (form_ == Form::OhmicExponential) return 0.5 * kPi * xi_ * omega * std::exp(-omega / omega_c_);
    if (omega >= w_.back()) return 0.0;
    auto it = std::upper_bound(w_.begin(), w_.end(), omega);
    const auto i = static_cast<std::size_t>(it - w_.begin());
    const double f = (omega - w_[i - 1]) / (w_[i] - w_[i - 1]);
    return j_[i - 1] + f * (j_[i] - j_[i - 1]);
  }

  // J(omega)/omega, finite at omega -> 0
  double over_omega(double omega) const {
    if (form_ == Form::OhmicExponential) return 0.5 * kPi * xi_ * std::exp(-omega / omega_c_);
    if (omega <= 0.0) return j_[1] / w_[1];
    return (*this)(omega) / omega;
  }

  // hard upper limit of every frequency integral
  double upper_limit() const { return form_ == Form::OhmicExponential ? 20.0 * omega_c_ : w_.back(); }

  // breakpoints of the tabulated interpolant (quadrature panels must not straddle kinks)
  std::vector<double> breakpoints() const {
    if (form_ == Form::OhmicExponential) return {0.0, upper_limit()};
    return w_;
  }

 private:
  Form form_ = Form::OhmicExponential;
  double xi_ = 0.0, omega_c_ = 1.0;
  std::vector<double> w_, j_;
};

inline double evaluate_J(const SpectralDensity& sd, double omega) { return sd(omega); }

namespace detail {

struct QuadResult {
  cd value;
  double error;
  double l1;
};

// Sum of fixed Gauss-Kronrod panels no wider than max_width that respect breakpoints.
// Panel width is halved globally until the summed Kronrod error is below rel_tol * L1.
template <class F>
QuadResult integrate_panels(F&& f, const std::vector<double>& breaks, double max_width, double rel_tol) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  QuadResult r{cd(0.0), 0.0, 0.0};
  for (int attempt = 0; attempt < 8; ++attempt, max_width *= 0.5) {
    r = QuadResult{cd(0.0), 0.0, 0.0};
    for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
      const double lo = breaks[b], hi = breaks[b + 1];
      const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((hi - lo) / max_width)));
      const double w = (hi - lo) / static_cast<double>(n);
      for (std::size_t p = 0; p < n; ++p) {
        double err = 0.0, l1 = 0.0;
        const double a = lo + w * static_cast<double>(p);
        const double c = (p + 1 == n) ? hi : a + w;
        r.value += GK::integrate(f, a, c, 0, 0.0, &err, &l1);
        r.error += err;
        r.l1 += l1;
      }
    }
    if (r.error <= rel_tol * r.l1) break;
  }
  return r;
}

// J(E) coth(beta E / 2), finite at E = 0
inline double j_coth(const SpectralDensity& sd, double E, double beta) {
  const double x = 0.5 * beta * E;
  if (x < 1e-6) return sd.over_omega(E) * (2.0 / beta) * (1.0 + x * x / 3.0);
  return sd(E) / std::tanh(x);
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-4) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

// (sin x - x) / x^2
inline double sin_minus_x_over_x2(double x) {
  if (std::abs(x) < 0.1) {
    const double x2 = x * x;
    return x * (-1.0 / 6.0 + x2 * (1.0 / 120.0 + x2 * (-1.0 / 5040.0 + x2 / 362880.0)));
  }
  return (std::sin(x) - x) / (x * x);
}

inline void check_quad(const QuadResult& q, double rel_tol, const char* what) {
  if (!std::isfinite(q.value.real()) || !std::isfinite(q.value.imag()))
    throw NumericalError(std::string(what) + ": non-finite quadrature result");
  if (q.error > 10.0 * rel_tol * std::max(q.l1, 1e-300))
    throw NumericalError(std::string(what) + ": quadrature did not converge, estimated residual " +
                         std::to_string(q.error) + " (L1 " + std::to_string(q.l1) + ")");
}

}  // namespace detail

// lambda = (4/pi) int J/omega, i.e. the +-1 coupling convention
inline double reorganization_energy(const SpectralDensity& sd) {
  if (sd.is_zero()) return 0.0;
  if (sd.form() == SpectralDensity::Form::OhmicExponential) return 2.0 * sd.xi() * sd.omega_c();
  auto q = detail::integrate_panels([&](double E) { return cd(sd.over_omega(E)); }, sd.breakpoints(),
                                    sd.upper_limit(), 1e-10);
  detail::check_quad(q, 1e-10, "reorganization energy");
  return 4.0 / kPi * q.value.real();
}

// C(t) = (1/pi) int_0^wmax J(E) [coth(beta E/2) cos(E t/hbar) - i sin(E t/hbar)] dE, cm^-2
inline cd bath_correlation(const SpectralDensity& sd, double temperature, double t, const UnitSystem& u = kUnits,
                           double rel_tol = 1e-9) {
  if (!(temperature > 0.0)) throw InvalidParameter("temperature must be positive");
  if (sd.is_zero()) return cd(0.0);
  const double beta = u.beta(temperature);
  const double wmax = sd.upper_limit();
  const double panel = std::min(wmax, (t == 0.0) ? wmax : 4.0 * u.hbar / std::abs(t));
  auto q = detail::integrate_panels(
      [&](double E) {
        const double ph = E * t / u.hbar;
        return cd(detail::j_coth(sd, E, beta) * std::cos(ph), -sd(E) * std::sin(ph));
      },
      sd.breakpoints(), panel, rel_tol);
  detail::check_quad(q, rel_tol, "bath correlation");
  return q.value / kPi;
}

struct BathAttachment {
  std::size_t site = 0;
  SpectralDensity spectral_density;
  double occupied_value = 1.0;  // eigenvalue of s_j on |j>
  double other_value = -1.0;    // eigenvalue on every other state (cavity included)

  double eigenvalue(std::size_t state) const { return state == site ? occupied_value : other_value; }
};

// Rejects attachments to the cavity state or to out-of-range sites.
inline void validate_attachments(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths) {
  const auto cav = sys.cavity_index();
  for (const auto& b : baths) {
    if (b.site >= sys.n_states()) throw InvalidParameter("bath attached to out-of-range state");
    if (cav && b.site == *cav) throw InvalidParameter("the cavity state cannot carry a bath");
  }
}

// Discretised influence-functional coefficients, 1/hbar^2 included (dimensionless).
//
// Time point k owns the cell [(k-1/2)dt, (k+1/2)dt]; the first point owns [0, dt/2]
// and the current end point n owns [(n-1/2)dt, n dt]. A coefficient is the double
// integral of C(t'-t'') with t' in the later cell and t'' in the earlier one
// (t'' < t' for a cell paired with itself).
struct EtaTable {
  enum class Point { Start, Interior, End };

  double dt = 0.0;
  std::size_t K = 0;
  cd self_full{0.0}, self_half{0.0};
  std::vector<cd> ff, fs, ef, es;  // index = k - k', 1..K (entry 0 unused)
  // half-cell coefficients: half[0] = self of a dt/2 cell, half[m] = pair of dt/2
  // cells m half steps apart, m <= 2K+1. Every entry above is a sum of these.
  std::vector<cd> half;

  cd self(Point p) const { return p == Point::Interior ? self_full : self_half; }

  // later point kind, earlier point kind, separation delta >= 0
  cd coefficient(Point later, Point earlier, std::size_t delta) const {
    if (delta == 0) return self(later);
    if (delta > K) return cd(0.0);
    const bool end = later == Point::End;
    const bool start = earlier == Point::Start;
    if (end) return start ? es[delta] : ef[delta];
    return start ? fs[delta] : ff[delta];
  }
};

namespace detail {

struct EtaIntegrator {
  const SpectralDensity& sd;
  double beta, hbar, rel_tol;

  // cells of widths w1 (later) and w2 (earlier), centres separated by dc
  cd cross(double w1, double w2, double dc) const {
    if (sd.is_zero()) return cd(0.0);
    const double panel = std::min(sd.upper_limit(), 4.0 * hbar / std::max({dc, w1, w2}));
    auto q = integrate_panels(
        [&](double E) {
          const double nu = E / hbar;
          const double s = sinc(0.5 * nu * w1) * sinc(0.5 * nu * w2);
          const double ph = nu * dc;
          return cd(j_coth(sd, E, beta) * s * std::cos(ph), -sd(E) * s * std::sin(ph));
        },
        sd.breakpoints(), panel, rel_tol);
    check_quad(q, rel_tol, "eta coefficient");
    return q.value * (w1 * w2 / (kPi * hbar * hbar));
  }

  cd self(double w) const {
    if (sd.is_zero()) return cd(0.0);
    const double panel = std::min(sd.upper_limit(), 4.0 * hbar / w);
    auto q = integrate_panels(
        [&](double E) {
          const double x = E / hbar * w;
          const double s = sinc(0.5 * x);
          return cd(j_coth(sd, E, beta) * 0.5 * s * s, sd(E) * sin_minus_x_over_x2(x));
        },
        sd.breakpoints(), panel, rel_tol);
    check_quad(q, rel_tol, "eta self coefficient");
    return q.value * (w * w / (kPi * hbar * hbar));
  }
};

}  // namespace detail

inline EtaTable build_eta_table(const SpectralDensity& sd, double temperature, double dt, std::size_t K,
                                const UnitSystem& u = kUnits, double rel_tol = 1e-9) {
  if (!(dt > 0.0)) throw InvalidParameter("dt must be positive");
  if (K < 1) throw InvalidParameter("memory length K must be >= 1");
  if (!(temperature > 0.0)) throw InvalidParameter("temperature must be positive");
  const detail::EtaIntegrator in{sd, u.beta(temperature), u.hbar, rel_tol};
  const double h = 0.5 * dt;
  EtaTable t;
  t.dt = dt;
  t.K = K;
  t.half.resize(2 * K + 2);
  t.half[0] = in.self(h);
  for (std::size_t m = 1; m < t.half.size(); ++m) t.half[m] = in.cross(h, h, h * static_cast<double>(m));
  const auto& q = t.half;
  t.self_half = q[0];
  t.self_full = 2.0 * q[0] + q[1];
  t.ff.assign(K + 1, cd(0.0));
  t.fs = t.ef = t.es = t.ff;
  for (std::size_t d = 1; d <= K; ++d) {
    t.ff[d] = q[2 * d - 1] + 2.0 * q[2 * d] + q[2 * d + 1];
    t.fs[d] = t.ef[d] = q[2 * d - 1] + q[2 * d];
    t.es[d] = q[2 * d - 1];
  }
  return t;
}

// Smallest K with |eta_{k,0}| <= ratio |eta_{0,0}| for every k > K up to 2K+20
// (interior coefficients); throws if none up to K_max.
inline std::size_t select_memory_length(const SpectralDensity& sd, double temperature, double dt,
                                        double ratio = 1e-4, std::size_t K_max = 4000,
                                        const UnitSystem& u = kUnits) {
  if (sd.is_zero()) return 1;
  const detail::EtaIntegrator in{sd, u.beta(temperature), u.hbar, 1e-9};
  const double ref = ratio * std::abs(in.self(dt));
  std::vector<double> mag(1, 0.0);
  auto at = [&](std::size_t d) {
    while (mag.size() <= d) mag.push_back(std::abs(in.cross(dt, dt, dt * static_cast<double>(mag.size()))));
    return mag[d];
  };
  for (std::size_t K = 1; K <= K_max; ++K) {
    if (at(K + 1) > ref) continue;
    bool ok = true;
    for (std::size_t d = K + 2; d <= 2 * K + 20 && ok; ++d) ok = at(d) <= ref;
    if (ok) return K;
  }
  throw NumericalError("memory length selection: no K <= " + std::to_string(K_max) + " meets ratio");
}

}  // namespace nhflux
