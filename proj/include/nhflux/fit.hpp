#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "flux.hpp"

namespace nhflux {

struct FitWindow {
  double t_min = 0.0;
  double t_max = kInf;
  bool operator==(const FitWindow&) const = default;
};

struct FitOptions {
  std::size_t grid_points = 400;
  double rel_tol = 1e-10;                // golden-section stopping width, relative in tau
  std::optional<double> fixed_amplitude;  // e.g. 1 for the total-loss model 1 - exp(-t/tau)
};

struct FitResult {
  double L_inf = 0.0;
  double tau = 0.0;
  double sse = 0.0;
  double r_squared = 0.0;
  double t_min = 0.0, t_max = 0.0;  // window actually used
  std::size_t n_points = 0;
  bool converged = false;
  bool at_grid_edge = false;
};

namespace detail {

struct FitData {
  std::vector<double> t, y;
};

inline double amplitude(const FitData& d, double tau, const FitOptions& o) {
  if (o.fixed_amplitude) return *o.fixed_amplitude;
  double sfy = 0, sff = 0;
  for (std::size_t i = 0; i < d.t.size(); ++i) {
    const double f = -std::expm1(-d.t[i] / tau);
    sfy += f * d.y[i];
    sff += f * f;
  }
  return sff > 0 ? sfy / sff : 0.0;
}

inline double sse_at(const FitData& d, double tau, const FitOptions& o, double* L = nullptr) {
  const double a = amplitude(d, tau, o);
  if (L) *L = a;
  double s = 0;
  for (std::size_t i = 0; i < d.t.size(); ++i) {
    const double r = d.y[i] + a * std::expm1(-d.t[i] / tau);
    s += r * r;
  }
  return s;
}

}  // namespace detail

// Least squares fit of L_inf (1 - exp(-t/tau)) on the window; log-spaced tau grid over
// [dt, 100 t_max] with the optimal amplitude per tau, then golden-section refinement.
inline FitResult fit_exponential(const std::vector<double>& times, const std::vector<double>& values,
                                 const FitWindow& window = {}, const FitOptions& opt = {}) {
  if (times.size() != values.size()) throw InvalidParameter("fit: times and values differ in length");
  detail::FitData d;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] >= window.t_min && times[i] <= window.t_max) {
      if (!std::isfinite(values[i])) throw NumericalError("fit: non-finite value in series");
      d.t.push_back(times[i]);
      d.y.push_back(values[i]);
    }
  if (d.t.size() < 8) throw InvalidParameter("fit: fewer than 8 points in the window");
  if (std::all_of(d.y.begin(), d.y.end(), [](double v) { return v == 0.0; }))
    throw NumericalError("no loss to fit");
  if (opt.grid_points < 3) throw InvalidParameter("fit: tau grid needs >= 3 points");

  double dt = kInf;
  for (std::size_t i = 1; i < d.t.size(); ++i) dt = std::min(dt, d.t[i] - d.t[i - 1]);
  const double tmax = d.t.back();
  if (!(dt > 0) || !(tmax > 0)) throw InvalidParameter("fit: times must be strictly increasing and positive");

  const double lo = std::log(dt), hi = std::log(100.0 * tmax);
  const auto G = opt.grid_points;
  std::vector<double> ltau(G), sse(G);
  std::size_t best = 0;
  for (std::size_t i = 0; i < G; ++i) {
    ltau[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(G - 1);
    sse[i] = detail::sse_at(d, std::exp(ltau[i]), opt);
    if (sse[i] < sse[best]) best = i;
  }

  FitResult r;
  r.n_points = d.t.size();
  r.t_min = d.t.front();
  r.t_max = tmax;
  r.at_grid_edge = best == 0 || best == G - 1;

  // golden section in log tau on the neighbouring grid cells
  double a = ltau[best == 0 ? 0 : best - 1], b = ltau[best == G - 1 ? G - 1 : best + 1];
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  double f1 = detail::sse_at(d, std::exp(x1), opt), f2 = detail::sse_at(d, std::exp(x2), opt);
  bool refined = false;
  for (int it = 0; it < 200; ++it) {
    if (b - a < opt.rel_tol) {
      refined = true;
      break;
    }
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - g * (b - a);
      f1 = detail::sse_at(d, std::exp(x1), opt);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + g * (b - a);
      f2 = detail::sse_at(d, std::exp(x2), opt);
    }
  }
  double lt = f1 <= f2 ? x1 : x2;
  double fbest = std::min(f1, f2);
  if (sse[best] < fbest) {
    lt = ltau[best];
    fbest = sse[best];
  }
  r.tau = std::exp(lt);
  r.sse = detail::sse_at(d, r.tau, opt, &r.L_inf);
  double mean = 0;
  for (double v : d.y) mean += v;
  mean /= static_cast<double>(d.y.size());
  double sst = 0;
  for (double v : d.y) sst += (v - mean) * (v - mean);
  r.r_squared = sst > 0 ? 1.0 - r.sse / sst : (r.sse == 0 ? 1.0 : 0.0);
  r.converged = refined && !r.at_grid_edge;
  return r;
}

inline FitResult fit_exponential(const std::vector<double>& times, const Eigen::VectorXd& values,
                                 const FitWindow& window = {}, const FitOptions& opt = {}) {
  return fit_exponential(times, std::vector<double>(values.data(), values.data() + values.size()), window, opt);
}

struct TrapFit {
  FitResult fit;
  double share = 0.0;  // L_inf_j / sum_k L_inf_k
};

inline std::map<std::size_t, TrapFit> fit_all_traps(const FluxRecord& flux, const FitWindow& window = {},
                                                    const FitOptions& opt = {}) {
  if (flux.lossy.empty()) throw InvalidParameter("flux record has no lossy states");
  std::map<std::size_t, TrapFit> out;
  double sum = 0;
  for (auto j : flux.lossy) {
    out[j].fit = fit_exponential(flux.times, flux.loss(j), window, opt);
    sum += out[j].fit.L_inf;
  }
  for (auto& [j, tf] : out) tf.share = sum != 0 ? tf.fit.L_inf / sum : 0.0;
  return out;
}

struct GateResult {
  bool passed = true;
  std::string message;
};

inline GateResult fit_quality_gate(const FitResult& r, double threshold = 0.995) {
  GateResult g;
  std::string why;
  if (r.r_squared < threshold)
    why = "r^2 = " + std::to_string(r.r_squared) + " below " + std::to_string(threshold);
  if (r.L_inf < 0.0 || r.L_inf > 1.05)
    why += (why.empty() ? "" : "; ") + std::string("L_inf = ") + std::to_string(r.L_inf) + " outside [0, 1.05]";
  if (!r.converged)
    why += (why.empty() ? "" : "; ") + std::string("tau refinement did not converge inside the grid");
  if (why.empty()) {
    g.message = "single-exponential model adequate";
    return g;
  }
  g.passed = false;
  g.message = "single-exponential fit rejected (" + why +
              "); report the raw loss curves instead of a timescale";
  return g;
}

}  // namespace nhflux
