#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "runner.hpp"

namespace nhflux {

struct ConvergencePoint {
  double dt = 0.0;
  std::size_t memory = 0;  // steps actually used
  double cutoff = 0.0;
  std::vector<double> observables;
  std::size_t max_bond = 0;
  double runtime_s = 0.0;
};

struct ConvergenceReport {
  std::vector<std::string> names;  // observable labels, shared by every point
  std::vector<ConvergencePoint> points;
  std::vector<std::vector<double>> deltas;  // max |difference| between points i and j
  std::size_t reference = 0;                // most refined point
  std::vector<double> deviation;            // each point against the reference
  double target = 0.01;
  std::optional<std::size_t> recommended;   // cheapest point within target of the reference
};

// Runs the problem for every (dt, K, cutoff) tuple. K = 0 means the automatic
// memory rule at that dt. Observables are the populations at t_final / 4, / 2,
// 3/4 and t_final plus every L_j(t_final); checkpoint times must lie on every grid.
inline ConvergenceReport convergence_scan(const ExperimentConfig& cfg, const std::vector<double>& dt_list,
                                          const std::vector<std::size_t>& K_list,
                                          const std::vector<double>& cutoff_list, double target = 0.01,
                                          const RunOptions& opt = {}) {
  if (dt_list.empty() || K_list.empty() || cutoff_list.empty())
    throw InvalidParameter("convergence scan needs non-empty dt, K and cutoff lists");
  if (!(target > 0.0)) throw InvalidParameter("convergence target must be positive");
  const double T = cfg.propagation.t_final;
  const std::vector<double> checks{0.25 * T, 0.5 * T, 0.75 * T, T};

  ConvergenceReport rep;
  rep.target = target;
  for (double dt : dt_list)
    for (std::size_t K : K_list)
      for (double cut : cutoff_list) {
        auto c = cfg;
        c.propagation.dt = dt;
        c.propagation.svd_cutoff = cut;
        if (K > 0) c.propagation.memory = K;
        else c.propagation.memory.reset();
        const auto t0 = std::chrono::steady_clock::now();
        auto pb = build_problem(c);
        ConvergencePoint p;
        p.dt = dt;
        p.cutoff = cut;
        p.memory = resolve_memory(pb);
        std::vector<EtaTable> eta;
        if (pb.engine != "bare" && !pb.baths.empty()) eta = eta_tables(pb, p.memory);
        const auto tr = run_engine(pb, pb.engine, pb.n_steps, eta, opt);
        const auto flux = pairwise_transfer(tr, pb.system, pb.units);
        std::vector<std::string> names;
        for (double tc : checks) {
          const double pos = tc / dt;
          const auto n = static_cast<std::size_t>(std::llround(pos));
          if (std::abs(pos - double(n)) > 1e-6 || n >= tr.size())
            throw InvalidParameter("checkpoint t = " + std::to_string(tc) + " ps is not on the grid of dt = " +
                                   std::to_string(dt));
          for (std::size_t j = 0; j < pb.system.n_states(); ++j) {
            p.observables.push_back(tr.rho[n](j, j).real());
            names.push_back("P_" + pb.system.labels()[j] + "(" + std::to_string(tc) + ")");
          }
        }
        for (auto j : flux.lossy) {
          p.observables.push_back(flux.loss(j)(Eigen::Index(flux.size() - 1)));
          names.push_back("L_" + pb.system.labels()[j] + "(t_final)");
        }
        p.max_bond = tr.metadata.max_bond_reached;
        p.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (rep.names.empty()) rep.names = names;
        rep.points.push_back(std::move(p));
      }

  const auto n = rep.points.size();
  auto delta = [&](std::size_t a, std::size_t b) {
    double m = 0.0;
    for (std::size_t i = 0; i < rep.names.size(); ++i)
      m = std::max(m, std::abs(rep.points[a].observables[i] - rep.points[b].observables[i]));
    return m;
  };
  rep.deltas.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) rep.deltas[a][b] = delta(a, b);

  // refinement order: smaller dt, then longer memory, then smaller cutoff
  auto finer = [&](std::size_t a, std::size_t b) {
    const auto &p = rep.points[a], &q = rep.points[b];
    if (p.dt != q.dt) return p.dt < q.dt;
    if (p.memory != q.memory) return p.memory > q.memory;
    return p.cutoff < q.cutoff;
  };
  for (std::size_t a = 1; a < n; ++a)
    if (finer(a, rep.reference)) rep.reference = a;
  for (std::size_t a = 0; a < n; ++a) rep.deviation.push_back(rep.deltas[a][rep.reference]);
  if (n == 1) return rep;
  for (std::size_t a = 0; a < n; ++a) {
    if (a == rep.reference || rep.deviation[a] > target) continue;
    if (!rep.recommended || finer(*rep.recommended, a)) rep.recommended = a;
  }
  return rep;
}

inline nlohmann::json to_json(const ConvergenceReport& r) {
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const auto& p = r.points[i];
    pts.push_back({{"dt", p.dt},
                   {"memory", p.memory},
                   {"svd_cutoff", p.cutoff},
                   {"max_bond", p.max_bond},
                   {"runtime_s", p.runtime_s},
                   {"observables", p.observables},
                   {"deviation_from_reference", r.deviation[i]}});
  }
  nlohmann::json j = {{"observables", r.names}, {"points", pts},      {"pairwise_max_delta", r.deltas},
                      {"reference", r.reference}, {"target", r.target}};
  j["recommended"] = r.recommended ? nlohmann::json(*r.recommended) : nlohmann::json();
  return j;
}

}  // namespace nhflux
