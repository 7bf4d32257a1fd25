#pragma once

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bath.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "flux.hpp"
#include "io.hpp"
#include "pathsum.hpp"
#include "propagators.hpp"
#include "tempo.hpp"

namespace nhflux {

struct RunOptions {
  std::size_t threads = 0;  // 0: NHFLUX_THREADS or hardware concurrency
  WarningSink warn;         // TEMPO warning channel
  std::function<void(const std::string&)> progress;
};

// memory length actually used for a problem
inline std::size_t resolve_memory(const Problem& pb) {
  if (pb.baths.empty()) return 1;
  std::size_t K = pb.memory ? *pb.memory
                            : select_memory_length(pb.baths.front().spectral_density, pb.temperature, pb.dt,
                                                   pb.memory_ratio, 4000, pb.units);
  return std::max<std::size_t>(1, std::min(K, std::max<std::size_t>(1, pb.n_steps)));
}

// one table per bath; identical spectral densities share one quadrature
inline std::vector<EtaTable> eta_tables(const Problem& pb, std::size_t K) {
  std::vector<EtaTable> out;
  std::vector<const SpectralDensity*> seen;
  for (const auto& b : pb.baths) {
    std::size_t hit = seen.size();
    for (std::size_t i = 0; i < seen.size(); ++i) {
      const auto& s = *seen[i];
      const auto& t = b.spectral_density;
      if (s.form() == t.form() && s.xi() == t.xi() && s.omega_c() == t.omega_c() && s.table_omega() == t.table_omega() &&
          s.table_J() == t.table_J())
        hit = i;
    }
    if (hit < seen.size()) {
      out.push_back(out[hit]);
    } else {
      out.push_back(build_eta_table(b.spectral_density, pb.temperature, pb.dt, K, pb.units));
    }
    seen.push_back(&b.spectral_density);
  }
  return out;
}

inline Trajectory run_engine(const Problem& pb, const std::string& engine, std::size_t n_steps,
                             const std::vector<EtaTable>& eta, const RunOptions& opt = {},
                             TempoDiagnostics* diag = nullptr) {
  if (engine == "bare" || pb.baths.empty()) {
    auto tr = propagate_bare(pb.system, pb.rho0, pb.dt, n_steps, pb.units);
    if (engine != "bare") tr.metadata.engine = engine + " (no bath: bare)";
    return tr;
  }
  if (engine == "pathsum") {
    PathsumOptions po;
    po.budget = pb.pathsum_budget;
    po.threads = opt.threads;
    return propagate_pathsum(pb.system, pb.baths, pb.rho0, pb.dt, n_steps, eta, po, pb.units);
  }
  if (engine == "tempo")
    return propagate_tempo(pb.system, pb.baths, pb.rho0, pb.dt, n_steps, eta, pb.policy, pb.units, opt.warn, diag);
  throw InvalidParameter("unknown engine '" + engine + "'");
}

struct TrapSummary {
  std::size_t state = 0;
  std::string label;
  std::optional<FitResult> fit;
  double share = 0.0;
  GateResult gate;
  std::string error;
};

struct SimulationResult {
  Problem problem;
  std::size_t memory = 0;
  Trajectory trajectory;
  FluxRecord flux;
  std::vector<double> total_loss;
  double partition_deviation = 0.0;
  std::vector<TrapSummary> traps;
  std::optional<FitResult> total_fit;        // L_inf (1 - exp(-t/tau))
  std::optional<FitResult> total_fit_unit;   // 1 - exp(-t/tau)
  std::string total_fit_error;
  TempoDiagnostics diagnostics;
  double runtime_s = 0.0;
};

inline FitWindow fit_window(const ExperimentConfig& c) {
  FitWindow w;
  w.t_min = c.analysis.fit_t_min;
  if (c.analysis.fit_t_max) w.t_max = *c.analysis.fit_t_max;
  return w;
}

inline SimulationResult simulate(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  SimulationResult r;
  r.problem = build_problem(cfg);
  const auto& pb = r.problem;
  r.memory = resolve_memory(pb);
  std::vector<EtaTable> eta;
  if (pb.engine != "bare" && !pb.baths.empty()) eta = eta_tables(pb, r.memory);
  r.trajectory = run_engine(pb, pb.engine, pb.n_steps, eta, opt, &r.diagnostics);
  r.trajectory.metadata.memory_steps = pb.baths.empty() ? 0 : r.memory;
  r.flux = pairwise_transfer(r.trajectory, pb.system, pb.units);
  r.total_loss = total_loss(r.trajectory);
  r.partition_deviation = loss_partition_check(r.flux, r.total_loss);

  const auto win = fit_window(cfg);
  const double thr = cfg.analysis.quality_threshold;
  if (!r.flux.lossy.empty() && r.trajectory.size() >= 8) {
    double sum = 0.0;
    for (auto j : r.flux.lossy) {
      TrapSummary ts;
      ts.state = j;
      ts.label = pb.system.labels()[j];
      try {
        ts.fit = fit_exponential(r.flux.times, r.flux.loss(j), win);
        ts.gate = fit_quality_gate(*ts.fit, thr);
        sum += ts.fit->L_inf;
      } catch (const std::exception& e) {
        ts.error = e.what();
        ts.gate = {false, std::string("fit failed: ") + e.what()};
      }
      r.traps.push_back(ts);
    }
    for (auto& ts : r.traps)
      if (ts.fit && sum != 0) ts.share = ts.fit->L_inf / sum;
    try {
      r.total_fit = fit_exponential(r.flux.times, r.total_loss, win);
      FitOptions unit;
      unit.fixed_amplitude = 1.0;
      r.total_fit_unit = fit_exponential(r.flux.times, r.total_loss, win, unit);
    } catch (const std::exception& e) {
      r.total_fit_error = e.what();
    }
  }
  r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline bool all_gates_pass(const SimulationResult& r) {
  for (const auto& t : r.traps)
    if (!t.gate.passed) return false;
  return true;
}

inline nlohmann::json fit_summary_json(const SimulationResult& r, const ExperimentConfig& cfg) {
  using nlohmann::json;
  json j;
  j["window"] = {{"t_min", cfg.analysis.fit_t_min}};
  if (cfg.analysis.fit_t_max) j["window"]["t_max"] = *cfg.analysis.fit_t_max;
  j["quality_threshold"] = cfg.analysis.quality_threshold;
  json traps = json::object();
  for (const auto& t : r.traps) {
    json e;
    if (t.fit) {
      e = to_json(*t.fit);
      e["share"] = t.share;
    } else {
      e["error"] = t.error;
    }
    e["gate"] = {{"passed", t.gate.passed}, {"message", t.gate.message}};
    traps[t.label] = e;
  }
  j["traps"] = traps;
  if (r.total_fit) {
    j["total"] = to_json(*r.total_fit);
    const auto g = fit_quality_gate(*r.total_fit, cfg.analysis.quality_threshold);
    j["total"]["gate"] = {{"passed", g.passed}, {"message", g.message}};
  }
  if (r.total_fit_unit) j["total_unit_amplitude"] = to_json(*r.total_fit_unit);
  if (!r.total_fit_error.empty()) j["total_error"] = r.total_fit_error;
  return j;
}

inline nlohmann::json metadata_json(const SimulationResult& r) {
  const auto& m = r.trajectory.metadata;
  nlohmann::json j = {{"version", kVersion},
                      {"engine", m.engine},
                      {"dt_ps", m.dt},
                      {"n_steps", r.problem.n_steps},
                      {"memory_steps", r.memory},
                      {"memory_ps", r.problem.baths.empty() ? 0.0 : r.memory * m.dt},
                      {"svd_cutoff", r.problem.policy.svd_relative_cutoff},
                      {"max_bond", r.problem.policy.max_bond_dimension},
                      {"max_bond_reached", m.max_bond_reached},
                      {"truncation_error_estimate", m.truncation_error},
                      {"loss_partition_deviation", r.partition_deviation},
                      {"final_trace", r.trajectory.rho.back().trace().real()},
                      {"units", {{"hbar_cm-1_ps", r.problem.units.hbar}, {"kB_cm-1_per_K", r.problem.units.kB}}},
                      {"warnings", r.diagnostics.warnings}};
  j["runtime_s"] = r.runtime_s;
  return j;
}

// Deterministic artifact directory. metadata.json is the only file with a wall-clock field.
inline void write_artifacts(const SimulationResult& r, const ExperimentConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "trajectory.tsv");
    write_trajectory_table(os, r.trajectory, r.problem.system);
  }
  {
    std::ofstream os(fs::path(dir) / "flux.tsv");
    write_flux_table(os, r.flux, r.problem.system);
  }
  write_text((fs::path(dir) / "flux.schema.json").string(), dump_json(flux_schema(r.flux, r.problem.system)));
  write_text((fs::path(dir) / "fit.json").string(), dump_json(fit_summary_json(r, cfg)));
  write_text((fs::path(dir) / "metadata.json").string(), dump_json(metadata_json(r)));
  write_text((fs::path(dir) / "config.resolved.json").string(), dump_json(to_json(cfg)));
}

inline SimulationResult run_simulate(const ExperimentConfig& cfg, const std::string& out_dir, const RunOptions& opt = {}) {
  auto r = simulate(cfg, opt);
  write_artifacts(r, cfg, out_dir);
  return r;
}

struct SweepPoint {
  std::size_t index = 0;
  std::vector<nlohmann::json> values;
  bool ok = false;
  std::string error;
  std::optional<SimulationResult> result;
};

// cartesian product of the sweep axes, first axis slowest
inline std::vector<std::vector<nlohmann::json>> sweep_grid(const ExperimentConfig& cfg) {
  std::vector<std::vector<nlohmann::json>> grid{{}};
  for (const auto& ax : cfg.sweep) {
    std::vector<std::vector<nlohmann::json>> next;
    for (const auto& g : grid)
      for (const auto& v : ax.values) {
        auto h = g;
        h.push_back(v);
        next.push_back(std::move(h));
      }
    grid = std::move(next);
  }
  return grid;
}

inline ExperimentConfig sweep_point_config(const ExperimentConfig& cfg, const std::vector<nlohmann::json>& values) {
  auto doc = to_json(cfg);
  doc.erase("sweep");
  for (std::size_t a = 0; a < cfg.sweep.size(); ++a) set_path(doc, cfg.sweep[a].parameter, values[a]);
  auto pc = parse_config(doc);
  return pc;
}

// Runs every point independently (pool of opt.threads workers); failures are recorded.
// Writes point_NNN/ directories and sweep_summary.tsv when out_dir is non-empty.
inline std::vector<SweepPoint> run_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
                                         const RunOptions& opt = {}, bool keep_results = true) {
  namespace fs = std::filesystem;
  if (cfg.sweep.empty()) throw ConfigError("sweep", "config has no sweep block");
  const auto grid = sweep_grid(cfg);
  // every axis path must resolve to a valid config before anything runs
  sweep_point_config(cfg, grid.front());
  std::vector<SweepPoint> pts(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    pts[i].index = i;
    pts[i].values = grid[i];
  }
  RunOptions inner = opt;
  inner.threads = 1;
  auto work = [&](std::size_t i) {
    auto& p = pts[i];
    try {
      const auto pc = sweep_point_config(cfg, p.values);
      auto r = simulate(pc, inner);
      if (!out_dir.empty()) {
        std::ostringstream name;
        name << "point_" << std::setw(3) << std::setfill('0') << i;
        write_artifacts(r, pc, (fs::path(out_dir) / name.str()).string());
      }
      p.ok = true;
      if (keep_results) p.result = std::move(r);
    } catch (const std::exception& e) {
      p.error = e.what();
    }
    if (opt.progress) opt.progress("sweep point " + std::to_string(i) + (p.ok ? " done" : " failed: " + p.error));
  };
  const auto nt = std::min(detail::resolve_threads(opt.threads), pts.size());
  if (nt <= 1) {
    for (std::size_t i = 0; i < pts.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nt; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < pts.size();) work(i);
      });
    for (auto& th : pool) th.join();
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / "sweep_summary.tsv");
    os << std::setprecision(17);
    os << "# nhflux sweep summary; one row per point, per-trap columns L_inf [1], tau [ps], r2 [1], share [1]\n";
    std::vector<std::string> trap_labels;
    for (const auto& p : pts)
      if (p.ok && p.result) {
        for (const auto& t : p.result->traps) trap_labels.push_back(t.label);
        break;
      }
    os << "point";
    for (const auto& ax : cfg.sweep) os << '\t' << ax.parameter;
    os << "\tstatus";
    for (const auto& l : trap_labels) os << "\tL_inf_" << l << "\ttau_" << l << "\tr2_" << l << "\tshare_" << l;
    os << "\ttau_total\tpartition_deviation\n";
    for (const auto& p : pts) {
      os << p.index;
      for (const auto& v : p.values) os << '\t' << v.dump();
      if (!p.ok || !p.result) {
        std::string e = p.error;
        for (auto& ch : e)
          if (ch == '\t' || ch == '\n') ch = ' ';
        os << "\terror: " << e << '\n';
        continue;
      }
      os << "\tok";
      for (const auto& l : trap_labels) {
        const TrapSummary* ts = nullptr;
        for (const auto& t : p.result->traps)
          if (t.label == l) ts = &t;
        if (ts && ts->fit)
          os << '\t' << ts->fit->L_inf << '\t' << ts->fit->tau << '\t' << ts->fit->r_squared << '\t' << ts->share;
        else
          os << "\tnan\tnan\tnan\tnan";
      }
      os << '\t' << (p.result->total_fit ? p.result->total_fit->tau : std::nan("")) << '\t'
         << p.result->partition_deviation << '\n';
    }
  }
  return pts;
}

struct EngineComparison {
  std::size_t steps = 0;
  std::size_t memory = 0;
  double max_abs_deviation = 0.0;
  std::vector<double> per_step;
  Trajectory tempo, pathsum;
};

// Largest step count whose path sum fits the budget (capped by the problem length).
inline std::size_t max_pathsum_steps(const Problem& pb) {
  std::size_t n = 0;
  while (n < pb.n_steps && pathsum_path_count(pb.system.n_states(), n + 1) <= pb.pathsum_budget) ++n;
  return n;
}

inline EngineComparison run_compare_engines(const ExperimentConfig& cfg, std::optional<std::size_t> steps,
                                            const RunOptions& opt = {}) {
  auto pb = build_problem(cfg);
  EngineComparison c;
  c.steps = steps ? *steps : max_pathsum_steps(pb);
  if (c.steps < 1) throw BudgetExceeded("path-sum budget does not allow a single step");
  pb.n_steps = c.steps;
  c.memory = resolve_memory(pb);
  std::vector<EtaTable> eta;
  if (!pb.baths.empty()) eta = eta_tables(pb, c.memory);
  c.pathsum = run_engine(pb, "pathsum", c.steps, eta, opt);
  c.tempo = run_engine(pb, "tempo", c.steps, eta, opt);
  for (std::size_t n = 0; n <= c.steps; ++n) {
    const double d = (c.tempo.rho[n] - c.pathsum.rho[n]).cwiseAbs().maxCoeff();
    c.per_step.push_back(d);
    c.max_abs_deviation = std::max(c.max_abs_deviation, d);
  }
  return c;
}

}  // namespace nhflux
