// nhflux command line: simulate, sweep, compare-engines, convergence, fit, presets.
#include <nhflux/nhflux.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <algorithm>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace nhflux;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kGate = 3 };

fs::path preset_dir() {
  if (const char* e = std::getenv("NHFLUX_PRESETS")) return e;
#ifdef NHFLUX_PRESET_DIR
  return NHFLUX_PRESET_DIR;
#else
  return "presets";
#endif
}

// a config argument is a file path or the name of a shipped preset
std::string resolve_config(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  const auto p = preset_dir() / (arg + ".json");
  if (fs::exists(p)) return p.string();
  throw ConfigError("", "no config file or preset named '" + arg + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  if (!fs::is_directory(preset_dir())) return out;
  for (const auto& e : fs::directory_iterator(preset_dir()))
    if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

RunOptions run_options(std::size_t threads, bool quiet) {
  RunOptions o;
  o.threads = threads;
  o.warn = [](const std::string& w) { std::cerr << "warning: " << w << '\n'; };
  if (!quiet) o.progress = [](const std::string& m) { std::cerr << m << '\n'; };
  return o;
}

void print_fits(const SimulationResult& r) {
  for (const auto& t : r.traps) {
    std::cout << "  " << t.label << ": ";
    if (t.fit)
      std::cout << "L_inf = " << t.fit->L_inf << ", tau = " << t.fit->tau << " ps, r2 = " << t.fit->r_squared
                << ", share = " << t.share;
    else
      std::cout << "fit failed (" << t.error << ")";
    if (!t.gate.passed) std::cout << "  [gate: " << t.gate.message << "]";
    std::cout << '\n';
  }
  if (r.total_fit)
    std::cout << "  total: L_inf = " << r.total_fit->L_inf << ", tau = " << r.total_fit->tau << " ps\n";
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) v.push_back(std::stod(tok));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-Hermitian state-to-state flux analysis of open exciton and polariton dynamics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config, out_dir = "nhflux_out";
  std::vector<std::string> sets;
  std::size_t threads = 0;
  bool strict = false, quiet = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config, "config file or preset name")->required();
    sub->add_option("--set", sets, "override one key, e.g. --set propagation.dt=0.0025 (repeatable)");
    sub->add_option("--threads", threads, "worker threads (default NHFLUX_THREADS or all cores)");
    sub->add_flag("--quiet", quiet, "no progress messages");
  };

  auto* sim = app.add_subcommand("simulate", "run one experiment and write its artifact directory");
  add_common(sim);
  sim->add_option("-o,--out", out_dir, "artifact directory");
  sim->add_flag("--strict", strict, "exit 3 when a fit fails its quality gate");

  auto* sweep = app.add_subcommand("sweep", "run every point of the config's sweep block");
  add_common(sweep);
  sweep->add_option("-o,--out", out_dir, "output directory");
  sweep->add_flag("--strict", strict, "exit 3 when any point fails or fails a quality gate");

  std::optional<std::size_t> cmp_steps;
  auto* cmp = app.add_subcommand("compare-engines", "TEMPO against the exact path sum on a short run");
  add_common(cmp);
  cmp->add_option("--steps", cmp_steps, "steps to compare (default: as many as the path-sum budget allows)");

  std::string dts, Ks, cuts;
  double target = 0.01;
  auto* conv = app.add_subcommand("convergence", "scan dt, memory and cutoff, report observable deltas");
  add_common(conv);
  conv->add_option("--dt", dts, "comma separated time steps, ps")->required();
  conv->add_option("--memory", Ks, "comma separated memory lengths in steps, 0 = automatic")->default_str("0");
  conv->add_option("--cutoff", cuts, "comma separated SVD cutoffs")->required();
  conv->add_option("--target", target, "target deviation from the most refined point");

  std::string table, column;
  double t_min = 0.0, threshold = 0.995;
  std::optional<double> t_max;
  auto* fit = app.add_subcommand("fit", "fit L(t) = L_inf (1 - exp(-t/tau)) to loss columns of a flux table");
  fit->add_option("table", table, "flux table written by simulate")->required()->check(CLI::ExistingFile);
  fit->add_option("--column", column, "fit only this column (default: every L_* column)");
  fit->add_option("--t-min", t_min, "fit window start, ps");
  fit->add_option("--t-max", t_max, "fit window end, ps");
  fit->add_option("--threshold", threshold, "r^2 quality threshold");
  fit->add_flag("--strict", strict, "exit 3 when a fit fails its quality gate");

  std::string preset;
  auto* presets = app.add_subcommand("presets", "list or show the shipped presets");
  presets->require_subcommand(1);
  auto* plist = presets->add_subcommand("list", "list preset names");
  auto* pshow = presets->add_subcommand("show", "print a preset");
  pshow->add_option("name", preset)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*plist) {
      for (const auto& n : preset_names()) {
        const auto j = read_json_file((preset_dir() / (n + ".json")).string());
        std::cout << n << "\t" << j.value("description", "") << '\n';
      }
      return kOk;
    }
    if (*pshow) {
      std::cout << dump_json(read_json_file(resolve_config(preset)));
      return kOk;
    }
    if (*fit) {
      const auto t = read_table(table);
      std::vector<std::string> cols;
      if (!column.empty()) {
        cols.push_back(column);
      } else {
        for (const auto& n : t.names)
          if (n.rfind("L_", 0) == 0) cols.push_back(n);
        if (cols.empty()) cols.push_back("L");
      }
      FitWindow w;
      w.t_min = t_min;
      if (t_max) w.t_max = *t_max;
      nlohmann::json out = nlohmann::json::object();
      bool gates = true;
      for (const auto& c : cols) {
        const auto r = fit_exponential(t.column("t"), t.column(c), w);
        const auto g = fit_quality_gate(r, threshold);
        gates = gates && g.passed;
        auto e = to_json(r);
        e["gate"] = {{"passed", g.passed}, {"message", g.message}};
        out[c] = e;
      }
      std::cout << dump_json(out);
      return strict && !gates ? kGate : kOk;
    }

    const auto cfg = load_config(resolve_config(config), sets);
    const auto opt = run_options(threads, quiet);

    if (*sim) {
      const auto r = run_simulate(cfg, out_dir, opt);
      std::cout << cfg.name << ": " << r.trajectory.size() - 1 << " steps of " << r.problem.dt << " ps, memory "
                << r.memory << " steps, max bond " << r.trajectory.metadata.max_bond_reached << ", "
                << r.runtime_s << " s\n";
      print_fits(r);
      std::cout << "  loss partition deviation " << r.partition_deviation << "\n  artifacts in " << out_dir << '\n';
      return strict && !all_gates_pass(r) ? kGate : kOk;
    }
    if (*sweep) {
      const auto pts = run_sweep(cfg, out_dir, opt, true);
      bool ok = true;
      for (const auto& p : pts) {
        std::cout << "point " << p.index << ":";
        for (const auto& v : p.values) std::cout << ' ' << v.dump();
        if (!p.ok) {
          ok = false;
          std::cout << "  failed: " << p.error << '\n';
          continue;
        }
        std::cout << '\n';
        print_fits(*p.result);
        ok = ok && all_gates_pass(*p.result);
      }
      std::cout << "summary in " << (fs::path(out_dir) / "sweep_summary.tsv").string() << '\n';
      return strict && !ok ? kGate : kOk;
    }
    if (*cmp) {
      const auto c = run_compare_engines(cfg, cmp_steps, opt);
      std::cout << "steps " << c.steps << ", memory " << c.memory << ", max |rho_tempo - rho_pathsum| = "
                << c.max_abs_deviation << '\n';
      return kOk;
    }
    if (*conv) {
      std::vector<std::size_t> K;
      for (double k : parse_doubles(Ks)) K.push_back(static_cast<std::size_t>(k));
      const auto rep = convergence_scan(cfg, parse_doubles(dts), K, parse_doubles(cuts), target, opt);
      std::cout << dump_json(to_json(rep));
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidParameter& e) {
    std::cerr << "invalid parameter: " << e.what() << '\n';
    return kUsage;
  } catch (const BudgetExceeded& e) {
    std::cerr << "budget exceeded: " << e.what() << '\n';
    return kNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}
