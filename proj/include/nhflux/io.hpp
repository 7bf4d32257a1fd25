#pragma once

#include <json.hpp>

#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "fit.hpp"
#include "flux.hpp"
#include "model.hpp"
#include "propagators.hpp"

namespace nhflux {

inline constexpr const char* kVersion = "1.0.0";

struct Column {
  std::string name, unit, description;
};

// tab separated, '#' preamble, header row, 17 significant digits
class TableWriter {
 public:
  explicit TableWriter(std::ostream& os) : os_(os) { os_ << std::setprecision(17); }

  void comment(const std::string& line) { os_ << "# " << line << '\n'; }

  void header(const std::vector<Column>& cols) {
    for (const auto& c : cols) comment(c.name + " [" + c.unit + "] " + c.description);
    for (std::size_t i = 0; i < cols.size(); ++i) os_ << (i ? "\t" : "") << cols[i].name;
    os_ << '\n';
  }

  void row(const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os_ << (i ? "\t" : "") << v[i];
    os_ << '\n';
  }

 private:
  std::ostream& os_;
};

inline std::string pair_label(const SystemHamiltonian& sys, std::size_t j, std::size_t k) {
  return "P_" + sys.labels()[j] + "_from_" + sys.labels()[k];
}

inline void write_trajectory_table(std::ostream& os, const Trajectory& tr, const SystemHamiltonian& sys) {
  TableWriter w(os);
  w.comment("nhflux trajectory, engine " + tr.metadata.engine);
  w.comment("reduced density matrix in the site basis; units: time ps, populations dimensionless");
  std::vector<Column> cols{{"t", "ps", "time"}, {"trace", "1", "Tr rho(t)"}, {"L", "1", "1 - Tr rho(t)"}};
  const auto d = sys.n_states();
  for (std::size_t j = 0; j < d; ++j) cols.push_back({"pop_" + sys.labels()[j], "1", "rho_jj"});
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = j + 1; k < d; ++k) {
      const auto tag = sys.labels()[j] + "_" + sys.labels()[k];
      cols.push_back({"re_" + tag, "1", "Re rho_jk"});
      cols.push_back({"im_" + tag, "1", "Im rho_jk"});
    }
  w.header(cols);
  for (std::size_t n = 0; n < tr.size(); ++n) {
    const auto& r = tr.rho[n];
    const double t = r.trace().real();
    std::vector<double> v{tr.times[n], t, 1.0 - t};
    for (std::size_t j = 0; j < d; ++j) v.push_back(r(j, j).real());
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = j + 1; k < d; ++k) {
        v.push_back(r(j, k).real());
        v.push_back(r(j, k).imag());
      }
    w.row(v);
  }
}

inline std::vector<Column> flux_columns(const FluxRecord& f, const SystemHamiltonian& sys) {
  std::vector<Column> cols{{"t", "ps", "time"}, {"L", "1", "total loss 1 - Tr rho(t)"}};
  for (auto j : f.lossy) cols.push_back({"L_" + sys.labels()[j], "1", "loss through this state, -P_{j<-j}(t)"});
  for (std::size_t j = 0; j < f.n_states; ++j)
    for (std::size_t k = 0; k < f.n_states; ++k)
      cols.push_back({pair_label(sys, j, k), "1",
                      j == k ? "cumulative self transfer P_{j<-j}(t) (<= 0, minus the loss)"
                             : "cumulative population transferred into " + sys.labels()[j] + " from " +
                                   sys.labels()[k]});
  return cols;
}

inline void write_flux_table(std::ostream& os, const FluxRecord& f, const SystemHamiltonian& sys) {
  TableWriter w(os);
  w.comment("nhflux flux table; columns documented in flux.schema.json");
  w.header(flux_columns(f, sys));
  for (std::size_t n = 0; n < f.size(); ++n) {
    std::vector<double> v{f.times[n], f.total[n]};
    for (auto j : f.lossy) v.push_back(-f.P(j, j, n));
    for (std::size_t j = 0; j < f.n_states; ++j)
      for (std::size_t k = 0; k < f.n_states; ++k) v.push_back(f.P(j, k, n));
    w.row(v);
  }
}

inline nlohmann::json flux_schema(const FluxRecord& f, const SystemHamiltonian& sys) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : flux_columns(f, sys)) cols.push_back({{"name", c.name}, {"unit", c.unit}, {"description", c.description}});
  return {{"format", "tab-separated, '#' comment preamble, one header row"},
          {"precision", "17 significant digits"},
          {"states", sys.labels()},
          {"columns", cols}};
}

// generic numeric table reader: header row + rows, '#' lines skipped
struct NumericTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  const std::vector<double>& column(const std::string& n) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == n) return columns[i];
    throw InvalidParameter("table has no column '" + n + "'");
  }
};

inline NumericTable read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidParameter("cannot open table " + path);
  NumericTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    if (t.names.empty()) {
      t.names = cells;
      t.columns.resize(cells.size());
      continue;
    }
    if (cells.size() != t.names.size())
      throw InvalidParameter(path + ":" + std::to_string(lineno) + ": wrong number of columns");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        t.columns[i].push_back(std::stod(cells[i]));
      } catch (const std::exception&) {
        throw InvalidParameter(path + ":" + std::to_string(lineno) + ": not a number: " + cells[i]);
      }
    }
  }
  if (t.names.empty()) throw InvalidParameter("table " + path + " has no header");
  return t;
}

inline nlohmann::json to_json(const FitResult& r) {
  return {{"L_inf", r.L_inf},         {"tau_ps", r.tau},         {"sse", r.sse},
          {"r_squared", r.r_squared}, {"t_min", r.t_min},        {"t_max", r.t_max},
          {"n_points", r.n_points},   {"converged", r.converged}, {"at_grid_edge", r.at_grid_edge}};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw InvalidParameter("cannot write " + path);
  os << text;
}

inline std::string dump_json(const nlohmann::json& j) {
  // full precision for doubles
  return j.dump(2) + "\n";
}

}  // namespace nhflux
