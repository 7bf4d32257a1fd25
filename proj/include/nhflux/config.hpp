#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bath.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "tempo.hpp"

namespace nhflux {

using json = nlohmann::json;

// Sites are 1-based in configs and output labels, 0-based in the C++ API.
struct LossSpec {
  std::size_t site = 1;
  double lifetime = kInf;
  bool operator==(const LossSpec&) const = default;
};

struct CavitySpec {
  double energy = 0.0;                  // hbar omega_c, cm^-1
  bool vertical = false;                // energy = site energy + bath reorganization energy
  std::optional<double> lifetime;       // T_c, ps
  std::optional<double> loss_ratio;     // gamma_c / gamma_ref with gamma = 1/T
  std::optional<std::size_t> loss_ratio_site;  // reference lossy site, default: the only lossy one
  std::optional<double> coupling;       // Omega, cm^-1
  std::optional<double> coupling_ratio; // Omega / |h|
  bool operator==(const CavitySpec&) const = default;
};

struct SystemSpec {
  std::size_t sites = 3;
  double site_energy = 0.0;
  double coupling = -181.5;
  std::string lifetime_convention = "pi-hbar-over-T";
  std::vector<LossSpec> losses;
  std::optional<CavitySpec> cavity;
  bool operator==(const SystemSpec&) const = default;
};

struct BathSpec {
  std::string form = "ohmic-exponential";
  std::optional<double> xi;
  std::optional<double> reorganization_energy;  // alternative to xi: xi = lambda / (2 omega_c)
  double omega_c = 900.0;
  std::string table;  // tabulated form: path to a two-column file
  double temperature = 300.0;
  std::vector<std::size_t> sites;  // empty: every monomer
  double occupied_value = 1.0;
  double other_value = -1.0;
  bool operator==(const BathSpec&) const = default;
};

struct PropagationSpec {
  std::string engine = "tempo";
  double dt = 0.005;
  double t_final = 1.0;
  std::optional<std::size_t> memory;  // nullopt: automatic
  double memory_ratio = 1e-4;
  double svd_cutoff = 1e-6;
  std::size_t max_bond = 256;
  double coherence_weight = 0.1;
  double pathsum_budget = 1e8;
  bool operator==(const PropagationSpec&) const = default;
};

struct InitialSpec {
  std::size_t site = 1;
  bool operator==(const InitialSpec&) const = default;
};

struct AnalysisSpec {
  double fit_t_min = 0.0;
  std::optional<double> fit_t_max;
  double quality_threshold = 0.995;
  bool operator==(const AnalysisSpec&) const = default;
};

struct SweepAxis {
  std::string parameter;
  std::vector<json> values;
  bool operator==(const SweepAxis&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string description;
  SystemSpec system;
  std::optional<BathSpec> bath;
  PropagationSpec propagation;
  InitialSpec initial;
  AnalysisSpec analysis;
  std::vector<SweepAxis> sweep;
  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::initializer_list<const char*> allowed) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_, "expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!ok.count(it.key())) throw ConfigError(sub(it.key()), "unknown key");
  }

  std::string sub(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const char* k) const { return j_.contains(k) && !j_.at(k).is_null(); }
  const json& at(const char* k) const { return j_.at(k); }

  double number(const char* k, double def) const { return has(k) ? as_number(k) : def; }
  std::optional<double> opt_number(const char* k) const {
    if (!has(k)) return std::nullopt;
    return as_number(k);
  }
  std::size_t count(const char* k, std::size_t def) const { return has(k) ? as_count(at(k), sub(k)) : def; }
  std::optional<std::size_t> opt_count(const char* k) const {
    if (!has(k)) return std::nullopt;
    return as_count(at(k), sub(k));
  }
  std::string string(const char* k, const std::string& def) const {
    if (!has(k)) return def;
    if (!at(k).is_string()) throw ConfigError(sub(k), "expected a string");
    return at(k).get<std::string>();
  }

  static std::size_t as_count(const json& v, const std::string& p) {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d >= 0 && d == std::floor(d) && d < 1e15) return static_cast<std::size_t>(d);
    }
    throw ConfigError(p, "expected a non-negative integer");
  }

 private:
  double as_number(const char* k) const {
    const auto& v = at(k);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {  // allow "inf" for lifetimes
      const auto s = v.get<std::string>();
      if (s == "inf" || s == "infinity") return kInf;
    }
    throw ConfigError(sub(k), "expected a number");
  }

  const json& j_;
  std::string path_;
};

inline void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw ConfigError(path, msg);
}

inline json number_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::ObjectReader;
  using detail::require;
  ExperimentConfig c;
  ObjectReader root(j, "", {"name", "description", "system", "bath", "propagation", "initial", "analysis", "sweep"});
  c.name = root.string("name", c.name);
  c.description = root.string("description", "");

  if (root.has("system")) {
    ObjectReader r(root.at("system"), "system",
                   {"sites", "site_energy", "coupling", "lifetime_convention", "losses", "cavity"});
    auto& s = c.system;
    s.sites = r.count("sites", s.sites);
    require(s.sites >= 1, "system.sites", "need at least one site");
    s.site_energy = r.number("site_energy", s.site_energy);
    s.coupling = r.number("coupling", s.coupling);
    s.lifetime_convention = r.string("lifetime_convention", s.lifetime_convention);
    try {
      lifetime_convention_from_string(s.lifetime_convention);
    } catch (const InvalidParameter& e) {
      throw ConfigError("system.lifetime_convention", e.what());
    }
    if (r.has("losses")) {
      const auto& arr = r.at("losses");
      require(arr.is_array(), "system.losses", "expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto p = "system.losses[" + std::to_string(i) + "]";
        ObjectReader lr(arr[i], p, {"site", "lifetime"});
        require(lr.has("site") && lr.has("lifetime"), p, "needs 'site' and 'lifetime'");
        LossSpec l;
        l.site = lr.count("site", 1);
        l.lifetime = lr.number("lifetime", kInf);
        require(l.site >= 1 && l.site <= s.sites, p + ".site", "out of range");
        require(l.lifetime > 0, p + ".lifetime", "must be positive");
        s.losses.push_back(l);
      }
    }
    if (r.has("cavity")) {
      ObjectReader cr(r.at("cavity"), "system.cavity",
                      {"energy", "lifetime", "loss_ratio", "loss_ratio_site", "coupling", "coupling_ratio"});
      CavitySpec cv;
      if (cr.has("energy") && cr.at("energy").is_string()) {
        require(cr.at("energy").get<std::string>() == "vertical", "system.cavity.energy",
                "expected a number or \"vertical\"");
        cv.vertical = true;
      } else {
        cv.energy = cr.number("energy", 0.0);
      }
      cv.lifetime = cr.opt_number("lifetime");
      cv.loss_ratio = cr.opt_number("loss_ratio");
      cv.loss_ratio_site = cr.opt_count("loss_ratio_site");
      cv.coupling = cr.opt_number("coupling");
      cv.coupling_ratio = cr.opt_number("coupling_ratio");
      require(cv.lifetime.has_value() != cv.loss_ratio.has_value(), "system.cavity",
              "give exactly one of 'lifetime' and 'loss_ratio'");
      require(cv.coupling.has_value() != cv.coupling_ratio.has_value(), "system.cavity",
              "give exactly one of 'coupling' and 'coupling_ratio'");
      if (cv.lifetime) require(*cv.lifetime > 0, "system.cavity.lifetime", "must be positive");
      if (cv.loss_ratio) require(*cv.loss_ratio > 0, "system.cavity.loss_ratio", "must be positive");
      if (cv.loss_ratio) {
        const auto finite_losses = std::count_if(s.losses.begin(), s.losses.end(),
                                                 [](const LossSpec& l) { return std::isfinite(l.lifetime); });
        require(cv.loss_ratio_site.has_value() || finite_losses == 1, "system.cavity.loss_ratio_site",
                "needed unless exactly one site is lossy");
        if (cv.loss_ratio_site) {
          auto it = std::find_if(s.losses.begin(), s.losses.end(),
                                 [&](const LossSpec& l) { return l.site == *cv.loss_ratio_site; });
          require(it != s.losses.end(), "system.cavity.loss_ratio_site", "not a lossy site");
        }
      }
      s.cavity = cv;
    }
  }

  if (root.has("bath")) {
    ObjectReader r(root.at("bath"), "bath",
                   {"form", "xi", "reorganization_energy", "omega_c", "table", "temperature", "sites",
                    "occupied_value", "other_value"});
    BathSpec b;
    b.form = r.string("form", b.form);
    require(b.form == "ohmic-exponential" || b.form == "tabulated", "bath.form",
            "must be 'ohmic-exponential' or 'tabulated'");
    b.xi = r.opt_number("xi");
    b.reorganization_energy = r.opt_number("reorganization_energy");
    b.omega_c = r.number("omega_c", b.omega_c);
    b.table = r.string("table", "");
    b.temperature = r.number("temperature", b.temperature);
    b.occupied_value = r.number("occupied_value", b.occupied_value);
    b.other_value = r.number("other_value", b.other_value);
    if (b.form == "ohmic-exponential") {
      require(b.xi.has_value() != b.reorganization_energy.has_value(), "bath",
              "give exactly one of 'xi' and 'reorganization_energy'");
      require(b.table.empty(), "bath.table", "only valid for the tabulated form");
      if (b.xi) require(*b.xi >= 0, "bath.xi", "must be >= 0");
      if (b.reorganization_energy) require(*b.reorganization_energy >= 0, "bath.reorganization_energy", "must be >= 0");
      require(b.omega_c > 0, "bath.omega_c", "must be positive");
    } else {
      require(!b.table.empty(), "bath.table", "required for the tabulated form");
      require(!b.xi && !b.reorganization_energy, "bath", "xi / reorganization_energy only apply to the Ohmic form");
    }
    require(b.temperature > 0, "bath.temperature", "must be positive");
    if (r.has("sites")) {
      const auto& v = r.at("sites");
      if (v.is_string()) {
        require(v.get<std::string>() == "all", "bath.sites", "expected \"all\" or a list of sites");
      } else {
        require(v.is_array(), "bath.sites", "expected \"all\" or a list of sites");
        for (std::size_t i = 0; i < v.size(); ++i) {
          const auto p = "bath.sites[" + std::to_string(i) + "]";
          const auto site = ObjectReader::as_count(v[i], p);
          require(site >= 1 && site <= c.system.sites, p, "out of range (the cavity never carries a bath)");
          b.sites.push_back(site);
        }
      }
    }
    c.bath = b;
  }

  if (root.has("propagation")) {
    ObjectReader r(root.at("propagation"), "propagation",
                   {"engine", "dt", "t_final", "memory", "memory_ratio", "svd_cutoff", "max_bond", "coherence_weight",
                    "pathsum_budget"});
    auto& p = c.propagation;
    p.engine = r.string("engine", p.engine);
    require(p.engine == "tempo" || p.engine == "pathsum" || p.engine == "bare", "propagation.engine",
            "must be tempo, pathsum or bare");
    p.dt = r.number("dt", p.dt);
    p.t_final = r.number("t_final", p.t_final);
    require(p.dt > 0 && std::isfinite(p.dt), "propagation.dt", "must be positive");
    require(p.t_final >= 0 && std::isfinite(p.t_final), "propagation.t_final", "must be >= 0");
    if (r.has("memory")) {
      const auto& m = r.at("memory");
      if (m.is_string()) {
        require(m.get<std::string>() == "auto", "propagation.memory", "expected \"auto\" or a positive integer");
      } else {
        p.memory = ObjectReader::as_count(m, "propagation.memory");
        require(*p.memory >= 1, "propagation.memory", "must be >= 1");
      }
    }
    p.memory_ratio = r.number("memory_ratio", p.memory_ratio);
    require(p.memory_ratio > 0 && p.memory_ratio < 1, "propagation.memory_ratio", "must lie in (0, 1)");
    p.svd_cutoff = r.number("svd_cutoff", p.svd_cutoff);
    require(p.svd_cutoff > 0 && p.svd_cutoff < 1, "propagation.svd_cutoff", "must lie in (0, 1)");
    p.max_bond = r.count("max_bond", p.max_bond);
    require(p.max_bond >= 1, "propagation.max_bond", "must be >= 1");
    p.coherence_weight = r.number("coherence_weight", p.coherence_weight);
    require(p.coherence_weight > 0 && p.coherence_weight <= 1, "propagation.coherence_weight", "must lie in (0, 1]");
    p.pathsum_budget = r.number("pathsum_budget", p.pathsum_budget);
    require(p.pathsum_budget > 0, "propagation.pathsum_budget", "must be positive");
  }

  if (root.has("initial")) {
    ObjectReader r(root.at("initial"), "initial", {"site"});
    c.initial.site = r.count("site", 1);
  }
  require(c.initial.site >= 1 && c.initial.site <= c.system.sites + (c.system.cavity ? 1 : 0), "initial.site",
          "out of range");

  if (root.has("analysis")) {
    ObjectReader r(root.at("analysis"), "analysis", {"fit_t_min", "fit_t_max", "quality_threshold"});
    auto& a = c.analysis;
    a.fit_t_min = r.number("fit_t_min", 0.0);
    a.fit_t_max = r.opt_number("fit_t_max");
    a.quality_threshold = r.number("quality_threshold", a.quality_threshold);
    require(a.fit_t_min >= 0, "analysis.fit_t_min", "must be >= 0");
    if (a.fit_t_max) require(*a.fit_t_max > a.fit_t_min, "analysis.fit_t_max", "must exceed fit_t_min");
    require(a.quality_threshold > 0 && a.quality_threshold <= 1, "analysis.quality_threshold", "must lie in (0, 1]");
  }

  if (root.has("sweep")) {
    json axes = root.at("sweep");
    if (axes.is_object()) axes = json::array({axes});
    require(axes.is_array(), "sweep", "expected an object or an array of objects");
    for (std::size_t i = 0; i < axes.size(); ++i) {
      const auto p = "sweep[" + std::to_string(i) + "]";
      ObjectReader r(axes[i], p, {"parameter", "values"});
      SweepAxis ax;
      ax.parameter = r.string("parameter", "");
      require(!ax.parameter.empty(), p + ".parameter", "required");
      require(r.has("values") && r.at("values").is_array() && !r.at("values").empty(), p + ".values",
              "expected a non-empty array");
      for (const auto& v : r.at("values")) ax.values.push_back(v);
      c.sweep.push_back(std::move(ax));
    }
  }
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  using detail::number_json;
  json j;
  j["name"] = c.name;
  if (!c.description.empty()) j["description"] = c.description;
  auto& s = j["system"];
  s["sites"] = c.system.sites;
  s["site_energy"] = c.system.site_energy;
  s["coupling"] = c.system.coupling;
  s["lifetime_convention"] = c.system.lifetime_convention;
  s["losses"] = json::array();
  for (const auto& l : c.system.losses) s["losses"].push_back({{"site", l.site}, {"lifetime", number_json(l.lifetime)}});
  if (c.system.cavity) {
    const auto& cv = *c.system.cavity;
    json cj;
    cj["energy"] = cv.vertical ? json("vertical") : json(cv.energy);
    if (cv.lifetime) cj["lifetime"] = number_json(*cv.lifetime);
    if (cv.loss_ratio) cj["loss_ratio"] = *cv.loss_ratio;
    if (cv.loss_ratio_site) cj["loss_ratio_site"] = *cv.loss_ratio_site;
    if (cv.coupling) cj["coupling"] = *cv.coupling;
    if (cv.coupling_ratio) cj["coupling_ratio"] = *cv.coupling_ratio;
    s["cavity"] = cj;
  }
  if (c.bath) {
    const auto& b = *c.bath;
    json bj;
    bj["form"] = b.form;
    if (b.xi) bj["xi"] = *b.xi;
    if (b.reorganization_energy) bj["reorganization_energy"] = *b.reorganization_energy;
    if (b.form == "ohmic-exponential") bj["omega_c"] = b.omega_c;
    if (!b.table.empty()) bj["table"] = b.table;
    bj["temperature"] = b.temperature;
    if (b.sites.empty())
      bj["sites"] = "all";
    else
      bj["sites"] = b.sites;
    bj["occupied_value"] = b.occupied_value;
    bj["other_value"] = b.other_value;
    j["bath"] = bj;
  }
  const auto& p = c.propagation;
  j["propagation"] = {{"engine", p.engine},       {"dt", p.dt},
                      {"t_final", p.t_final},     {"memory_ratio", p.memory_ratio},
                      {"svd_cutoff", p.svd_cutoff}, {"max_bond", p.max_bond},
                      {"coherence_weight", p.coherence_weight}, {"pathsum_budget", p.pathsum_budget}};
  j["propagation"]["memory"] = p.memory ? json(*p.memory) : json("auto");
  j["initial"] = {{"site", c.initial.site}};
  j["analysis"] = {{"fit_t_min", c.analysis.fit_t_min}, {"quality_threshold", c.analysis.quality_threshold}};
  if (c.analysis.fit_t_max) j["analysis"]["fit_t_max"] = *c.analysis.fit_t_max;
  if (!c.sweep.empty()) {
    j["sweep"] = json::array();
    for (const auto& ax : c.sweep) j["sweep"].push_back({{"parameter", ax.parameter}, {"values", ax.values}});
  }
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "malformed JSON in " + path + ": " + e.what());
  }
}

// Set a dotted key path ("bath.xi", "system.losses[0].lifetime") inside a JSON document.
inline void set_path(json& doc, const std::string& path, const json& value) {
  json* cur = &doc;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const auto dot = path.find('.', pos);
    std::string part = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError(path, "malformed key path");
    std::optional<std::size_t> index;
    if (auto br = part.find('['); br != std::string::npos) {
      if (part.back() != ']') throw ConfigError(path, "malformed index");
      try {
        index = std::stoul(part.substr(br + 1, part.size() - br - 2));
      } catch (const std::exception&) {
        throw ConfigError(path, "malformed index");
      }
      part = part.substr(0, br);
    }
    if (!cur->is_object() && !cur->is_null()) throw ConfigError(path, "'" + part + "' is not inside an object");
    cur = &(*cur)[part];
    if (index) {
      if (!cur->is_array() || *index >= cur->size()) throw ConfigError(path, "index out of range");
      cur = &(*cur)[*index];
    }
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  *cur = value;
}

// "key=value" with value parsed as JSON when possible, else taken as a string
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("", "override must look like key.path=value");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json v;
  try {
    v = json::parse(raw);
  } catch (const json::parse_error&) {
    v = raw;
  }
  set_path(doc, key, v);
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json doc = read_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

// Concrete problem derived from a config.
struct Problem {
  SystemHamiltonian system;
  std::vector<BathAttachment> baths;
  CMatrix rho0;
  double temperature = 300.0;
  double dt = 0.005;
  std::size_t n_steps = 0;
  std::optional<std::size_t> memory;
  double memory_ratio = 1e-4;
  TruncationPolicy policy;
  std::string engine = "tempo";
  double pathsum_budget = 1e8;
  UnitSystem units = kUnits;
};

inline SpectralDensity spectral_density_of(const BathSpec& b) {
  if (b.form == "tabulated") return SpectralDensity::from_file(b.table);
  const double xi = b.xi ? *b.xi : *b.reorganization_energy / (2.0 * b.omega_c);
  return SpectralDensity::ohmic_exponential(xi, b.omega_c);
}

inline Problem build_problem(const ExperimentConfig& c, const UnitSystem& u = kUnits) {
  Problem pb;
  pb.units = u;
  const auto& s = c.system;
  const auto conv = lifetime_convention_from_string(s.lifetime_convention);
  std::map<std::size_t, double> loss;
  for (const auto& l : s.losses) loss[l.site - 1] = l.lifetime;
  auto sys = build_excitonic_chain(s.sites, s.site_energy, s.coupling, loss, u, conv);
  if (s.cavity) {
    const auto& cv = *s.cavity;
    double Tc;
    if (cv.lifetime) {
      Tc = *cv.lifetime;
    } else {
      double Tref = kInf;
      for (const auto& l : s.losses)
        if ((cv.loss_ratio_site && l.site == *cv.loss_ratio_site) || (!cv.loss_ratio_site && std::isfinite(l.lifetime)))
          Tref = l.lifetime;
      Tc = Tref / *cv.loss_ratio;
    }
    const double Omega = cv.coupling ? *cv.coupling : *cv.coupling_ratio * std::abs(s.coupling);
    double energy = cv.energy;
    if (cv.vertical) {
      // Franck-Condon resonance: the monomer's vertical gap includes the bath reorganization
      energy = s.site_energy;
      if (c.bath) energy += reorganization_energy(spectral_density_of(*c.bath));
    }
    sys = embed_cavity(sys, energy, Tc, Omega, u, conv);
  }
  pb.system = sys;
  if (c.bath) {
    const auto sd = spectral_density_of(*c.bath);
    pb.temperature = c.bath->temperature;
    std::vector<std::size_t> sites = c.bath->sites;
    if (sites.empty())
      for (std::size_t j = 1; j <= s.sites; ++j) sites.push_back(j);
    for (auto j : sites) pb.baths.push_back({j - 1, sd, c.bath->occupied_value, c.bath->other_value});
  }
  pb.rho0 = InitialCondition::site(c.initial.site - 1).density_matrix(sys.n_states());
  const auto& p = c.propagation;
  pb.dt = p.dt;
  pb.n_steps = static_cast<std::size_t>(std::llround(p.t_final / p.dt));
  pb.memory = p.memory;
  pb.memory_ratio = p.memory_ratio;
  pb.policy.svd_relative_cutoff = p.svd_cutoff;
  pb.policy.max_bond_dimension = p.max_bond;
  pb.policy.coherence_weight = p.coherence_weight;
  pb.engine = p.engine;
  pb.pathsum_budget = p.pathsum_budget;
  return pb;
}

}  // namespace nhflux
