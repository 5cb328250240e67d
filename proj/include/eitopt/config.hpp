#pragma once

// Flat "section.key = value" experiment configuration. Lines starting with '#'
// are comments; lists are comma separated; inclusions are "x y r" triples
// separated by ';'.

#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "eitopt/common.hpp"
#include "eitopt/mesh.hpp"
#include "eitopt/optimizer.hpp"

namespace eitopt {

struct ExperimentConfig {
  double radius = 0.1;
  int n_v = 96;

  int m = 16;
  double half_width = 0.12;
  std::vector<double> impedances{0.1};  // one value is broadcast to every electrode

  PhantomSpec phantom = PhantomSpec::reference();
  std::vector<double> currents{-3e-2, 2e-2,  3e-2, -7e-2, 6e-2,  -1e-2, -4e-2, 2e-2,
                               4e-2,  3e-2, -5e-2, 4e-2,  3e-2, -5e-2, 2e-2,  -4e-2};

  double sigma_ini = 0.3;
  std::vector<double> u_ini{-1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1};

  OptConfig opt{};
  double stage2_beta = 0.0;
  double stage3_beta = 0.3162;
  bool stage2_pca = true;
  bool stage3_pca = true;
  std::vector<double> sweep_betas{0.0, 1e-4, 1e-2, 0.3162, 10.0};

  std::size_t pca_n_r = 500;
  double pca_r_opt = 85.0;  // percent
  std::uint64_t pca_seed = 20240601;

  int data_n_v = 0;  // > 0 synthesizes Stage 3 data on a different mesh
  int coarse_n_v = 48;
  std::string output_dir = "out";

  ElectrodeLayout layout() const {
    ElectrodeLayout l = ElectrodeLayout::equispaced(m, half_width, impedances.front());
    if (impedances.size() > 1) l.impedances = impedances;
    l.validate();
    return l;
  }
  CurrentPattern current_pattern() const { return CurrentPattern(currents); }
  VoltageVector initial_voltages() const { return VoltageVector(u_ini); }

  void validate() const {
    if (!(radius > 0.0)) throw ConfigError("mesh.radius must be positive");
    if (n_v < 12 || n_v % 4 != 0) throw ConfigError("mesh.n_v must be >= 12 and divisible by 4");
    if (m < 2) throw ConfigError("layout.m must be >= 2");
    if (impedances.size() != 1 && impedances.size() != static_cast<std::size_t>(m))
      throw ConfigError("layout.z needs one value or m values");
    layout();
    phantom.validate(radius);
    if (currents.size() != static_cast<std::size_t>(m))
      throw ConfigError("currents needs m values");
    if (!current_pattern().is_zero_sum(1e-8)) throw ConfigError("currents must sum to zero");
    if (u_ini.size() != static_cast<std::size_t>(m)) throw ConfigError("init.u needs m values");
    if (!initial_voltages().is_zero_sum(1e-8)) throw ConfigError("init.u must sum to zero");
    if (!(sigma_ini >= opt.bounds.lower && sigma_ini <= opt.bounds.upper))
      throw ConfigError("init.sigma must lie within [opt.sigma_min, opt.sigma_max]");
    OptConfig o = opt;
    o.r_opt = pca_r_opt / 100.0;
    o.validate();
    if (!(stage2_beta >= 0.0) || !(stage3_beta >= 0.0)) throw ConfigError("beta must be >= 0");
    for (double b : sweep_betas)
      if (!(b >= 0.0)) throw ConfigError("sweep.betas must be >= 0");
    if (pca_n_r < 2) throw ConfigError("pca.n_r must be >= 2");
    if (data_n_v != 0 && (data_n_v < 12 || data_n_v % 4 != 0))
      throw ConfigError("data.n_v must be 0 or a valid boundary vertex count");
    if (coarse_n_v < 12 || coarse_n_v % 4 != 0)
      throw ConfigError("validate.coarse_n_v must be a valid boundary vertex count");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + text + "'");
  }
  if (trim(text.substr(used)).size()) throw ConfigError("expected a number, got '" + text + "'");
  return v;
}

inline long long parse_int(const std::string& text) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected an integer, got '" + text + "'");
  }
  if (trim(text.substr(used)).size()) throw ConfigError("expected an integer, got '" + text + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  if (!text.empty() && text.front() == '-') throw ConfigError("expected an unsigned integer");
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected an unsigned integer, got '" + text + "'");
  }
  if (trim(text.substr(used)).size()) throw ConfigError("expected an unsigned integer, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

inline std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item)));
  return out;
}

inline std::vector<Inclusion> parse_inclusions(const std::string& text) {
  std::vector<Inclusion> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (trim(item).empty()) continue;
    std::istringstream is(item);
    Inclusion inc;
    std::string extra;
    if (!(is >> inc.x >> inc.y >> inc.r) || (is >> extra))
      throw ConfigError("inclusion must be 'x y r', got '" + trim(item) + "'");
    out.push_back(inc);
  }
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  return os.str();
}

inline void apply_key(ExperimentConfig& c, const std::string& key, const std::string& v) {
  auto& o = c.opt;
  if (key == "mesh.radius") c.radius = parse_double(v);
  else if (key == "mesh.n_v") c.n_v = static_cast<int>(parse_int(v));
  else if (key == "layout.m") c.m = static_cast<int>(parse_int(v));
  else if (key == "layout.half_width") c.half_width = parse_double(v);
  else if (key == "layout.z") c.impedances = parse_list(v);
  else if (key == "phantom.background") c.phantom.background = parse_double(v);
  else if (key == "phantom.inclusion_value") c.phantom.inclusion_value = parse_double(v);
  else if (key == "phantom.inclusions") c.phantom.inclusions = parse_inclusions(v);
  else if (key == "currents") c.currents = parse_list(v);
  else if (key == "init.sigma") c.sigma_ini = parse_double(v);
  else if (key == "init.u") c.u_ini = parse_list(v);
  else if (key == "opt.tol") o.tol = parse_double(v);
  else if (key == "opt.n_max") o.n_max = static_cast<int>(parse_int(v));
  else if (key == "opt.lbfgs_memory") o.lbfgs_memory = static_cast<int>(parse_int(v));
  else if (key == "opt.restart_interval") o.restart_interval = static_cast<int>(parse_int(v));
  else if (key == "opt.sigma_min") o.bounds.lower = parse_double(v);
  else if (key == "opt.sigma_max") o.bounds.upper = parse_double(v);
  else if (key == "opt.sobolev_ell") o.sobolev_ell = parse_double(v);
  else if (key == "opt.chi_eps") o.chi_eps = parse_double(v);
  else if (key == "opt.armijo_c1") o.armijo.c1 = parse_double(v);
  else if (key == "opt.armijo_shrink") o.armijo.shrink = parse_double(v);
  else if (key == "opt.armijo_grow") o.armijo.grow = parse_double(v);
  else if (key == "opt.max_halvings") o.armijo.max_halvings = static_cast<int>(parse_int(v));
  else if (key == "stage2.beta") c.stage2_beta = parse_double(v);
  else if (key == "stage2.use_pca") c.stage2_pca = parse_bool(v);
  else if (key == "stage3.beta") c.stage3_beta = parse_double(v);
  else if (key == "stage3.use_pca") c.stage3_pca = parse_bool(v);
  else if (key == "sweep.betas") c.sweep_betas = parse_list(v);
  else if (key == "pca.n_r") c.pca_n_r = static_cast<std::size_t>(parse_u64(v));
  else if (key == "pca.r_opt") c.pca_r_opt = parse_double(v);
  else if (key == "pca.seed") c.pca_seed = parse_u64(v);
  else if (key == "data.n_v") c.data_n_v = static_cast<int>(parse_int(v));
  else if (key == "validate.coarse_n_v") c.coarse_n_v = static_cast<int>(parse_int(v));
  else if (key == "output.dir") c.output_dir = v;
  else throw ConfigError("unknown key");
}

}  // namespace detail

// Missing keys keep their defaults; errors name the line and the key.
inline ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig c;
  std::map<std::string, int> seen;
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (auto it = seen.find(key); it != seen.end())
      throw ConfigError(where + ": key '" + key + "' already set on line " +
                        std::to_string(it->second));
    seen[key] = number;
    try {
      detail::apply_key(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17) << std::boolalpha;
  const auto& o = c.opt;
  os << "mesh.radius = " << c.radius << '\n';
  os << "mesh.n_v = " << c.n_v << '\n';
  os << "layout.m = " << c.m << '\n';
  os << "layout.half_width = " << c.half_width << '\n';
  os << "layout.z = " << detail::join(c.impedances) << '\n';
  os << "phantom.background = " << c.phantom.background << '\n';
  os << "phantom.inclusion_value = " << c.phantom.inclusion_value << '\n';
  os << "phantom.inclusions = ";
  for (std::size_t i = 0; i < c.phantom.inclusions.size(); ++i) {
    const auto& inc = c.phantom.inclusions[i];
    os << (i ? "; " : "") << inc.x << ' ' << inc.y << ' ' << inc.r;
  }
  os << '\n';
  os << "currents = " << detail::join(c.currents) << '\n';
  os << "init.sigma = " << c.sigma_ini << '\n';
  os << "init.u = " << detail::join(c.u_ini) << '\n';
  os << "opt.tol = " << o.tol << '\n';
  os << "opt.n_max = " << o.n_max << '\n';
  os << "opt.lbfgs_memory = " << o.lbfgs_memory << '\n';
  os << "opt.restart_interval = " << o.restart_interval << '\n';
  os << "opt.sigma_min = " << o.bounds.lower << '\n';
  os << "opt.sigma_max = " << o.bounds.upper << '\n';
  os << "opt.sobolev_ell = " << o.sobolev_ell << '\n';
  os << "opt.chi_eps = " << o.chi_eps << '\n';
  os << "opt.armijo_c1 = " << o.armijo.c1 << '\n';
  os << "opt.armijo_shrink = " << o.armijo.shrink << '\n';
  os << "opt.armijo_grow = " << o.armijo.grow << '\n';
  os << "opt.max_halvings = " << o.armijo.max_halvings << '\n';
  os << "stage2.beta = " << c.stage2_beta << '\n';
  os << "stage2.use_pca = " << c.stage2_pca << '\n';
  os << "stage3.beta = " << c.stage3_beta << '\n';
  os << "stage3.use_pca = " << c.stage3_pca << '\n';
  os << "sweep.betas = " << detail::join(c.sweep_betas) << '\n';
  os << "pca.n_r = " << c.pca_n_r << '\n';
  os << "pca.r_opt = " << c.pca_r_opt << '\n';
  os << "pca.seed = " << c.pca_seed << '\n';
  os << "data.n_v = " << c.data_n_v << '\n';
  os << "validate.coarse_n_v = " << c.coarse_n_v << '\n';
  os << "output.dir = " << c.output_dir << '\n';
  return os.str();
}

}  // namespace eitopt
