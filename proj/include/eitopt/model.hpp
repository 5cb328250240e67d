#pragma once

// Cost functionals I, J, K, electrode currents and rotation-scheme data.

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "eitopt/common.hpp"
#include "eitopt/fem.hpp"

namespace eitopt {

enum class Problem { I, J, K };

inline const char* to_string(Problem p) {
  switch (p) {
    case Problem::I: return "I";
    case Problem::J: return "J";
    case Problem::K: return "K";
  }
  return "?";
}

// Measured voltages U* and the current patterns I^j. One pattern for the
// single-measurement problems, m patterns for the rotation scheme.
struct MeasurementSet {
  VoltageVector u_star;
  std::vector<CurrentPattern> currents;

  std::size_t m() const { return u_star.size(); }

  void validate() const {
    const auto n = currents.size();
    if (n != 1 && n != m()) throw Error("measurement set must hold 1 or m current patterns");
    for (const auto& c : currents) {
      if (c.size() != m()) throw Error("current pattern length differs from electrode count");
      if (!c.is_zero_sum(1e-8)) throw Error("current pattern violates charge conservation");
    }
  }
};

struct CostBreakdown {
  double total = 0.0;
  double mismatch = 0.0;
  double reg_term = 0.0;
  std::vector<double> mismatch_terms;  // row-major (j, l)
};

// i_l = int chi_l (U_l - u)/Z_l ds, the Robin form of the electrode flux.
inline CurrentPattern electrode_currents(const ForwardModel& model, const PotentialField& u,
                                         const VoltageVector& U) {
  CurrentPattern i(model.n_electrodes());
  for (std::size_t l = 0; l < i.size(); ++l)
    i[l] = (U[l] * model.electrode_measure(l) - electrode_integral(model, u, l)) /
           model.impedance(l);
  return i;
}

// U^j = (U_j, ..., U_m, U_1, ..., U_{j-1}) for 1-based j.
inline VoltageVector rotate_voltages(const VoltageVector& U, std::size_t j) {
  const auto m = U.size();
  if (j < 1 || j > m) throw Error("rotation index out of range");
  VoltageVector out(m);
  for (std::size_t l = 0; l < m; ++l) out[l] = U[(l + j - 1) % m];
  return out;
}

// Position (1-based) at which U_k lands in the j-th rotation.
inline std::size_t theta_index(std::size_t k, std::size_t j, std::size_t m) {
  if (k < 1 || k > m || j < 1 || j > m) throw Error("theta_index: index out of range");
  return j <= k ? k - j + 1 : m + k - j + 1;
}

// Which functional to evaluate, with the data it compares against.
struct Objective {
  Problem problem = Problem::J;
  MeasurementSet data;
  double beta = 0.0;

  static Objective problem_I(const CurrentPattern& currents) {
    Objective o;
    o.problem = Problem::I;
    o.data.u_star = VoltageVector(currents.size());
    o.data.currents = {currents};
    return o;
  }
  static Objective problem_J(const CurrentPattern& currents, const VoltageVector& u_star,
                             double beta) {
    Objective o;
    o.problem = Problem::J;
    o.data.u_star = u_star;
    o.data.currents = {currents};
    o.beta = beta;
    return o;
  }
  static Objective problem_K(const MeasurementSet& data, double beta) {
    Objective o;
    o.problem = Problem::K;
    o.data = data;
    o.beta = beta;
    return o;
  }

  std::size_t pattern_count() const { return problem == Problem::K ? data.currents.size() : 1; }

  VoltageVector voltages_for(const VoltageVector& U, std::size_t j) const {
    return problem == Problem::K ? rotate_voltages(U, j + 1) : U;
  }

  double regularization(const VoltageVector& U) const {
    if (problem == Problem::I || beta == 0.0) return 0.0;
    double s = 0.0;
    for (std::size_t k = 0; k < U.size(); ++k) s += (U[k] - data.u_star[k]) * (U[k] - data.u_star[k]);
    return beta * s;
  }
};

namespace detail {

inline CostBreakdown assemble_breakdown(const Objective& obj, const VoltageVector& U,
                                        const std::vector<CurrentPattern>& currents) {
  CostBreakdown cost;
  for (std::size_t j = 0; j < currents.size(); ++j)
    for (std::size_t l = 0; l < currents[j].size(); ++l) {
      const double r = currents[j][l] - obj.data.currents[j][l];
      cost.mismatch_terms.push_back(r * r);
      cost.mismatch += r * r;
    }
  cost.reg_term = obj.regularization(U);
  cost.total = cost.mismatch + cost.reg_term;
  return cost;
}

}  // namespace detail

// Cost of any of the three problems; pattern solves share one operator.
inline CostBreakdown evaluate_cost(const ForwardModel& model, const Objective& obj,
                                   const ConductivityField& sigma, const VoltageVector& U) {
  const StateOperator op(model, sigma.values);
  const auto n = obj.pattern_count();
  std::vector<CurrentPattern> currents(n);
  parallel_for(n, [&](std::size_t j) {
    const auto Uj = obj.voltages_for(U, j);
    currents[j] = electrode_currents(model, op.solve(Uj.span()), Uj);
  });
  return detail::assemble_breakdown(obj, U, currents);
}

inline CostBreakdown cost_I(const ForwardModel& model, const ConductivityField& sigma,
                            const VoltageVector& U, const CurrentPattern& I) {
  return evaluate_cost(model, Objective::problem_I(I), sigma, U);
}

inline CostBreakdown cost_J(const ForwardModel& model, const ConductivityField& sigma,
                            const VoltageVector& U, const CurrentPattern& I,
                            const VoltageVector& u_star, double beta) {
  return evaluate_cost(model, Objective::problem_J(I, u_star, beta), sigma, U);
}

inline CostBreakdown cost_K(const ForwardModel& model, const ConductivityField& sigma,
                            const VoltageVector& U, const MeasurementSet& data, double beta) {
  return evaluate_cost(model, Objective::problem_K(data, beta), sigma, U);
}

// Voltage-to-current data for every rotation of U* at the true conductivity.
inline MeasurementSet synthesize_rotation_data(const ForwardModel& model,
                                               const ConductivityField& sigma_true,
                                               const VoltageVector& u_star) {
  if (!u_star.is_zero_sum()) throw Error("U* must satisfy the grounding condition");
  const auto m = u_star.size();
  MeasurementSet data;
  data.u_star = u_star;
  data.currents.resize(m);
  const StateOperator op(model, sigma_true.values);
  parallel_for(m, [&](std::size_t j) {
    const auto Uj = rotate_voltages(u_star, j + 1);
    data.currents[j] = electrode_currents(model, op.solve(Uj.span()), Uj);
  });
  return data;
}

struct SolutionNorms {
  double n_sigma = 0.0;  // ||sigma - sigma_true||_L2 / ||sigma_true||_L2
  double n_u = 0.0;      // |U - U*| / |U*|, NaN when U* is zero
};

inline SolutionNorms solution_norms(std::span<const double> areas, std::span<const double> sigma,
                                    std::span<const double> sigma_true, const VoltageVector& U,
                                    const VoltageVector& u_star) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t e = 0; e < areas.size(); ++e) {
    num += areas[e] * (sigma[e] - sigma_true[e]) * (sigma[e] - sigma_true[e]);
    den += areas[e] * sigma_true[e] * sigma_true[e];
  }
  if (den == 0.0) throw Error("solution_norms: reference conductivity has zero norm");
  SolutionNorms n;
  n.n_sigma = std::sqrt(num / den);
  double du = 0.0;
  for (std::size_t k = 0; k < U.size(); ++k) du += (U[k] - u_star[k]) * (U[k] - u_star[k]);
  const double ref = u_star.norm();
  n.n_u = ref > 0.0 ? std::sqrt(du) / ref : std::nan("");
  return n;
}

// --- plain-text persistence ---

inline void write_values(std::ostream& os, std::span<const double> values) {
  const auto p = os.precision();
  os << std::setprecision(17);
  for (double v : values) os << v << '\n';
  os.precision(p);
}

inline std::vector<double> read_values(std::istream& is) {
  std::vector<double> out;
  std::string token;
  while (is >> token) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw Error("malformed number '" + token + "'");
    }
  }
  return out;
}

// Header line "m U*_1 ... U*_m", then one row "j l I" per (pattern, electrode).
inline void write_measurements(std::ostream& os, const MeasurementSet& data) {
  const auto p = os.precision();
  os << std::setprecision(17) << data.m();
  for (double v : data.u_star) os << ' ' << v;
  os << '\n';
  for (std::size_t j = 0; j < data.currents.size(); ++j)
    for (std::size_t l = 0; l < data.m(); ++l)
      os << j + 1 << ' ' << l + 1 << ' ' << data.currents[j][l] << '\n';
  os.precision(p);
}

inline MeasurementSet read_measurements(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw Error("measurement file is empty");
  std::istringstream hs(header);
  std::size_t m = 0;
  if (!(hs >> m) || m == 0) throw Error("measurement header must start with the electrode count");
  MeasurementSet data;
  data.u_star = VoltageVector(read_values(hs));
  if (data.u_star.size() != m) throw Error("measurement header must list m voltages");
  std::vector<std::vector<double>> rows;
  std::size_t j = 0, l = 0;
  double value = 0.0;
  while (is >> j >> l >> value) {
    if (j < 1 || l < 1 || l > m) throw Error("measurement row index out of range");
    if (rows.size() < j) rows.resize(j, std::vector<double>(m, std::nan("")));
    rows[j - 1][l - 1] = value;
  }
  if (!is.eof()) throw Error("malformed measurement row");
  for (auto& r : rows) {
    for (double v : r)
      if (std::isnan(v)) throw Error("measurement set is missing entries");
    data.currents.emplace_back(std::move(r));
  }
  data.validate();
  return data;
}

}  // namespace eitopt
