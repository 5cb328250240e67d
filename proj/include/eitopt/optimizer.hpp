#pragma once

// Projected gradient descent over (sigma, U), (xi, U) or U alone, with an
// optional two-loop L-BFGS direction and Armijo backtracking.

#include <cmath>
#include <deque>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "eitopt/common.hpp"
#include "eitopt/fem.hpp"
#include "eitopt/gradient.hpp"
#include "eitopt/model.hpp"
#include "eitopt/pca.hpp"

namespace eitopt {

struct ArmijoConfig {
  double c1 = 1e-4;
  double shrink = 0.5;
  double grow = 2.0;
  int max_halvings = 40;
};

struct OptConfig {
  double beta = 0.0;
  bool use_pca = false;
  double r_opt = 0.85;
  double sobolev_ell = 0.0;
  double chi_eps = 0.0;
  double tol = 1e-6;
  int n_max = 250;
  int lbfgs_memory = 10;      // 0 = plain projected gradient
  int restart_interval = 10;  // memory is cleared every this many iterations
  Bounds bounds{};
  ArmijoConfig armijo{};

  void validate() const {
    if (!(beta >= 0.0)) throw ConfigError("opt.beta must be >= 0");
    if (!(r_opt > 0.0 && r_opt <= 1.0)) throw ConfigError("pca.r_opt must lie in (0, 100]");
    if (!(sobolev_ell >= 0.0)) throw ConfigError("opt.sobolev_ell must be >= 0");
    if (!(chi_eps >= 0.0)) throw ConfigError("opt.chi_eps must be >= 0");
    if (!(tol > 0.0)) throw ConfigError("opt.tol must be > 0");
    if (n_max < 0) throw ConfigError("opt.n_max must be >= 0");
    if (lbfgs_memory < 0) throw ConfigError("opt.lbfgs_memory must be >= 0");
    if (restart_interval < 1) throw ConfigError("opt.restart_interval must be >= 1");
    if (!(bounds.lower > 0.0 && bounds.lower < bounds.upper))
      throw ConfigError("opt bounds must satisfy 0 < sigma_min < sigma_max");
    if (!(armijo.c1 > 0.0 && armijo.c1 < 1.0)) throw ConfigError("opt.armijo_c1 must lie in (0, 1)");
    if (!(armijo.shrink > 0.0 && armijo.shrink < 1.0))
      throw ConfigError("opt.armijo_shrink must lie in (0, 1)");
    if (!(armijo.grow >= 1.0)) throw ConfigError("opt.armijo_grow must be >= 1");
  }
};

inline ConductivityField project_sigma(ConductivityField sigma, Bounds bounds) {
  for (double& v : sigma.values) v = std::clamp(v, bounds.lower, bounds.upper);
  sigma.bounds = bounds;
  return sigma;
}

inline VoltageVector project_U(VoltageVector U) {
  if (U.size() == 0) return U;
  const double mean = U.total() / static_cast<double>(U.size());
  for (double& v : U) v -= mean;
  return U;
}

struct LineSearchResult {
  double alpha = 0.0;
  double cost = 0.0;
  int trials = 0;
  bool accepted = false;
};

struct TrialOutcome {
  double cost;
  double decrease;  // first-order predicted decrease <g, x - x(alpha)>
};

// Backtracking from alpha_init until cost <= cost0 - c1 * decrease with a
// positive predicted decrease.
template <class Trial>
LineSearchResult backtrack(double cost0, double alpha_init, const ArmijoConfig& cfg,
                           Trial&& trial) {
  LineSearchResult r;
  double alpha = alpha_init;
  for (int k = 0; k <= cfg.max_halvings; ++k, alpha *= cfg.shrink) {
    ++r.trials;
    const TrialOutcome t = trial(alpha);
    if (t.decrease > 0.0 && std::isfinite(t.cost) && t.cost <= cost0 - cfg.c1 * t.decrease) {
      r.alpha = alpha;
      r.cost = t.cost;
      r.accepted = true;
      return r;
    }
  }
  return r;
}

// Unconstrained form: accepts when J(x - alpha d) <= J(x) - c1 alpha <g, d>.
inline LineSearchResult line_search(const std::function<double(double)>& cost_at, double cost0,
                                    double slope, double alpha_init,
                                    const ArmijoConfig& cfg = {}) {
  if (!(slope > 0.0)) throw OptimizerError("line search: direction is not a descent direction");
  auto r = backtrack(cost0, alpha_init, cfg, [&](double a) {
    return TrialOutcome{cost_at(a), a * slope};
  });
  if (!r.accepted) throw OptimizerError("line search failed after the maximum number of halvings");
  return r;
}

enum class ControlSpace { Voltage, Physical, Reduced };

enum class Termination { CostStagnation, AllCriteria, MaxIterations, Stationary, LineSearchFailed };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::CostStagnation: return "cost-stagnation";
    case Termination::AllCriteria: return "all-criteria";
    case Termination::MaxIterations: return "max-iterations";
    case Termination::Stationary: return "stationary";
    case Termination::LineSearchFailed: return "line-search-failed";
  }
  return "?";
}

struct IterationRow {
  int iter = 0;
  double cost = 0.0;
  double mismatch = 0.0;
  double reg = 0.0;
  double n_sigma = std::nan("");
  double n_u = std::nan("");
  double alpha = 0.0;
  double gnorm_sigma = 0.0;
  double gnorm_u = 0.0;
  // Feasibility snapshot of the logged iterate.
  double u_sum = 0.0;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
};

struct RunRecord {
  std::vector<IterationRow> rows;
  ConductivityField sigma;
  VoltageVector U;
  std::vector<double> xi;
  Termination reason = Termination::MaxIterations;

  const IterationRow& final_row() const { return rows.back(); }
  int iterations() const { return rows.empty() ? 0 : rows.back().iter; }
};

inline void write_run_csv(std::ostream& os, const RunRecord& run) {
  const auto p = os.precision();
  os << std::setprecision(17);
  os << "iter,cost,mismatch,reg,N_sigma,N_U,alpha,gnorm_sigma,gnorm_U\n";
  for (const auto& r : run.rows)
    os << r.iter << ',' << r.cost << ',' << r.mismatch << ',' << r.reg << ',' << r.n_sigma << ','
       << r.n_u << ',' << r.alpha << ',' << r.gnorm_sigma << ',' << r.gnorm_u << '\n';
  os.precision(p);
}

// Everything one optimization run needs besides the configuration.
struct DescentProblem {
  const ForwardModel* model = nullptr;
  Objective objective;
  ControlSpace space = ControlSpace::Physical;
  ConductivityField sigma0;   // fixed sigma for Voltage, start otherwise
  VoltageVector u0;
  const PcaBasis* basis = nullptr;                     // required for Reduced
  std::optional<std::vector<double>> sigma_reference;  // enables N_sigma logging
  std::optional<VoltageVector> u_reference;            // enables N_U logging
};

namespace detail {

// Control vector x = [c; U] where c is sigma, xi or empty.
class ControlMap {
 public:
  ControlMap(const DescentProblem& p, const OptConfig& cfg) : p_(p), cfg_(cfg) {
    m_ = p.u0.size();
    switch (p.space) {
      case ControlSpace::Voltage: n_c_ = 0; break;
      case ControlSpace::Physical: n_c_ = p.model->n_elements(); break;
      case ControlSpace::Reduced:
        if (!p.basis) throw OptimizerError("reduced control space needs a PCA basis");
        n_c_ = p.basis->n_xi();
        break;
    }
    weights_.assign(n_c_ + m_, 1.0);
    if (p.space == ControlSpace::Physical) {
      auto a = p.model->areas();
      std::copy(a.begin(), a.end(), weights_.begin());
    }
  }

  std::size_t n_control() const { return n_c_; }
  double weight(std::size_t i) const { return weights_[i]; }
  std::size_t size() const { return n_c_ + m_; }

  double inner(std::span<const double> a, std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += weights_[i] * a[i] * b[i];
    return s;
  }

  std::vector<double> initial() const {
    std::vector<double> x;
    switch (p_.space) {
      case ControlSpace::Voltage: break;
      case ControlSpace::Physical: x = p_.sigma0.values; break;
      case ControlSpace::Reduced: x = p_.basis->to_reduced(p_.sigma0.values); break;
    }
    x.insert(x.end(), p_.u0.begin(), p_.u0.end());
    return project(std::move(x));
  }

  std::vector<double> project(std::vector<double> x) const {
    if (p_.space == ControlSpace::Physical)
      for (std::size_t i = 0; i < n_c_; ++i)
        x[i] = std::clamp(x[i], cfg_.bounds.lower, cfg_.bounds.upper);
    VoltageVector u = project_U(voltages(x));
    std::copy(u.begin(), u.end(), x.begin() + static_cast<std::ptrdiff_t>(n_c_));
    return x;
  }

  ConductivityField sigma(std::span<const double> x) const {
    switch (p_.space) {
      case ControlSpace::Voltage: return p_.sigma0;
      case ControlSpace::Physical:
        return ConductivityField{{x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n_c_)},
                                 cfg_.bounds};
      case ControlSpace::Reduced: return p_.basis->to_physical(x.first(n_c_), cfg_.bounds);
    }
    return {};
  }

  VoltageVector voltages(std::span<const double> x) const {
    return VoltageVector(std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(n_c_), x.end()));
  }

  // Raw gradient (Riesz representer in the weighted inner product) and the
  // working gradient used for directions (Sobolev-smoothed when ell > 0).
  struct Gradients {
    std::vector<double> raw;
    std::vector<double> work;
    double norm_sigma = 0.0;
    double norm_u = 0.0;
  };

  Gradients gradients(const GradientPair& g) const {
    Gradients out;
    auto append_u = [&](std::vector<double>& v) {
      VoltageVector du(g.d_u);
      out.norm_u = du.norm();
      if (&v == &out.work) du = project_U(du);
      v.insert(v.end(), du.begin(), du.end());
    };
    const auto& model = *p_.model;
    switch (p_.space) {
      case ControlSpace::Voltage: break;
      case ControlSpace::Physical: {
        out.raw = g.d_sigma;
        out.work = sobolev_smooth(model, g.d_sigma, cfg_.sobolev_ell);
        out.norm_sigma = std::sqrt(inner_sigma(g.d_sigma));
        break;
      }
      case ControlSpace::Reduced: {
        out.raw = p_.basis->project_gradient(weighted_gradient(model, g.d_sigma));
        out.work = cfg_.sobolev_ell > 0.0
                       ? p_.basis->project_gradient(weighted_gradient(
                             model, sobolev_smooth(model, g.d_sigma, cfg_.sobolev_ell)))
                       : out.raw;
        out.norm_sigma = std::sqrt(inner_sigma(g.d_sigma));
        break;
      }
    }
    append_u(out.raw);
    append_u(out.work);
    return out;
  }

  // Freezes components of a direction that would push a clamped sigma further
  // outside the box (steps are x - alpha d).
  void mask(std::span<const double> x, std::vector<double>& d) const {
    if (p_.space != ControlSpace::Physical) return;
    for (std::size_t i = 0; i < n_c_; ++i) {
      if ((x[i] <= cfg_.bounds.lower && d[i] > 0.0) || (x[i] >= cfg_.bounds.upper && d[i] < 0.0))
        d[i] = 0.0;
    }
  }

 private:
  double inner_sigma(std::span<const double> density) const {
    auto a = p_.model->areas();
    double s = 0.0;
    for (std::size_t e = 0; e < density.size(); ++e) s += a[e] * density[e] * density[e];
    return s;
  }

  const DescentProblem& p_;
  const OptConfig& cfg_;
  std::size_t n_c_ = 0;
  std::size_t m_ = 0;
  std::vector<double> weights_;
};

// Two-loop recursion in the weighted inner product.
class Lbfgs {
 public:
  explicit Lbfgs(std::size_t capacity) : capacity_(capacity) {}

  bool empty() const { return s_.empty(); }
  void clear() {
    s_.clear();
    y_.clear();
  }

  void push(const ControlMap& map, std::vector<double> s, std::vector<double> y) {
    if (capacity_ == 0) return;
    const double sy = map.inner(s, y);
    if (!(sy > 1e-12 * std::sqrt(map.inner(s, s) * map.inner(y, y)))) return;
    s_.push_back(std::move(s));
    y_.push_back(std::move(y));
    if (s_.size() > capacity_) {
      s_.pop_front();
      y_.pop_front();
    }
  }

  std::vector<double> direction(const ControlMap& map, const std::vector<double>& g) const {
    std::vector<double> q = g;
    const auto k = s_.size();
    std::vector<double> a(k);
    for (std::size_t i = k; i-- > 0;) {
      a[i] = map.inner(s_[i], q) / map.inner(y_[i], s_[i]);
      for (std::size_t n = 0; n < q.size(); ++n) q[n] -= a[i] * y_[i][n];
    }
    if (k > 0) scale_initial(map, s_[k - 1], y_[k - 1], q);
    for (std::size_t i = 0; i < k; ++i) {
      const double b = map.inner(y_[i], q) / map.inner(y_[i], s_[i]);
      for (std::size_t n = 0; n < q.size(); ++n) q[n] += (a[i] - b) * s_[i][n];
    }
    return q;
  }

 private:
  // Initial inverse Hessian: one scalar s.y / y.y per block (control, U),
  // falling back to the global scalar when a block has no usable curvature.
  static void scale_initial(const ControlMap& map, const std::vector<double>& s,
                            const std::vector<double>& y, std::vector<double>& q) {
    const double global = map.inner(s, y) / map.inner(y, y);
    const auto nc = map.n_control();
    auto block = [&](std::size_t first, std::size_t last) {
      double sy = 0.0, yy = 0.0;
      for (std::size_t i = first; i < last; ++i) {
        sy += map.weight(i) * s[i] * y[i];
        yy += map.weight(i) * y[i] * y[i];
      }
      const double gamma = (sy > 0.0 && yy > 0.0) ? sy / yy : global;
      for (std::size_t i = first; i < last; ++i) q[i] *= gamma;
    };
    block(0, nc);
    block(nc, q.size());
  }

  std::size_t capacity_;
  std::deque<std::vector<double>> s_;
  std::deque<std::vector<double>> y_;
};

}  // namespace detail

inline RunRecord run_descent(const DescentProblem& problem, const OptConfig& cfg) {
  cfg.validate();
  if (!problem.model) throw OptimizerError("descent problem has no forward model");
  const auto& model = *problem.model;
  const auto& obj = problem.objective;
  const bool with_sigma = problem.space != ControlSpace::Voltage;
  const detail::ControlMap map(problem, cfg);

  struct State {
    std::vector<double> x;
    ConductivityField sigma;
    VoltageVector U;
    Evaluation ev;
    detail::ControlMap::Gradients grad;
  };
  auto make_state = [&](std::vector<double> x) {
    State s;
    s.x = std::move(x);
    s.sigma = map.sigma(s.x);
    s.U = map.voltages(s.x);
    s.ev = evaluate(model, obj, s.sigma, s.U, with_sigma);
    s.grad = map.gradients(s.ev.gradient);
    return s;
  };

  RunRecord run;
  auto log = [&](const State& s, int iter, double alpha) {
    IterationRow r;
    r.iter = iter;
    r.cost = s.ev.cost.total;
    r.mismatch = s.ev.cost.mismatch;
    r.reg = s.ev.cost.reg_term;
    if (problem.sigma_reference || problem.u_reference) {
      const auto areas = model.areas();
      if (problem.sigma_reference)
        r.n_sigma = solution_norms(areas, s.sigma.values, *problem.sigma_reference, s.U, s.U).n_sigma;
      if (problem.u_reference) {
        const auto& ref = *problem.u_reference;
        double d = 0.0;
        for (std::size_t k = 0; k < ref.size(); ++k) d += (s.U[k] - ref[k]) * (s.U[k] - ref[k]);
        r.n_u = ref.norm() > 0.0 ? std::sqrt(d) / ref.norm() : std::nan("");
      }
    }
    r.alpha = alpha;
    r.gnorm_sigma = s.grad.norm_sigma;
    r.gnorm_u = s.grad.norm_u;
    r.u_sum = s.U.total();
    r.sigma_min = *std::min_element(s.sigma.values.begin(), s.sigma.values.end());
    r.sigma_max = *std::max_element(s.sigma.values.begin(), s.sigma.values.end());
    run.rows.push_back(r);
  };

  State cur = make_state(map.initial());
  log(cur, 0, 0.0);
  detail::Lbfgs memory(static_cast<std::size_t>(cfg.lbfgs_memory));
  double alpha_prev = 1.0 / cfg.armijo.grow;
  run.reason = Termination::MaxIterations;

  auto attempt = [&](const std::vector<double>& d, double alpha_init, std::optional<State>& next) {
    return backtrack(cur.ev.cost.total, alpha_init, cfg.armijo, [&](double alpha) {
      std::vector<double> x(cur.x.size());
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = cur.x[i] - alpha * d[i];
      x = map.project(std::move(x));
      std::vector<double> step(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) step[i] = cur.x[i] - x[i];
      const double decrease = map.inner(cur.grad.raw, step);
      if (!(decrease > 0.0)) return TrialOutcome{INFINITY, decrease};
      next = make_state(std::move(x));
      return TrialOutcome{next->ev.cost.total, decrease};
    });
  };

  for (int iter = 1; iter <= cfg.n_max; ++iter) {
    auto steepest = cur.grad.work;
    map.mask(cur.x, steepest);
    if (map.inner(steepest, steepest) == 0.0) {
      run.reason = Termination::Stationary;
      break;
    }

    bool quasi_newton = !memory.empty();
    std::vector<double> d = quasi_newton ? memory.direction(map, cur.grad.work) : steepest;
    map.mask(cur.x, d);
    if (quasi_newton && !(map.inner(cur.grad.raw, d) > 0.0)) {
      memory.clear();
      d = steepest;
      quasi_newton = false;
    }

    std::optional<State> next;
    auto ls = attempt(d, quasi_newton ? 1.0 : cfg.armijo.grow * alpha_prev, next);
    if (!ls.accepted && quasi_newton) {
      memory.clear();
      d = steepest;
      quasi_newton = false;
      ls = attempt(d, 1.0, next);
    }
    if (!ls.accepted) {
      run.reason = Termination::LineSearchFailed;
      break;
    }
    alpha_prev = ls.alpha;

    State nxt = std::move(*next);
    // `next` holds the last evaluated trial, which is the accepted one.
    std::vector<double> s(nxt.x.size()), y(nxt.x.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = nxt.x[i] - cur.x[i];
      y[i] = nxt.grad.work[i] - cur.grad.work[i];
    }
    if (iter % cfg.restart_interval == 0)
      memory.clear();
    else
      memory.push(map, std::move(s), std::move(y));

    const double j_prev = cur.ev.cost.total;
    const double j_new = nxt.ev.cost.total;
    const double dj = std::abs(j_new - j_prev) / std::max(std::abs(j_prev), 1e-30);
    auto rel_change = [](std::span<const double> a, std::span<const double> b,
                         std::span<const double> w) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double wi = w.empty() ? 1.0 : w[i];
        num += wi * (a[i] - b[i]) * (a[i] - b[i]);
        den += wi * b[i] * b[i];
      }
      return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
    };
    const double ds = with_sigma ? rel_change(nxt.sigma.values, cur.sigma.values, model.areas()) : 0.0;
    const double du = rel_change(nxt.U.values, cur.U.values, {});

    cur = std::move(nxt);
    log(cur, iter, ls.alpha);
    if (dj < cfg.tol && ds < cfg.tol && du < cfg.tol) {
      run.reason = Termination::AllCriteria;
      break;
    }
    if (dj < cfg.tol) {
      run.reason = Termination::CostStagnation;
      break;
    }
  }

  run.sigma = cur.sigma;
  run.U = cur.U;
  if (problem.space == ControlSpace::Reduced)
    run.xi.assign(cur.x.begin(), cur.x.begin() + static_cast<std::ptrdiff_t>(map.n_control()));
  return run;
}

struct SweepRow {
  double beta = 0.0;
  double cost = std::nan("");
  double n_sigma = std::nan("");
  double n_u = std::nan("");
  int iterations = 0;
  std::string status;  // termination reason or error text
};

// One run per beta from identical initial data; a failed run is recorded and
// the sweep continues.
inline std::vector<SweepRow> sweep_beta(const DescentProblem& base, const OptConfig& cfg,
                                        const std::vector<double>& betas) {
  std::vector<SweepRow> rows;
  for (double beta : betas) {
    SweepRow row;
    row.beta = beta;
    try {
      DescentProblem p = base;
      p.objective.beta = beta;
      OptConfig c = cfg;
      c.beta = beta;
      const auto run = run_descent(p, c);
      const auto& f = run.final_row();
      row.cost = f.cost;
      row.n_sigma = f.n_sigma;
      row.n_u = f.n_u;
      row.iterations = f.iter;
      row.status = to_string(run.reason);
    } catch (const Error& e) {
      row.status = std::string("error: ") + e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  const auto p = os.precision();
  os << std::setprecision(17) << "beta,cost,N_sigma,N_U,iterations,status\n";
  for (const auto& r : rows)
    os << r.beta << ',' << r.cost << ',' << r.n_sigma << ',' << r.n_u << ',' << r.iterations << ','
       << r.status << '\n';
  os.precision(p);
}

}  // namespace eitopt
