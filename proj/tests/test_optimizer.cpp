#include "catch_amalgamated.hpp"

#include <sstream>

#include "support.hpp"

using namespace eitopt;
using namespace testing;
using Catch::Approx;

namespace {

void check_invariants(const RunRecord& run, Bounds b) {
  REQUIRE_FALSE(run.rows.empty());
  for (std::size_t i = 0; i < run.rows.size(); ++i) {
    const auto& r = run.rows[i];
    CHECK(std::abs(r.u_sum) <= 1e-13);
    CHECK(r.sigma_min >= b.lower);
    CHECK(r.sigma_max <= b.upper);
    if (i > 0) CHECK(r.cost <= run.rows[i - 1].cost);
  }
}

struct Fixture {
  ForwardModel model = small_model(32);
  ConductivityField truth = phantom_on(model);
  VoltageVector u_star;
  VoltageVector u_ini;

  Fixture() {
    SplitMix64 rng(61);
    u_star = random_zero_sum(rng, 16);
    u_ini = random_zero_sum(rng, 16);
  }

  DescentProblem physical(Objective obj) const {
    DescentProblem p;
    p.model = &model;
    p.objective = std::move(obj);
    p.space = ControlSpace::Physical;
    p.sigma0 = uniform_on(model, 0.3);
    p.u0 = u_ini;
    p.sigma_reference = truth.values;
    p.u_reference = u_star;
    return p;
  }
};

}  // namespace

TEST_CASE("armijo line search on a quadratic", "[optimizer][linesearch]") {
  // f(x) = x^2 at x = 1 with d = f'(1) = 2: alpha = 1 overshoots to f = 1,
  // alpha = 1/2 lands on the minimum.
  auto f = [](double a) { return (1.0 - 2.0 * a) * (1.0 - 2.0 * a); };
  const auto r = line_search(f, 1.0, 4.0, 1.0);
  CHECK(r.accepted);
  CHECK(r.alpha == 0.5);
  CHECK(r.cost == 0.0);
  CHECK(r.trials == 2);

  CHECK_THROWS_AS(line_search(f, 1.0, -4.0, 1.0), OptimizerError);
  CHECK_THROWS_AS(line_search([](double) { return 2.0; }, 1.0, 4.0, 1.0), OptimizerError);
}

TEST_CASE("projections", "[optimizer][projection]") {
  const VoltageVector u(std::vector<double>{1.0, 2.0, 6.0});
  const auto p = project_U(u);
  CHECK(p.values == std::vector<double>{-2.0, -1.0, 3.0});
  CHECK(project_U(p) == p);

  ConductivityField s{{0.05, 0.3, 0.9}, {}};
  const auto c = project_sigma(s, Bounds{0.1, 0.6});
  CHECK(c.values == std::vector<double>{0.1, 0.3, 0.6});
  CHECK(c.within_bounds());
}

TEST_CASE("configuration validation", "[optimizer][config]") {
  OptConfig c;
  CHECK_NOTHROW(c.validate());
  c.restart_interval = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.bounds = {0.6, 0.1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.armijo.c1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.tol = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("problem I converges from any start", "[optimizer][stage1]") {
  const Fixture f;
  const auto I = electrode_currents(f.model, solve_state(f.model, f.truth, f.u_star), f.u_star);
  OptConfig cfg;
  cfg.n_max = 200;
  SplitMix64 rng(67);
  for (int trial = 0; trial < 3; ++trial) {
    DescentProblem p;
    p.model = &f.model;
    p.objective = Objective::problem_I(I);
    p.space = ControlSpace::Voltage;
    p.sigma0 = f.truth;
    p.u0 = random_zero_sum(rng, 16);
    const auto run = run_descent(p, cfg);
    check_invariants(run, cfg.bounds);
    for (std::size_t l = 0; l < 16; ++l) CHECK(run.U[l] == Approx(f.u_star[l]).margin(1e-6));
    CHECK(run.final_row().cost <= 1e-12 * run.rows.front().cost);
  }
}

TEST_CASE("problem I with uniform conductivity still converges", "[optimizer][stage1]") {
  const Fixture f;
  DescentProblem p;
  p.model = &f.model;
  p.objective = Objective::problem_I(table_currents());
  p.space = ControlSpace::Voltage;
  p.sigma0 = uniform_on(f.model, 0.2);
  p.u0 = f.u_ini;
  OptConfig cfg;
  cfg.n_max = 200;
  const auto run = run_descent(p, cfg);
  const auto i = electrode_currents(f.model, solve_state(f.model, p.sigma0, run.U), run.U);
  for (std::size_t l = 0; l < 16; ++l) CHECK(i[l] == Approx(table_currents()[l]).margin(1e-6));
}

TEST_CASE("physical-space descent keeps iterates feasible", "[optimizer][invariants]") {
  const Fixture f;
  const auto I = electrode_currents(f.model, solve_state(f.model, f.truth, f.u_star), f.u_star);
  const auto p = f.physical(Objective::problem_J(I, f.u_star, 0.0));
  for (int memory : {0, 5}) {
    OptConfig cfg;
    cfg.n_max = 30;
    cfg.lbfgs_memory = memory;
    const auto run = run_descent(p, cfg);
    check_invariants(run, cfg.bounds);
    CHECK(run.final_row().cost < 1e-2 * run.rows.front().cost);
    CHECK(run.rows.size() == static_cast<std::size_t>(run.iterations()) + 1);
    CHECK(std::isfinite(run.final_row().n_sigma));
  }
}

TEST_CASE("restart every iteration is steepest descent", "[optimizer][lbfgs]") {
  const Fixture f;
  const auto I = electrode_currents(f.model, solve_state(f.model, f.truth, f.u_star), f.u_star);
  const auto p = f.physical(Objective::problem_J(I, f.u_star, 0.1));
  OptConfig steepest;
  steepest.n_max = 15;
  steepest.lbfgs_memory = 0;
  OptConfig restarted = steepest;
  restarted.lbfgs_memory = 10;
  restarted.restart_interval = 1;
  const auto a = run_descent(p, steepest);
  const auto b = run_descent(p, restarted);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].cost == b.rows[i].cost);
    CHECK(a.rows[i].alpha == b.rows[i].alpha);
  }
  CHECK(a.sigma.values == b.sigma.values);

  // With memory the trace differs.
  OptConfig lbfgs = steepest;
  lbfgs.lbfgs_memory = 5;
  lbfgs.restart_interval = 100;
  const auto c = run_descent(p, lbfgs);
  CHECK(c.rows.back().cost != a.rows.back().cost);
}

TEST_CASE("sobolev knob", "[optimizer][sobolev]") {
  const Fixture f;
  const auto I = electrode_currents(f.model, solve_state(f.model, f.truth, f.u_star), f.u_star);
  const auto p = f.physical(Objective::problem_J(I, f.u_star, 0.0));
  OptConfig cfg;
  cfg.n_max = 8;
  const auto plain = run_descent(p, cfg);
  const auto again = run_descent(p, cfg);
  CHECK(plain.sigma.values == again.sigma.values);

  const auto smooth_model = small_model(32, 0.0, 1e-4);
  auto ps = p;
  ps.model = &smooth_model;
  OptConfig sc = cfg;
  sc.sobolev_ell = 1e-4;
  const auto smooth = run_descent(ps, sc);
  check_invariants(smooth, sc.bounds);
  CHECK(smooth.final_row().cost < smooth.rows.front().cost);
  CHECK(smooth.sigma.values != plain.sigma.values);
}

TEST_CASE("reduced-space descent", "[optimizer][pca]") {
  const Fixture f;
  const auto basis = build_basis(generate_realizations(f.model.mesh(), 100, 5), 0.85);
  const auto data = synthesize_rotation_data(f.model, f.truth, f.u_star);
  auto p = f.physical(Objective::problem_K(data, 0.3162));
  p.space = ControlSpace::Reduced;
  p.basis = &basis;
  OptConfig cfg;
  cfg.n_max = 20;
  const auto run = run_descent(p, cfg);
  check_invariants(run, cfg.bounds);
  CHECK(run.xi.size() == basis.n_xi());
  CHECK(run.final_row().cost < 1e-2 * run.rows.front().cost);

  p.basis = nullptr;
  CHECK_THROWS_AS(run_descent(p, cfg), OptimizerError);
}

TEST_CASE("termination and logging", "[optimizer][termination]") {
  const Fixture f;
  const auto I = electrode_currents(f.model, solve_state(f.model, f.truth, f.u_star), f.u_star);
  auto p = f.physical(Objective::problem_J(I, f.u_star, 0.0));

  OptConfig none;
  none.n_max = 0;
  const auto zero = run_descent(p, none);
  CHECK(zero.rows.size() == 1);
  CHECK(zero.reason == Termination::MaxIterations);

  OptConfig loose;
  loose.tol = 0.5;
  const auto stopped = run_descent(p, loose);
  CHECK((stopped.reason == Termination::CostStagnation || stopped.reason == Termination::AllCriteria));

  std::ostringstream os;
  write_run_csv(os, stopped);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "iter,cost,mismatch,reg,N_sigma,N_U,alpha,gnorm_sigma,gnorm_U");
  int lines = 0;
  for (std::string line; std::getline(is, line);) ++lines;
  CHECK(lines == static_cast<int>(stopped.rows.size()));
  CHECK(std::string(to_string(Termination::LineSearchFailed)) == "line-search-failed");

  p.model = nullptr;
  CHECK_THROWS_AS(run_descent(p, loose), OptimizerError);
}

TEST_CASE("beta sweep", "[optimizer][sweep]") {
  const Fixture f;
  const auto data = synthesize_rotation_data(f.model, f.truth, f.u_star);
  const auto p = f.physical(Objective::problem_K(data, 0.0));
  OptConfig cfg;
  cfg.n_max = 5;
  const std::vector<double> grid{0.0, 1e-2, 1e4};
  const auto rows = sweep_beta(p, cfg, grid);
  REQUIRE(rows.size() == grid.size());
  const auto direct = run_descent(p, cfg);
  CHECK(rows[0].cost == direct.final_row().cost);
  CHECK(rows[0].n_sigma == direct.final_row().n_sigma);
  for (const auto& r : rows) CHECK(r.status.rfind("error", 0) != 0);

  std::ostringstream os;
  write_sweep_csv(os, rows);
  CHECK(os.str().rfind("beta,cost,N_sigma,N_U,iterations,status\n", 0) == 0);
}
