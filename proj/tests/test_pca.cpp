#include "catch_amalgamated.hpp"

#include <sstream>

#include "support.hpp"

using namespace eitopt;
using namespace testing;
using Catch::Approx;

TEST_CASE("splitmix64 reference stream", "[pca][rng]") {
  SplitMix64 rng(1234567);
  CHECK(rng.next() == 6457827717110365317ULL);
  CHECK(rng.next() == 3203168211198807973ULL);
  CHECK(rng.next() == 9817491932198370423ULL);
  SplitMix64 u(99);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
}

TEST_CASE("realizations are seeded and well formed", "[pca][realizations]") {
  const auto mesh = build_disk_mesh(0.1, 32);
  const auto a = generate_realizations(mesh, 400, 2024);
  const auto b = generate_realizations(mesh, 400, 2024);
  const auto c = generate_realizations(mesh, 400, 2025);
  CHECK(a.samples == b.samples);
  CHECK(a.inclusion_counts == b.inclusion_counts);
  CHECK(a.samples != c.samples);

  double mean = 0.0;
  for (int n : a.inclusion_counts) {
    REQUIRE(n >= 1);
    REQUIRE(n <= 7);
    mean += n;
  }
  mean /= static_cast<double>(a.count());
  CHECK(mean == Approx(4.0).margin(0.2));
  for (const auto& s : a.samples)
    for (double v : s) REQUIRE((v == 0.2 || v == 0.4));
  CHECK_THROWS_AS(generate_realizations(mesh, 1, 1), ConfigError);
}

TEST_CASE("rank-one data give one exact component", "[pca][svd]") {
  // x_j = mean + t_j v with centred t: singular value |v| sqrt(sum t^2 / (N - 1)).
  const std::vector<double> base{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> v{1.0, -2.0, 0.0, 2.0};  // |v| = 3
  const std::vector<double> t{-1.5, -0.5, 0.5, 1.5};
  RealizationSet set;
  for (double tj : t) {
    std::vector<double> x(base);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += tj * v[i];
    set.samples.push_back(x);
  }
  const auto basis = build_basis(set, 0.85);
  REQUIRE(basis.rank() == 1);
  REQUIRE(basis.n_xi() == 1);
  CHECK(basis.singular_values()[0] == Approx(3.0 * std::sqrt(5.0 / 3.0)).epsilon(1e-14));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(basis.mean()[i] == Approx(base[i]).epsilon(1e-15));
    CHECK(std::abs(basis.directions()(static_cast<Eigen::Index>(i), 0)) ==
          Approx(std::abs(v[i]) / 3.0).margin(1e-15));
  }
  // Each sample maps to xi = +-t_j / s and back.
  for (const auto& x : set.samples) {
    const auto xi = basis.to_reduced(x);
    const auto back = basis.to_physical_raw(xi);
    CHECK(max_abs_diff(back, x) <= 1e-14);
  }
  // Degenerate input: all samples equal.
  RealizationSet flat;
  flat.samples.assign(3, base);
  CHECK(build_basis(flat, 0.85).rank() == 0);
  CHECK_THROWS_AS(build_basis(set, 0.0), ConfigError);
  CHECK_THROWS_AS(build_basis(set, 1.5), ConfigError);
}

TEST_CASE("basis properties on realizations", "[pca][basis]") {
  const auto mesh = build_disk_mesh(0.1, 48);
  const auto set = generate_realizations(mesh, 200, 20240601);
  const auto basis = build_basis(set, 0.85);
  const auto& d = basis.directions();

  SECTION("orthonormal directions") {
    const Eigen::MatrixXd g = d.transpose() * d;
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(g.rows(), g.cols());
    CHECK((g - id).cwiseAbs().maxCoeff() <= 1e-10);
  }

  SECTION("variance curve is monotone and selection minimal") {
    const auto curve = basis.variance_curve();
    for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k] >= curve[k - 1]);
    CHECK(curve.back() == Approx(1.0).epsilon(1e-14));
    const auto k = basis.n_xi();
    REQUIRE(k >= 1);
    CHECK(curve[k - 1] >= 0.85);
    if (k > 1) CHECK(curve[k - 2] < 0.85);
    CHECK(basis.retained_variance() == curve[k - 1]);
  }

  SECTION("reduced coordinates round-trip") {
    SplitMix64 rng(47);
    const auto xi = random_field(rng, basis.n_xi(), -2.0, 2.0);
    CHECK(max_abs_diff(basis.to_reduced(basis.to_physical_raw(xi)), xi) <= 1e-10);
  }

  SECTION("full rank reproduces every realization") {
    const auto full = build_basis(set, 1.0);
    CHECK(full.n_xi() == full.rank());
    for (std::size_t j = 0; j < set.count(); j += 17) {
      const auto back = full.to_physical_raw(full.to_reduced(set.samples[j]));
      CHECK(max_abs_diff(back, set.samples[j]) <= 1e-10);
    }
  }

  SECTION("clamped map respects bounds") {
    std::vector<double> xi(basis.n_xi(), 50.0);
    const auto f = basis.to_physical(xi, Bounds{0.1, 0.6});
    for (double v : f.values) CHECK((v >= 0.1 && v <= 0.6));
  }

  SECTION("projected gradient is the chain rule") {
    SplitMix64 rng(53);
    const auto g = random_field(rng, basis.n_sigma(), -1.0, 1.0);
    const auto xi = random_field(rng, basis.n_xi(), -1.0, 1.0);
    const auto pg = basis.project_gradient(g);
    // d/dt <g, Phi (xi + t e_i) + mean> = (Phi^T g)_i
    for (std::size_t i = 0; i < basis.n_xi(); i += 5) {
      auto up = xi;
      up[i] += 1.0;
      const double diff = dot(g, basis.to_physical_raw(up)) - dot(g, basis.to_physical_raw(xi));
      CHECK(pg[i] == Approx(diff).margin(1e-10));
    }
  }

  SECTION("size mismatches are rejected") {
    CHECK_THROWS_AS(basis.to_reduced(std::vector<double>(3)), Error);
    CHECK_THROWS_AS(basis.to_physical_raw(std::vector<double>(basis.n_xi() + 1)), Error);
  }
}

TEST_CASE("component selection", "[pca][select]") {
  const std::vector<double> curve{0.5, 0.8, 0.85, 0.95, 1.0};
  CHECK(select_components(curve, 0.85) == 3);
  CHECK(select_components(curve, 0.5) == 1);
  CHECK(select_components(curve, 0.9) == 4);
  CHECK(select_components(curve, 1.0) == 5);
  CHECK(select_components({}, 0.5) == 0);
}

TEST_CASE("saved bases reload bit-identically", "[pca][io]") {
  const auto mesh = build_disk_mesh(0.1, 32);
  const auto basis = build_basis(generate_realizations(mesh, 60, 9), 0.9);
  std::stringstream ss;
  save_basis(ss, basis);
  const auto text = ss.str();
  const auto back = load_basis(ss);
  CHECK(back.n_xi() == basis.n_xi());
  CHECK(back.seed() == 9);
  CHECK(back.n_realizations() == 60);
  CHECK(back.mean() == basis.mean());
  CHECK(back.singular_values() == basis.singular_values());
  CHECK(back.phi() == basis.phi());
  CHECK(back.directions() == basis.directions());
  std::vector<double> xi(basis.n_xi(), 0.3);
  CHECK(back.to_physical_raw(xi) == basis.to_physical_raw(xi));
  std::stringstream again;
  save_basis(again, back);
  CHECK(again.str() == text);

  std::stringstream truncated(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(load_basis(truncated), Error);
}

TEST_CASE("reduced-space gradient passes the kappa test", "[pca][kappa]") {
  const auto model = small_model(32);
  const auto basis = build_basis(generate_realizations(model.mesh(), 80, 3), 0.85);
  SplitMix64 rng(59);
  const auto u_star = random_zero_sum(rng, 16);
  const auto U = random_zero_sum(rng, 16);
  const auto obj = Objective::problem_J(table_currents(), u_star, 0.0);
  const auto xi = basis.to_reduced(std::vector<double>(model.n_elements(), 0.3));
  const auto dxi = random_field(rng, basis.n_xi(), -0.5, 0.5);
  const auto rep = kappa_test_xi(model, obj, basis, xi, U, dxi, decade_epsilons());
  CHECK(rep.plateau_span >= 6);
  const auto bad = kappa_test_xi(model, obj, basis, xi, U, dxi, decade_epsilons(), 1e-2, -1.0);
  CHECK(bad.plateau_span == 0);
}
