#pragma once

// Random two-phase realizations and the truncated PCA map sigma = Phi xi + mean.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "eitopt/common.hpp"
#include "eitopt/fem.hpp"
#include "eitopt/gradient.hpp"
#include "eitopt/mesh.hpp"
#include "eitopt/model.hpp"

namespace eitopt {

// splitmix64 stream; uniform() takes the top 53 bits.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

struct RealizationSet {
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> samples;  // one per-element field per realization
  std::vector<int> inclusion_counts;

  std::size_t count() const { return samples.size(); }
};

// Per realization the stream is consumed as: count, then (cx, cy) by rejection
// in the bounding square, then radius, for each inclusion in turn.
inline RealizationSet generate_realizations(const DiskMesh& mesh, std::size_t n_r,
                                            std::uint64_t seed, double sigma_h = 0.2,
                                            double sigma_c = 0.4) {
  if (n_r < 2) throw ConfigError("at least two realizations are required");
  SplitMix64 rng(seed);
  const double r_q = mesh.radius;
  RealizationSet set;
  set.seed = seed;
  for (std::size_t s = 0; s < n_r; ++s) {
    PhantomSpec spec;
    spec.background = sigma_h;
    spec.inclusion_value = sigma_c;
    const int count = 1 + static_cast<int>(rng.uniform() * 7.0);
    for (int i = 0; i < count; ++i) {
      double cx = 0.0;
      double cy = 0.0;
      do {
        cx = r_q * (2.0 * rng.uniform() - 1.0);
        cy = r_q * (2.0 * rng.uniform() - 1.0);
      } while (cx * cx + cy * cy > r_q * r_q);
      const double r = 0.3 * r_q * (1.0 - rng.uniform());
      spec.inclusions.push_back({cx, cy, r});
    }
    set.samples.push_back(rasterize_phantom(mesh, spec, {sigma_h, sigma_c}).values);
    set.inclusion_counts.push_back(count);
  }
  return set;
}

class PcaBasis {
 public:
  PcaBasis() = default;

  // phi holds the retained columns U_i s_i. The orthonormal directions are
  // always recomputed as phi / s so a reloaded basis maps bit-identically.
  PcaBasis(std::vector<double> mean, Eigen::MatrixXd phi, std::vector<double> singular_values,
           std::size_t n_r, std::uint64_t seed, double r_opt)
      : mean_(std::move(mean)),
        phi_(std::move(phi)),
        sing_(std::move(singular_values)),
        n_r_(n_r),
        seed_(seed),
        r_opt_(r_opt) {
    if (static_cast<std::size_t>(phi_.rows()) != mean_.size())
      throw Error("PCA basis: map rows differ from field size");
    if (static_cast<std::size_t>(phi_.cols()) > sing_.size())
      throw Error("PCA basis: more columns than singular values");
    directions_ = phi_;
    for (Eigen::Index i = 0; i < phi_.cols(); ++i) directions_.col(i) /= sing_[i];
  }

  std::size_t n_sigma() const { return mean_.size(); }
  std::size_t n_xi() const { return static_cast<std::size_t>(phi_.cols()); }
  std::size_t rank() const { return sing_.size(); }
  std::size_t n_realizations() const { return n_r_; }
  std::uint64_t seed() const { return seed_; }
  double r_opt() const { return r_opt_; }

  const std::vector<double>& mean() const { return mean_; }
  const Eigen::MatrixXd& phi() const { return phi_; }
  const Eigen::MatrixXd& directions() const { return directions_; }
  const std::vector<double>& singular_values() const { return sing_; }

  // r_v(k) for k = 1..rank.
  std::vector<double> variance_curve() const {
    std::vector<double> cum(sing_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < sing_.size(); ++i) cum[i] = acc += sing_[i] * sing_[i];
    for (double& c : cum) c /= acc;
    return cum;
  }
  double retained_variance() const {
    return n_xi() == 0 ? 0.0 : variance_curve()[n_xi() - 1];
  }

  // Phi xi + mean, without clamping.
  std::vector<double> to_physical_raw(std::span<const double> xi) const {
    check_xi(xi);
    Eigen::VectorXd s = phi_ * Eigen::Map<const Eigen::VectorXd>(xi.data(), xi.size());
    std::vector<double> out(mean_);
    for (std::size_t e = 0; e < out.size(); ++e) out[e] += s[e];
    return out;
  }

  ConductivityField to_physical(std::span<const double> xi, Bounds bounds) const {
    ConductivityField f{to_physical_raw(xi), bounds};
    for (double& v : f.values) v = std::clamp(v, bounds.lower, bounds.upper);
    return f;
  }

  // xi = S^-1 U^T (sigma - mean).
  std::vector<double> to_reduced(std::span<const double> sigma) const {
    if (sigma.size() != n_sigma()) throw Error("to_reduced: field size mismatch");
    Eigen::VectorXd d(sigma.size());
    for (std::size_t e = 0; e < sigma.size(); ++e) d[e] = sigma[e] - mean_[e];
    Eigen::VectorXd xi = directions_.transpose() * d;
    std::vector<double> out(n_xi());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xi[i] / sing_[i];
    return out;
  }

  // Phi^T g for an unweighted (already area-multiplied) per-element gradient.
  std::vector<double> project_gradient(std::span<const double> g) const {
    if (g.size() != n_sigma()) throw Error("project_gradient: field size mismatch");
    Eigen::VectorXd r = phi_.transpose() * Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    return {r.data(), r.data() + r.size()};
  }

 private:
  void check_xi(std::span<const double> xi) const {
    if (xi.size() != n_xi()) throw Error("reduced vector length differs from basis size");
  }

  std::vector<double> mean_;
  Eigen::MatrixXd phi_;
  Eigen::MatrixXd directions_;
  std::vector<double> sing_;
  std::size_t n_r_ = 0;
  std::uint64_t seed_ = 0;
  double r_opt_ = 1.0;
};

// Smallest k with r_v(k) >= r_opt; r_opt = 1 always gives the full rank.
inline std::size_t select_components(const std::vector<double>& curve, double r_opt) {
  if (curve.empty()) return 0;
  if (r_opt >= 1.0) return curve.size();
  for (std::size_t k = 0; k < curve.size(); ++k)
    if (curve[k] >= r_opt) return k + 1;
  return curve.size();
}

// r_opt is a fraction in (0, 1].
inline PcaBasis build_basis(const RealizationSet& set, double r_opt) {
  if (!(r_opt > 0.0 && r_opt <= 1.0)) throw ConfigError("r_opt must lie in (0, 1]");
  const auto n_r = set.count();
  if (n_r < 2) throw ConfigError("at least two realizations are required");
  const auto n = set.samples.front().size();
  std::vector<double> mean(n, 0.0);
  for (const auto& s : set.samples)
    for (std::size_t e = 0; e < n; ++e) mean[e] += s[e];
  for (double& v : mean) v /= static_cast<double>(n_r);

  Eigen::MatrixXd y(n, n_r);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_r - 1));
  for (std::size_t j = 0; j < n_r; ++j)
    for (std::size_t e = 0; e < n; ++e) y(e, j) = (set.samples[j][e] - mean[e]) * scale;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  const double tol = (s.size() ? s[0] : 0.0) * static_cast<double>(std::max(n, n_r)) *
                     std::numeric_limits<double>::epsilon();
  std::vector<double> sing;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > tol && s[i] > 0.0) sing.push_back(s[i]);

  std::vector<double> curve(sing.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < sing.size(); ++i) curve[i] = acc += sing[i] * sing[i];
  for (double& c : curve) c /= acc;
  const auto k = select_components(curve, r_opt);

  Eigen::MatrixXd phi = svd.matrixU().leftCols(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) phi.col(static_cast<Eigen::Index>(i)) *= sing[i];
  return PcaBasis(std::move(mean), std::move(phi), std::move(sing), n_r, set.seed, r_opt);
}

// Header "n_sigma n_xi n_r seed r_opt", then n_sing, mean, singular values and
// phi column by column, one value per line.
inline void save_basis(std::ostream& os, const PcaBasis& b) {
  const auto p = os.precision();
  os << std::setprecision(17);
  os << b.n_sigma() << ' ' << b.n_xi() << ' ' << b.n_realizations() << ' ' << b.seed() << ' '
     << b.r_opt() << '\n';
  os << b.rank() << '\n';
  for (double v : b.mean()) os << v << '\n';
  for (double v : b.singular_values()) os << v << '\n';
  for (Eigen::Index c = 0; c < b.phi().cols(); ++c)
    for (Eigen::Index r = 0; r < b.phi().rows(); ++r) os << b.phi()(r, c) << '\n';
  os.precision(p);
}

inline PcaBasis load_basis(std::istream& is) {
  std::size_t n_sigma = 0, n_xi = 0, n_r = 0, rank = 0;
  std::uint64_t seed = 0;
  double r_opt = 0.0;
  if (!(is >> n_sigma >> n_xi >> n_r >> seed >> r_opt >> rank))
    throw Error("PCA basis file: malformed header");
  if (n_xi > rank) throw Error("PCA basis file: n_xi exceeds the stored rank");
  auto read = [&](std::size_t count, const char* what) {
    std::vector<double> v(count);
    for (auto& x : v) {
      std::string tok;
      if (!(is >> tok)) throw Error(std::string("PCA basis file: truncated ") + what);
      try {
        x = std::stod(tok);
      } catch (const std::exception&) {
        throw Error(std::string("PCA basis file: malformed number in ") + what);
      }
    }
    return v;
  };
  auto mean = read(n_sigma, "mean");
  auto sing = read(rank, "singular values");
  auto flat = read(n_sigma * n_xi, "phi");
  Eigen::MatrixXd phi(n_sigma, n_xi);
  for (std::size_t c = 0; c < n_xi; ++c)
    for (std::size_t r = 0; r < n_sigma; ++r) phi(r, c) = flat[c * n_sigma + r];
  return PcaBasis(std::move(mean), std::move(phi), std::move(sing), n_r, seed, r_opt);
}

// Unweighted discrete sigma-gradient: density times element area.
inline std::vector<double> weighted_gradient(const ForwardModel& model,
                                             std::span<const double> density) {
  auto areas = model.areas();
  std::vector<double> g(density.size());
  for (std::size_t e = 0; e < g.size(); ++e) g[e] = density[e] * areas[e];
  return g;
}

// Kappa test of the reduced gradient along delta_xi, using the unclamped map.
inline KappaReport kappa_test_xi(const ForwardModel& model, const Objective& obj,
                                 const PcaBasis& basis, std::span<const double> xi,
                                 const VoltageVector& U, std::span<const double> delta_xi,
                                 const std::vector<double>& epsilons, double tolerance = 1e-2,
                                 double gradient_scale = 1.0) {
  const ConductivityField sigma{basis.to_physical_raw(xi), {}};
  const auto ev = evaluate(model, obj, sigma, U);
  const auto g = basis.project_gradient(weighted_gradient(model, ev.gradient.d_sigma));
  const double directional = gradient_scale * dot(g, delta_xi);
  auto cost_at = [&](double eps) {
    std::vector<double> x(xi.begin(), xi.end());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += eps * delta_xi[i];
    return evaluate_cost(model, obj, ConductivityField{basis.to_physical_raw(x), {}}, U).total;
  };
  return kappa_test(cost_at, ev.cost.total, directional, epsilons, tolerance);
}

}  // namespace eitopt
