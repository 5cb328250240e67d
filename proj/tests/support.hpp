#pragma once

#include <cmath>
#include <vector>

#include "eitopt/experiment.hpp"

namespace testing {

using namespace eitopt;

inline ForwardModel small_model(int n_v = 32, double chi_eps = 0.0, double ell = 0.0) {
  return ForwardModel(build_disk_mesh(0.1, n_v), ElectrodeLayout::equispaced(16, 0.12, 0.1),
                      SmoothingConfig{chi_eps, ell});
}

inline ConductivityField phantom_on(const ForwardModel& model) {
  return rasterize_phantom(model.mesh(), PhantomSpec::reference());
}

inline ConductivityField uniform_on(const ForwardModel& model, double value) {
  return ConductivityField{std::vector<double>(model.n_elements(), value), Bounds{}};
}

inline CurrentPattern table_currents() { return ExperimentConfig{}.current_pattern(); }

inline VoltageVector random_zero_sum(SplitMix64& rng, std::size_t m) {
  VoltageVector u(m);
  for (double& v : u) v = 2.0 * rng.uniform() - 1.0;
  return project_U(u);
}

inline std::vector<double> random_field(SplitMix64& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace testing
