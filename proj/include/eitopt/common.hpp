#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace eitopt {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// Error hierarchy. Each category maps to a distinct CLI exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct SolverError : Error {
  SolverError(const std::string& what, int iterations, double residual)
      : Error(what), iterations(iterations), residual(residual) {}
  int iterations;
  double residual;
};
struct OptimizerError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double sum(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v;
  return s;
}

// Fixed-size vector indexed by electrode. The tag keeps voltages and currents
// from being mixed up at call sites.
template <class Tag>
struct ElectrodeVector {
  std::vector<double> values;

  ElectrodeVector() = default;
  explicit ElectrodeVector(std::size_t m, double fill = 0.0) : values(m, fill) {}
  explicit ElectrodeVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  auto begin() { return values.begin(); }
  auto end() { return values.end(); }
  auto begin() const { return values.begin(); }
  auto end() const { return values.end(); }
  std::span<const double> span() const { return values; }

  double total() const { return eitopt::sum(values); }
  double norm() const { return norm2(values); }

  // Sum-to-zero constraint within 1e-10 * max(1, |v|).
  bool is_zero_sum(double rel = 1e-10) const {
    return std::abs(total()) <= rel * std::max(1.0, norm());
  }

  friend bool operator==(const ElectrodeVector&, const ElectrodeVector&) = default;
};

struct VoltageTag {};
struct CurrentTag {};
using VoltageVector = ElectrodeVector<VoltageTag>;
using CurrentPattern = ElectrodeVector<CurrentTag>;

struct Bounds {
  double lower = 0.1;  // mu
  double upper = 0.6;  // R
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

// Piecewise-constant (one value per triangle) conductivity.
struct ConductivityField {
  std::vector<double> values;
  Bounds bounds{};

  std::size_t size() const { return values.size(); }
  bool within_bounds() const {
    return std::all_of(values.begin(), values.end(), [&](double s) {
      return s >= bounds.lower && s <= bounds.upper;
    });
  }
};

// Worker count for independent solves; EIT_OPT_THREADS caps it.
inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("EIT_OPT_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

// Runs fn(i) for i in [0, n). Callers write results into slot i and reduce
// afterwards in index order, so output does not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned workers = std::min<std::size_t>(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace eitopt
