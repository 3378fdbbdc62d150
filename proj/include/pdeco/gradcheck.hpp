#pragma once

// Derivative verification: finite-difference utilities and the on-demand
// check suite behind `pdeco gradcheck`.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pdeco/tensor.hpp"

namespace pdeco::check {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  std::size_t random_graphs = 25;
  /// Test hook: name of an analytic derivative to perturb before comparison.
  std::string corrupt;
};

/// ||a - b||_2 / max(||b||_2, 1e-12).
double relative_error(std::span<const double> a, std::span<const double> b);

/// Central differences of a scalar function, step h per coordinate.
std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                                double h);

/// Jacobian d vec(f(x)) / d vec(x) by one reverse pass per output element.
Tensor autodiff_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x);

/// A random differentiable composite of up to `depth` operations on inputs
/// of at most `max_size` entries per axis. `smooth` excludes ops with kinks.
struct RandomGraph {
  Shape x_shape;
  Shape y_shape;
  std::function<Tensor(const Tensor& x, const Tensor& y)> build;  // scalar root
  std::vector<std::string> ops;
};

RandomGraph random_graph(std::mt19937_64& rng, std::size_t depth, std::size_t max_size, bool smooth);

/// Runs every check; results in a fixed order.
std::vector<CheckResult> run_suite(const SuiteOptions& options);

}  // namespace pdeco::check
