#pragma once

// Steady heat conduction topology optimization on a uniform node grid.
//
//   -div(k(rho) grad T) = f,   T = 0 on the sink nodes,
//   k(rho) = k_min + rho^p (k_max - k_min),
//
// discretized with the 5-point stencil and harmonic averaging of node
// conductivities on each edge. The objective is thermal compliance plus a
// quadratic penalty on exceeding the volume fraction target.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/SparseCore>

#include "pdeco/tensor.hpp"

namespace pdeco::heat {

/// Randomized layout of one problem instance; enough to rebuild the spec.
struct InstanceParams {
  std::uint64_t seed = 0;
  double source_x = 0.5;        // blob centre, unit-square coordinates
  double source_y = 0.5;
  double source_width = 0.1;    // Gaussian standard deviation
  double source_strength = 10.0;
  double background = 1.0;      // uniform heat generation
  int sink_side = 0;            // 0 left, 1 right, 2 bottom, 3 top
  double sink_start = 0.3;      // fraction along the side
  double sink_length = 0.4;
  double volume_fraction = 0.4;
};

struct ProblemSpec {
  std::size_t nx = 32;
  std::size_t ny = 32;
  double k_min = 1e-3;
  double k_max = 1.0;
  double simp_exponent = 3.0;
  double volume_fraction = 0.4;   // v*
  double volume_weight = 500.0;   // mu
  std::vector<double> source;     // f per node, row-major (y major, x minor)
  std::vector<std::uint8_t> sink; // 1 on Dirichlet nodes

  std::size_t nodes() const { return nx * ny; }
  /// Uniform grid spacing; the longer side spans [0, 1].
  double spacing() const;
  double cell_area() const { return spacing() * spacing(); }
  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Spec with the layout described by `params`.
ProblemSpec build_spec(const InstanceParams& params, std::size_t nx = 32, std::size_t ny = 32);
/// Draws a random instance; deterministic in `seed`.
InstanceParams sample_instance(std::uint64_t seed);
ProblemSpec instance_sampler(std::uint64_t seed, std::size_t nx = 32, std::size_t ny = 32);

struct State {
  std::vector<double> rho;  // design densities in [0, 1]
  std::vector<double> T;    // temperature
  std::vector<double> s;    // dJ/drho
  double J = 0.0;
};

struct SolveStats {
  long iterations = 0;
  double relative_residual = 0.0;
};

double conductivity(double rho, const ProblemSpec& spec);

/// Full stiffness matrix over all nodes (sink rows included, no elimination).
Eigen::SparseMatrix<double> stiffness_matrix(std::span<const double> rho, const ProblemSpec& spec);

/// Temperature for the given densities; Jacobi-preconditioned CG to a relative
/// residual of 1e-10. Throws SolverError on non-convergence.
std::vector<double> solve(std::span<const double> rho, const ProblemSpec& spec, SolveStats* stats = nullptr);

/// J = cell_area * sum f T + mu * max(0, mean(rho) - v*)^2.
double objective(std::span<const double> T, std::span<const double> rho, const ProblemSpec& spec);
/// Differentiable form of the same formula; T and rho are [N] or [N, 1].
Tensor objective(const Tensor& T, const Tensor& rho, const ProblemSpec& spec);

/// dJ/drho including the implicit dependence of T, via one adjoint solve.
std::vector<double> adjoint_sensitivity(std::span<const double> rho, std::span<const double> T,
                                        const ProblemSpec& spec);

/// Solve, objective and sensitivity at `rho`.
State evaluate_state(std::span<const double> rho, const ProblemSpec& spec);

/// Structural input channels per node: x, y, f / source_scale, sink mask. Shape [N, 4].
Tensor structural_channels(const ProblemSpec& spec, double source_scale);

}  // namespace pdeco::heat
