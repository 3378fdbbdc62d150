#pragma once

// Classical projected-gradient optimizer on heat instances. Its iterates form
// the training corpus.

#include <cstdint>
#include <span>
#include <vector>

#include "pdeco/heat_problem.hpp"

namespace pdeco {

struct OptimizerConfig {
  std::size_t steps = 12;
  double step_size = 0.5;      // eta
  double filter_radius = 1.5;  // Gaussian sigma in grid cells
  double lower = 0.0;
  double upper = 1.0;

  void validate() const;
};

struct Trajectory {
  heat::InstanceParams instance;
  heat::ProblemSpec spec;
  std::vector<heat::State> records;  // steps + 1 entries, the initial state first
};

/// Separable Gaussian smoothing on the nx x ny node grid. The kernel is
/// truncated at ceil(3 r_f) cells and mirrored at the edges, so each row of the
/// filter sums to one and the field mean is preserved. r_f = 0 is the identity.
std::vector<double> gaussian_filter(std::span<const double> field, std::size_t nx, std::size_t ny, double radius);

/// PGD from rho = v*: solve, adjoint, filter, rho <- clip(rho - eta s_f).
/// Records hold the unfiltered sensitivity.
Trajectory run_numerical_opt(const heat::ProblemSpec& spec, const OptimizerConfig& cfg,
                             const heat::InstanceParams& instance = {});

/// Seed of the i-th instance of a corpus drawn with `seed`.
std::uint64_t corpus_instance_seed(std::uint64_t seed, std::size_t index);

/// `count` trajectories on independent instances, generated on up to `threads`
/// workers. The result does not depend on the thread count.
std::vector<Trajectory> generate_corpus(std::size_t count, std::uint64_t seed, std::size_t nx, std::size_t ny,
                                        const OptimizerConfig& cfg, std::size_t threads);

/// Fraction of consecutive record pairs with J non-increasing.
double descent_fraction(const Trajectory& traj);

}  // namespace pdeco
