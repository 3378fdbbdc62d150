#pragma once

// Design optimization driven by a trained RNO. A numerical solve recalibrates
// the reference whenever the prediction drifts too far from the last ground
// truth; noise injection and a buffer of recent predictions smooth the
// surrogate gradient.

#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "pdeco/checkpoint.hpp"
#include "pdeco/heat_problem.hpp"

namespace pdeco {

enum class HybridMode { hybrid, no_reference, numerical };

std::string to_string(HybridMode mode);
HybridMode hybrid_mode_from_string(const std::string& name);

struct HybridConfig {
  std::size_t steps = 40;          // T
  double step_size = 0.5;          // eta
  std::size_t warm_up = 0;         // no recalibration before this step
  double radius = 0.1;             // r, Dist threshold
  std::size_t buffer_size = 3;     // N2
  std::size_t noise_passes = 4;    // N1
  double noise_fraction = 0.01;    // sigma = fraction * std(design)
  double filter_radius = 1.5;      // Gaussian sigma in grid cells
  std::size_t eval_interval = 20;  // evaluation-only solves in no_reference mode
  HybridMode mode = HybridMode::hybrid;

  void validate() const;
};

struct BufferEntry {
  Tensor solution;  // [N], physical units
  Tensor design;    // [N], the design the solution belongs to
};

/// FIFO of the most recent (solution, design) pairs.
class Buffer {
 public:
  explicit Buffer(std::size_t capacity) : capacity_(capacity) {}

  void push(BufferEntry entry);
  void reset(BufferEntry entry);
  const std::deque<BufferEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::size_t capacity_;
  std::deque<BufferEntry> entries_;
};

/// ||a - b|| / max(||b||, 1e-12).
double dist(std::span<const double> a, std::span<const double> b);

/// Mean of the model prediction over every buffer entry used as reference
/// (phi_j = design_j - design); the reference-free prediction when empty.
Tensor smoothed_prediction(const Tensor& design, const Buffer& buffer, const Checkpoint& model,
                           const Tensor& structural);

/// (1/N1) sum_i grad_design J(u(design + eps_i), design), eps_i ~ N(0, sigma^2),
/// taken in one reverse pass over the summed objective.
Tensor smoothed_gradient(std::span<const double> design, const Buffer& buffer, const Checkpoint& model,
                         const heat::ProblemSpec& spec, const Tensor& structural, std::size_t noise_passes,
                         double noise_fraction, std::mt19937_64& rng);

struct StepRecord {
  std::size_t step = 0;
  std::size_t solver_calls = 0;  // recalibration (or classical) solves so far
  double predicted_J = std::numeric_limits<double>::quiet_NaN();
  double true_J = std::numeric_limits<double>::quiet_NaN();  // NaN unless validated
  std::uint64_t design_hash = 0;
  bool recalibrated = false;
  double dist_before = std::numeric_limits<double>::quiet_NaN();
  double dist_after = std::numeric_limits<double>::quiet_NaN();
};

struct RunLog {
  HybridMode mode = HybridMode::hybrid;
  std::vector<StepRecord> steps;
  std::size_t recalibrations = 0;  // trigger events
  std::size_t evaluations = 0;     // evaluation-only solves, final one included
  std::vector<double> final_design;
  double final_true_J = 0.0;
  // Set when a numerical solve failed; the log then ends at the failing step.
  bool aborted = false;
  std::string error;

  /// Columns: step, solver_calls, predicted_J, true_J (empty when not validated).
  std::string to_csv() const;
};

/// FNV-1a over the bytes of the design values.
std::uint64_t design_hash(std::span<const double> design);

/// Runs T steps from rho = v*. `model` may be null only in numerical mode.
/// Every mode ends with an evaluation solve recorded as the row for step T.
/// A SolverError stops the run and returns the partial log with `aborted` set.
RunLog run_optimization(const Checkpoint* model, const heat::ProblemSpec& spec, const HybridConfig& cfg,
                        std::uint64_t seed);

}  // namespace pdeco
