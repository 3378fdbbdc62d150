#pragma once

// Optimization-oriented RNO training: relative-l2 data loss plus an optional
// sensitivity loss on the autodiff gradient of the predicted objective.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pdeco/dataset.hpp"
#include "pdeco/rno.hpp"

namespace pdeco {

enum class SensForm { raw, cosine };

std::string to_string(SensForm form);
SensForm sens_form_from_string(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  bool cosine_schedule = true;  // decay to zero over all steps, else constant
  double alpha = 0.1;
  SensForm sens_form = SensForm::cosine;
  PairingConfig pairing{};  // p_drop = 0.3 by default
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // evaluation workers

  void validate() const;
};

struct Metrics {
  double solution_error = 0.0;     // mean relative l2 of T
  double sensitivity_error = 0.0;  // mean ||s_pred/|s_pred| - s/|s|||
  double objective_error = 0.0;    // mean |J_pred - J| / |J|
  std::size_t samples = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  RnoConfig config;
  RnoParams params;  // best test loss
  std::size_t best_epoch = 0;
  std::vector<EpochStats> curve;
  Metrics with_reference;
  Metrics without_reference;
};

/// Mean over channels of ||pred_c - u_c|| / ||u_c||; absolute norm when ||u_c|| < 1e-12.
Tensor data_loss(const Tensor& pred, const Tensor& target);
/// raw: ||p - t|| / ||t||. cosine: ||p/|p| - t/|t|||; DegenerateInputError on a zero norm.
Tensor sensitivity_loss(const Tensor& pred, const Tensor& truth, SensForm form);

/// Solution RMS and source maximum over the given trajectories.
void fit_normalization(RnoConfig& cfg, const std::vector<Trajectory>& trajectories,
                       const std::vector<std::size_t>& ids);

/// Query for step `sample.step`, with the reference step if present.
Query make_query(const Trajectory& traj, const TrainingSample& sample, const RnoConfig& cfg);

/// Loss of one sample: data loss, plus alpha times the sensitivity loss when alpha > 0.
Tensor sample_loss(const Trajectory& traj, const TrainingSample& sample, const RnoParams& params,
                   const RnoConfig& cfg, double alpha, SensForm form);

/// Deterministic reference for evaluation: the training pairing rule
/// (self-reference included) without dropout, seeded per (seed, step).
TrainingSample evaluation_sample(const Trajectory& traj, std::size_t step, const PairingConfig& pairing,
                                 std::uint64_t seed);

Metrics evaluate(const std::vector<Trajectory>& trajectories, const std::vector<std::size_t>& ids,
                 const RnoParams& params, const RnoConfig& cfg, bool with_reference,
                 const PairingConfig& pairing = {}, std::size_t threads = 1);

/// Trains from `init` (or a fresh seed-initialized model). Normalization is
/// fitted on `train_ids` unless `init` is given. Throws DivergenceError on a
/// non-finite loss.
TrainResult train(const std::vector<Trajectory>& trajectories, const std::vector<std::size_t>& train_ids,
                  const std::vector<std::size_t>& test_ids, RnoConfig model, const TrainConfig& cfg,
                  const std::optional<RnoParams>& init = std::nullopt);

/// Deep copy of every tensor as a fresh trainable leaf.
RnoParams clone_params(const RnoParams& p);

}  // namespace pdeco
