#pragma once

// Trajectory store on disk, trajectory-level train/test split, and reference
// pairing within a trajectory.
//
// Store layout (one directory):
//   manifest.json        written last; its presence marks a complete store
//   traj_NNNN.bin        "PDET", u32 version, then per record the f64 arrays
//                        rho[N], T[N], s[N] and the scalar J, little-endian

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdeco/trajectory.hpp"

namespace pdeco {

inline constexpr std::uint32_t kStoreVersion = 1;

struct StoreManifest {
  std::uint32_t version = kStoreVersion;
  std::string problem = "heat_compliance";
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t num_traj = 0;
  std::size_t steps = 0;  // records per trajectory = steps + 1
  std::vector<std::string> files;
};

/// Trajectory file bytes for `traj`.
std::string encode_trajectory(const Trajectory& traj);
/// Inverse of encode_trajectory; `traj` supplies the spec and receives records.
/// Truncation raises a FormatError naming the first incomplete record.
void decode_trajectory(std::string_view bytes, std::size_t records, Trajectory& traj);

/// Writes every trajectory file, then the manifest. All trajectories must
/// share grid and step count.
StoreManifest save_store(const std::filesystem::path& dir, const std::vector<Trajectory>& trajectories,
                         const OptimizerConfig& optimizer = {});
/// PathError when the directory has no manifest.
std::vector<Trajectory> load_store(const std::filesystem::path& dir, StoreManifest* manifest = nullptr);

/// Disjoint, exhaustive, sorted id lists; deterministic in seed.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_trajectory(std::size_t num_traj, double ratio,
                                                                                    std::uint64_t seed);

struct PairingConfig {
  std::size_t window = 2;         // d
  double threshold = 0.5;         // d_r, relative l2 of u
  double drop_probability = 0.3;  // p_drop

  void validate() const;
};

/// Indices of a training sample: query step and optional reference step.
struct TrainingSample {
  std::size_t step = 0;
  std::optional<std::size_t> reference;

  bool has_ref() const { return reference.has_value(); }
};

/// ||a - b|| / max(||b||, 1e-12).
double relative_l2(std::span<const double> a, std::span<const double> b);

/// Steps j within the window of i whose solution differs from step i by less than d_r.
std::vector<std::size_t> reference_candidates(const Trajectory& traj, std::size_t i, const PairingConfig& cfg);
/// Uniform choice among the candidates, then dropout with probability p_drop.
TrainingSample pair_reference(const Trajectory& traj, std::size_t i, const PairingConfig& cfg, std::mt19937_64& rng);

}  // namespace pdeco
