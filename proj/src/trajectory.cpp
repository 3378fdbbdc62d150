#include "pdeco/trajectory.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "pdeco/error.hpp"
#include "pdeco/log.hpp"

namespace pdeco {

void OptimizerConfig::validate() const {
  if (steps < 1) throw ConfigError("optimizer: steps must be positive");
  if (!(step_size >= 0.0)) throw ConfigError("optimizer: step size must be non-negative");
  if (!(filter_radius >= 0.0)) throw ConfigError("optimizer: filter radius must be non-negative");
  if (!(lower < upper)) throw ConfigError("optimizer: projection bounds must satisfy lower < upper");
}

namespace {

// Half-sample symmetric reflection into [0, n).
std::size_t reflect(long i, long n) {
  const long period = 2 * n;
  long r = i % period;
  if (r < 0) r += period;
  return static_cast<std::size_t>(r < n ? r : period - 1 - r);
}

std::vector<double> kernel(double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    w[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace

std::vector<double> gaussian_filter(std::span<const double> field, std::size_t nx, std::size_t ny, double radius) {
  if (field.size() != nx * ny) throw DimensionError("gaussian_filter: field size does not match the grid");
  if (!(radius >= 0.0)) throw ConfigError("gaussian_filter: radius must be non-negative");
  std::vector<double> out(field.begin(), field.end());
  if (radius == 0.0) return out;
  const auto w = kernel(radius);
  const long r = static_cast<long>(w.size() / 2);
  std::vector<double> tmp(field.size());
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      double acc = 0.0;
      for (long k = -r; k <= r; ++k) {
        acc += w[static_cast<std::size_t>(k + r)] * out[iy * nx + reflect(static_cast<long>(ix) + k, static_cast<long>(nx))];
      }
      tmp[iy * nx + ix] = acc;
    }
  }
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      double acc = 0.0;
      for (long k = -r; k <= r; ++k) {
        acc += w[static_cast<std::size_t>(k + r)] * tmp[reflect(static_cast<long>(iy) + k, static_cast<long>(ny)) * nx + ix];
      }
      out[iy * nx + ix] = acc;
    }
  }
  return out;
}

Trajectory run_numerical_opt(const heat::ProblemSpec& spec, const OptimizerConfig& cfg,
                             const heat::InstanceParams& instance) {
  spec.validate();
  cfg.validate();
  Trajectory traj;
  traj.instance = instance;
  traj.spec = spec;
  std::vector<double> rho(spec.nodes(), std::clamp(spec.volume_fraction, cfg.lower, cfg.upper));
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    heat::State state;
    try {
      state = heat::evaluate_state(rho, spec);
    } catch (const SolverError& e) {
      throw SolverError("trajectory (instance seed " + std::to_string(instance.seed) + ") aborted at step " +
                        std::to_string(step) + ": " + e.what());
    }
    if (step < cfg.steps) {
      const auto filtered = gaussian_filter(state.s, spec.nx, spec.ny, cfg.filter_radius);
      for (std::size_t i = 0; i < rho.size(); ++i) {
        rho[i] = std::clamp(rho[i] - cfg.step_size * filtered[i], cfg.lower, cfg.upper);
      }
    }
    traj.records.push_back(std::move(state));
  }
  return traj;
}

std::uint64_t corpus_instance_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 finalizer over (seed, index).
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<Trajectory> generate_corpus(std::size_t count, std::uint64_t seed, std::size_t nx, std::size_t ny,
                                        const OptimizerConfig& cfg, std::size_t threads) {
  std::vector<Trajectory> out(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        const auto params = heat::sample_instance(corpus_instance_seed(seed, i));
        out[i] = run_numerical_opt(heat::build_spec(params, nx, ny), cfg, params);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(threads, count));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

double descent_fraction(const Trajectory& traj) {
  if (traj.records.size() < 2) return 1.0;
  std::size_t ok = 0;
  for (std::size_t i = 1; i < traj.records.size(); ++i) {
    if (traj.records[i].J <= traj.records[i - 1].J) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(traj.records.size() - 1);
}

}  // namespace pdeco
