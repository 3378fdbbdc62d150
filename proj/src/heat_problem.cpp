#include "pdeco/heat_problem.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <algorithm>
#include <cmath>
#include <random>

#include "pdeco/error.hpp"

namespace pdeco::heat {

double ProblemSpec::spacing() const {
  const std::size_t longest = std::max(nx, ny);
  return longest > 1 ? 1.0 / static_cast<double>(longest - 1) : 1.0;
}

void ProblemSpec::validate() const {
  if (nx < 1 || ny < 1 || nodes() < 2) throw ConfigError("heat: grid needs at least two nodes");
  if (!(k_min > 0.0 && k_min < k_max)) throw ConfigError("heat: require 0 < k_min < k_max");
  if (!(simp_exponent >= 1.0)) throw ConfigError("heat: SIMP exponent must be >= 1");
  if (!(volume_fraction > 0.0 && volume_fraction < 1.0)) throw ConfigError("heat: volume fraction must lie in (0, 1)");
  if (!(volume_weight >= 0.0)) throw ConfigError("heat: volume weight must be non-negative");
  if (source.size() != nodes()) throw ConfigError("heat: source layout size does not match the grid");
  if (sink.size() != nodes()) throw ConfigError("heat: sink mask size does not match the grid");
  if (std::none_of(sink.begin(), sink.end(), [](std::uint8_t v) { return v != 0; })) {
    throw ConfigError("heat: the sink set must be nonempty");
  }
}

InstanceParams sample_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  InstanceParams p;
  p.seed = seed;
  p.volume_fraction = uniform(0.3, 0.5);
  p.source_x = uniform(0.2, 0.8);
  p.source_y = uniform(0.2, 0.8);
  p.source_width = uniform(0.06, 0.15);
  p.source_strength = uniform(5.0, 20.0);
  p.background = 1.0;
  p.sink_side = std::uniform_int_distribution<int>(0, 3)(rng);
  p.sink_length = uniform(0.2, 0.4);
  p.sink_start = uniform(0.0, 1.0 - p.sink_length);
  return p;
}

ProblemSpec build_spec(const InstanceParams& params, std::size_t nx, std::size_t ny) {
  ProblemSpec spec;
  spec.nx = nx;
  spec.ny = ny;
  spec.volume_fraction = params.volume_fraction;
  const double h = spec.spacing();
  spec.source.resize(spec.nodes());
  spec.sink.assign(spec.nodes(), 0);
  const double two_w2 = 2.0 * params.source_width * params.source_width;
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double dx = static_cast<double>(ix) * h - params.source_x;
      const double dy = static_cast<double>(iy) * h - params.source_y;
      spec.source[iy * nx + ix] = params.background + params.source_strength * std::exp(-(dx * dx + dy * dy) / two_w2);
    }
  }
  // Sink: nodes of one side whose normalized position falls in the segment.
  const bool vertical_side = params.sink_side == 0 || params.sink_side == 1;
  const std::size_t count = vertical_side ? ny : nx;
  auto node_on_side = [&](std::size_t t) {
    switch (params.sink_side) {
      case 0: return t * nx;
      case 1: return t * nx + (nx - 1);
      case 2: return t;
      default: return (ny - 1) * nx + t;
    }
  };
  bool any = false;
  for (std::size_t t = 0; t < count; ++t) {
    const double pos = count > 1 ? static_cast<double>(t) / static_cast<double>(count - 1) : 0.0;
    if (pos >= params.sink_start && pos <= params.sink_start + params.sink_length) {
      spec.sink[node_on_side(t)] = 1;
      any = true;
    }
  }
  if (!any) {
    const double centre = params.sink_start + 0.5 * params.sink_length;
    const auto t = static_cast<std::size_t>(std::lround(centre * static_cast<double>(count - 1)));
    spec.sink[node_on_side(std::min(t, count - 1))] = 1;
  }
  spec.validate();
  return spec;
}

ProblemSpec instance_sampler(std::uint64_t seed, std::size_t nx, std::size_t ny) {
  return build_spec(sample_instance(seed), nx, ny);
}

double conductivity(double rho, const ProblemSpec& spec) {
  return spec.k_min + std::pow(rho, spec.simp_exponent) * (spec.k_max - spec.k_min);
}

namespace {

struct Edge {
  std::size_t a, b;
};

std::vector<Edge> grid_edges(const ProblemSpec& spec) {
  std::vector<Edge> edges;
  edges.reserve(2 * spec.nodes());
  for (std::size_t iy = 0; iy < spec.ny; ++iy) {
    for (std::size_t ix = 0; ix < spec.nx; ++ix) {
      const std::size_t i = iy * spec.nx + ix;
      if (ix + 1 < spec.nx) edges.push_back({i, i + 1});
      if (iy + 1 < spec.ny) edges.push_back({i, i + spec.nx});
    }
  }
  return edges;
}

double harmonic(double ka, double kb) { return 2.0 * ka * kb / (ka + kb); }

void check_design(std::span<const double> rho, const ProblemSpec& spec) {
  if (rho.size() != spec.nodes()) throw DimensionError("heat: design size does not match the grid");
  for (double v : rho) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("heat: densities must lie in [0, 1]");
  }
}

// Stiffness restricted to free nodes; `index` maps node -> free index or -1.
Eigen::SparseMatrix<double> free_stiffness(std::span<const double> rho, const ProblemSpec& spec,
                                           const std::vector<long>& index, long free_count) {
  const double inv_h2 = 1.0 / spec.cell_area();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(5 * spec.nodes());
  for (const auto& e : grid_edges(spec)) {
    const double c = harmonic(conductivity(rho[e.a], spec), conductivity(rho[e.b], spec)) * inv_h2;
    const long ia = index[e.a], ib = index[e.b];
    if (ia >= 0) triplets.emplace_back(ia, ia, c);
    if (ib >= 0) triplets.emplace_back(ib, ib, c);
    if (ia >= 0 && ib >= 0) {
      triplets.emplace_back(ia, ib, -c);
      triplets.emplace_back(ib, ia, -c);
    }
  }
  Eigen::SparseMatrix<double> k(free_count, free_count);
  k.setFromTriplets(triplets.begin(), triplets.end());
  return k;
}

// Solves K_ff x = rhs_free and scatters the result to all nodes (zeros on sinks).
std::vector<double> solve_free(std::span<const double> rho, const ProblemSpec& spec,
                               std::span<const double> rhs, SolveStats* stats) {
  std::vector<long> index(spec.nodes(), -1);
  long free_count = 0;
  for (std::size_t i = 0; i < spec.nodes(); ++i) {
    if (!spec.sink[i]) index[i] = free_count++;
  }
  std::vector<double> out(spec.nodes(), 0.0);
  if (free_count == 0) return out;

  const auto k = free_stiffness(rho, spec, index, free_count);
  Eigen::VectorXd b(free_count);
  for (std::size_t i = 0; i < spec.nodes(); ++i) {
    if (index[i] >= 0) b[index[i]] = rhs[i];
  }
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(1e-10);
  cg.setMaxIterations(std::max<long>(1000, 10 * free_count));
  cg.compute(k);
  const Eigen::VectorXd x = cg.solve(b);
  if (cg.info() != Eigen::Success) {
    throw SolverError("heat: conjugate gradient did not converge (" + std::to_string(cg.iterations()) +
                      " iterations, relative residual " + std::to_string(cg.error()) + ")");
  }
  if (stats) {
    stats->iterations = cg.iterations();
    stats->relative_residual = cg.error();
  }
  for (std::size_t i = 0; i < spec.nodes(); ++i) {
    if (index[i] >= 0) out[i] = x[index[i]];
  }
  return out;
}

}  // namespace

Eigen::SparseMatrix<double> stiffness_matrix(std::span<const double> rho, const ProblemSpec& spec) {
  check_design(rho, spec);
  std::vector<long> index(spec.nodes());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = static_cast<long>(i);
  return free_stiffness(rho, spec, index, static_cast<long>(spec.nodes()));
}

std::vector<double> solve(std::span<const double> rho, const ProblemSpec& spec, SolveStats* stats) {
  spec.validate();
  check_design(rho, spec);
  return solve_free(rho, spec, spec.source, stats);
}

Tensor objective(const Tensor& T, const Tensor& rho, const ProblemSpec& spec) {
  const std::size_t n = spec.nodes();
  if (T.numel() != n || rho.numel() != n) throw DimensionError("heat: objective inputs must have one value per node");
  const Tensor t = reshape(T, {n});
  const Tensor r = reshape(rho, {n});
  const Tensor f(Shape{n}, spec.source);
  const Tensor compliance = sum(f * t) * spec.cell_area();
  const Tensor excess = relu(mean(r) - spec.volume_fraction);
  return compliance + excess * excess * spec.volume_weight;
}

double objective(std::span<const double> T, std::span<const double> rho, const ProblemSpec& spec) {
  NoGradGuard guard;
  const Tensor t(Shape{T.size()}, std::vector<double>(T.begin(), T.end()));
  const Tensor r(Shape{rho.size()}, std::vector<double>(rho.begin(), rho.end()));
  return objective(t, r, spec).item();
}

std::vector<double> adjoint_sensitivity(std::span<const double> rho, std::span<const double> T,
                                        const ProblemSpec& spec) {
  spec.validate();
  check_design(rho, spec);
  const std::size_t n = spec.nodes();
  if (T.size() != n) throw DimensionError("heat: temperature size does not match the grid");

  // dJ/dT = cell_area * f, then K psi = -dJ/dT on the free nodes.
  std::vector<double> rhs(n);
  for (std::size_t i = 0; i < n; ++i) rhs[i] = -spec.cell_area() * spec.source[i];
  const std::vector<double> psi = solve_free(rho, spec, rhs, nullptr);

  std::vector<double> dk(n);
  for (std::size_t i = 0; i < n; ++i) {
    dk[i] = spec.simp_exponent * std::pow(rho[i], spec.simp_exponent - 1.0) * (spec.k_max - spec.k_min);
  }
  const double inv_h2 = 1.0 / spec.cell_area();
  std::vector<double> s(n, 0.0);
  for (const auto& e : grid_edges(spec)) {
    const double ka = conductivity(rho[e.a], spec), kb = conductivity(rho[e.b], spec);
    const double denom = (ka + kb) * (ka + kb);
    const double coupling = (psi[e.a] - psi[e.b]) * (T[e.a] - T[e.b]) * inv_h2;
    s[e.a] += 2.0 * kb * kb / denom * dk[e.a] * coupling;
    s[e.b] += 2.0 * ka * ka / denom * dk[e.b] * coupling;
  }
  // Explicit dependence through the volume penalty.
  double mean_rho = 0.0;
  for (double v : rho) mean_rho += v;
  mean_rho /= static_cast<double>(n);
  const double excess = std::max(0.0, mean_rho - spec.volume_fraction);
  const double direct = 2.0 * spec.volume_weight * excess / static_cast<double>(n);
  for (auto& v : s) v += direct;
  return s;
}

State evaluate_state(std::span<const double> rho, const ProblemSpec& spec) {
  State st;
  st.rho.assign(rho.begin(), rho.end());
  st.T = solve(rho, spec);
  st.J = objective(st.T, rho, spec);
  st.s = adjoint_sensitivity(rho, st.T, spec);
  return st;
}

Tensor structural_channels(const ProblemSpec& spec, double source_scale) {
  const std::size_t n = spec.nodes();
  const double h = spec.spacing();
  std::vector<double> data(n * 4);
  for (std::size_t iy = 0; iy < spec.ny; ++iy) {
    for (std::size_t ix = 0; ix < spec.nx; ++ix) {
      const std::size_t i = iy * spec.nx + ix;
      data[i * 4 + 0] = static_cast<double>(ix) * h;
      data[i * 4 + 1] = static_cast<double>(iy) * h;
      data[i * 4 + 2] = spec.source[i] / source_scale;
      data[i * 4 + 3] = spec.sink[i] ? 1.0 : 0.0;
    }
  }
  return Tensor({n, 4}, std::move(data));
}

}  // namespace pdeco::heat
