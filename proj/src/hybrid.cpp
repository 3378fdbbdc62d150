#include "pdeco/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "pdeco/dataset.hpp"
#include "pdeco/error.hpp"
#include "pdeco/log.hpp"
#include "pdeco/trajectory.hpp"

namespace pdeco {

std::string to_string(HybridMode mode) {
  switch (mode) {
    case HybridMode::hybrid: return "hybrid";
    case HybridMode::no_reference: return "no_reference";
    case HybridMode::numerical: return "numerical";
  }
  return "unknown";
}

HybridMode hybrid_mode_from_string(const std::string& name) {
  if (name == "hybrid") return HybridMode::hybrid;
  if (name == "no_reference") return HybridMode::no_reference;
  if (name == "numerical") return HybridMode::numerical;
  throw UsageError("unknown mode '" + name + "' (expected hybrid, no_reference or numerical)");
}

void HybridConfig::validate() const {
  if (steps < 1) throw ConfigError("optimize: steps must be at least 1");
  if (!(step_size >= 0.0)) throw ConfigError("optimize: step size must be non-negative");
  if (!(radius > 0.0)) throw ConfigError("optimize: radius must be positive");
  if (buffer_size < 1 || noise_passes < 1) throw ConfigError("optimize: buffer size and noise passes must be >= 1");
  if (!(noise_fraction >= 0.0)) throw ConfigError("optimize: noise fraction must be non-negative");
  if (!(filter_radius >= 0.0)) throw ConfigError("optimize: filter radius must be non-negative");
  if (eval_interval < 1) throw ConfigError("optimize: evaluation interval must be at least 1");
}

void Buffer::push(BufferEntry entry) {
  entries_.push_back(std::move(entry));
  while (entries_.size() > capacity_) entries_.pop_front();
}

void Buffer::reset(BufferEntry entry) {
  entries_.clear();
  entries_.push_back(std::move(entry));
}

double dist(std::span<const double> a, std::span<const double> b) { return relative_l2(a, b); }

Tensor smoothed_prediction(const Tensor& design, const Buffer& buffer, const Checkpoint& model,
                           const Tensor& structural) {
  Query q;
  q.structural = structural;
  q.design = design;
  if (buffer.empty()) return predict_solution(q, model.params, model.config);
  Tensor total;
  for (const auto& e : buffer.entries()) {
    q.ref_solution = e.solution;
    q.ref_design = e.design;
    const Tensor u = predict_solution(q, model.params, model.config);
    total = total.defined() ? total + u : u;
  }
  return total * (1.0 / static_cast<double>(buffer.size()));
}

Tensor smoothed_gradient(std::span<const double> design, const Buffer& buffer, const Checkpoint& model,
                         const heat::ProblemSpec& spec, const Tensor& structural, std::size_t noise_passes,
                         double noise_fraction, std::mt19937_64& rng) {
  if (noise_passes < 1) throw ConfigError("smoothed_gradient: need at least one noise pass");
  const std::size_t n = design.size();
  const Tensor lambda(Shape{n}, std::vector<double>(design.begin(), design.end()), true);
  double mean = 0.0, var = 0.0;
  for (double v : design) mean += v;
  mean /= static_cast<double>(n);
  for (double v : design) var += (v - mean) * (v - mean);
  const double sigma = noise_fraction * std::sqrt(var / static_cast<double>(n));
  std::normal_distribution<double> normal(0.0, 1.0);

  Tensor total;
  for (std::size_t i = 0; i < noise_passes; ++i) {
    // Without noise the graph matches predict_sensitivity node for node.
    Tensor noisy = lambda;
    if (sigma > 0.0) {
      std::vector<double> eps(n);
      for (auto& e : eps) e = sigma * normal(rng);
      noisy = lambda + Tensor({n}, std::move(eps));
    }
    // The explicit dependence of J is evaluated at the un-noised design.
    const Tensor j = heat::objective(smoothed_prediction(noisy, buffer, model, structural), lambda, spec);
    total = total.defined() ? total + j : j;
  }
  total = total * (1.0 / static_cast<double>(noise_passes));
  return grad(total, {lambda}).front();
}

std::uint64_t design_hash(std::span<const double> design) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (double v : design) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

namespace {

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void project_step(std::vector<double>& rho, std::span<const double> gradient, const heat::ProblemSpec& spec,
                  const HybridConfig& cfg) {
  const auto filtered = gaussian_filter(gradient, spec.nx, spec.ny, cfg.filter_radius);
  for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = std::clamp(rho[i] - cfg.step_size * filtered[i], 0.0, 1.0);
}

void abort_log(RunLog& log, const SolverError& e) {
  log.aborted = true;
  log.error = e.what();
  log.final_true_J = std::numeric_limits<double>::quiet_NaN();
  logging::error("optimize aborted after " + std::to_string(log.steps.size()) + " steps: " + e.what());
}

RunLog run_numerical(const heat::ProblemSpec& spec, const HybridConfig& cfg) {
  RunLog log;
  log.mode = HybridMode::numerical;
  std::vector<double> rho(spec.nodes(), spec.volume_fraction);
  try {
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      const auto state = heat::evaluate_state(rho, spec);
      StepRecord rec;
      rec.step = t;
      rec.solver_calls = t + 1;
      rec.predicted_J = state.J;
      rec.true_J = state.J;
      rec.design_hash = design_hash(rho);
      log.steps.push_back(rec);
      project_step(rho, state.s, spec, cfg);
    }
    StepRecord last;
    last.step = cfg.steps;
    last.solver_calls = cfg.steps;
    last.true_J = heat::objective(heat::solve(rho, spec), rho, spec);
    last.predicted_J = last.true_J;
    last.design_hash = design_hash(rho);
    log.steps.push_back(last);
    log.evaluations = 1;
    log.final_true_J = last.true_J;
  } catch (const SolverError& e) {
    abort_log(log, e);
  }
  log.final_design = rho;
  return log;
}

}  // namespace

std::string RunLog::to_csv() const {
  std::ostringstream out;
  out << "step,solver_calls,predicted_J,true_J\n";
  for (const auto& s : steps) {
    out << s.step << ',' << s.solver_calls << ',' << csv_number(s.predicted_J) << ',' << csv_number(s.true_J) << '\n';
  }
  return out.str();
}

RunLog run_optimization(const Checkpoint* model, const heat::ProblemSpec& spec, const HybridConfig& cfg,
                        std::uint64_t seed) {
  cfg.validate();
  spec.validate();
  if (cfg.mode == HybridMode::numerical) return run_numerical(spec, cfg);
  if (!model) throw UsageError("optimize: mode " + to_string(cfg.mode) + " needs a model checkpoint");
  if (spec.nodes() != spec.source.size()) throw DimensionError("optimize: malformed problem spec");

  const std::size_t n = spec.nodes();
  const Tensor structural = heat::structural_channels(spec, model->config.source_scale);
  std::mt19937_64 rng(seed);
  std::vector<double> rho(n, spec.volume_fraction);
  Buffer buffer(cfg.buffer_size);
  std::vector<double> u_gt;     // empty until the first recalibration
  std::vector<double> u_prev;   // previous step's smoothed prediction
  std::size_t calls = 0;
  RunLog log;
  log.mode = cfg.mode;

  try {
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      StepRecord rec;
      rec.step = t;
      if (cfg.mode == HybridMode::hybrid && t >= cfg.warm_up) {
        const double d = (u_prev.empty() || u_gt.empty()) ? std::numeric_limits<double>::infinity() : dist(u_prev, u_gt);
        if (d > cfg.radius) {
          u_gt = heat::solve(rho, spec);
          ++calls;
          ++log.recalibrations;
          buffer.reset({Tensor({n}, u_gt), Tensor({n}, rho)});
          rec.recalibrated = true;
          rec.dist_before = d;
          rec.true_J = heat::objective(u_gt, rho, spec);
        }
      }
      const bool scheduled_eval = cfg.mode == HybridMode::no_reference && t > 0 && t % cfg.eval_interval == 0;
      if (scheduled_eval) {
        rec.true_J = heat::objective(heat::solve(rho, spec), rho, spec);
        ++log.evaluations;
      }

      Tensor u_t;
      {
        NoGradGuard no_grad;
        u_t = smoothed_prediction(Tensor({n}, rho), buffer, *model, structural);
        rec.predicted_J = heat::objective(u_t.data(), rho, spec);
      }
      if (rec.recalibrated) rec.dist_after = dist(u_t.data(), u_gt);
      rec.solver_calls = calls;
      rec.design_hash = design_hash(rho);
      log.steps.push_back(rec);

      const Tensor g = smoothed_gradient(rho, buffer, *model, spec, structural, cfg.noise_passes, cfg.noise_fraction, rng);
      if (cfg.mode == HybridMode::hybrid) buffer.push({u_t, Tensor({n}, rho)});
      u_prev.assign(u_t.data().begin(), u_t.data().end());
      project_step(rho, g.data(), spec, cfg);
      logging::debug("optimize step " + std::to_string(t) + " predicted J " + std::to_string(rec.predicted_J));
    }

    StepRecord last;
    last.step = cfg.steps;
    last.solver_calls = calls;
    {
      NoGradGuard no_grad;
      last.predicted_J = heat::objective(smoothed_prediction(Tensor({n}, rho), buffer, *model, structural).data(), rho, spec);
    }
    last.true_J = heat::objective(heat::solve(rho, spec), rho, spec);
    last.design_hash = design_hash(rho);
    log.steps.push_back(last);
    ++log.evaluations;
    log.final_true_J = last.true_J;
  } catch (const SolverError& e) {
    abort_log(log, e);
  }
  log.final_design = rho;
  return log;
}

}  // namespace pdeco
