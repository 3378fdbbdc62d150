#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "pdeco/error.hpp"
#include "pdeco/hybrid.hpp"
#include "pdeco/trajectory.hpp"

using namespace pdeco;

namespace {

Checkpoint tiny_model(std::uint64_t seed = 1) {
  RnoConfig cfg;
  cfg.channels = 4;
  cfg.sensors = 4;
  cfg.modes = 2;
  cfg.heads = 2;
  cfg.depth = 1;
  cfg.solution_scale = 0.05;
  cfg.source_scale = 20.0;
  return {cfg, make_rno_params(cfg, seed)};
}

std::vector<double> random_design(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::vector<double> v(n);
  for (auto& e : v) e = u(rng);
  return v;
}

Tensor vec(const std::vector<double>& v) { return Tensor({v.size()}, v); }

struct Scene {
  heat::ProblemSpec spec = heat::instance_sampler(3, 6, 5);
  Checkpoint model = tiny_model();
  Tensor structural = heat::structural_channels(spec, model.config.source_scale);
};

}  // namespace

TEST(HybridConfig, Validation) {
  HybridConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.radius = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.buffer_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.noise_passes = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(hybrid_mode_from_string("surrogate"), UsageError);
  EXPECT_EQ(hybrid_mode_from_string(to_string(HybridMode::no_reference)), HybridMode::no_reference);
}

TEST(Buffer, FifoEvictionAndReset) {
  Buffer b(2);
  for (double v : {1.0, 2.0, 3.0}) b.push({Tensor::full({1}, v), Tensor::full({1}, v)});
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b.entries().front().solution.item(), 2.0);
  EXPECT_EQ(b.entries().back().solution.item(), 3.0);
  b.reset({Tensor::full({1}, 9.0), Tensor::full({1}, 9.0)});
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b.entries().front().design.item(), 9.0);
}

TEST(SmoothedPrediction, SingleEntryEqualsOneForward) {
  Scene s;
  std::mt19937_64 rng(1);
  const std::size_t n = s.spec.nodes();
  const auto design = random_design(n, rng), ref_design = random_design(n, rng), ref_u = random_design(n, rng);
  Buffer b(1);
  b.push({vec(ref_u), vec(ref_design)});
  Query q{s.structural, vec(design), vec(ref_u), vec(ref_design)};
  const Tensor direct = predict_solution(q, s.model.params, s.model.config);
  const Tensor smoothed = smoothed_prediction(vec(design), b, s.model, s.structural);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(smoothed.at(i), direct.at(i), 1e-15);

  Buffer twice(3);
  twice.push({vec(ref_u), vec(ref_design)});
  twice.push({vec(ref_u), vec(ref_design)});
  const Tensor avg = smoothed_prediction(vec(design), twice, s.model, s.structural);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(avg.at(i), direct.at(i), 1e-15);
}

TEST(SmoothedPrediction, EmptyBufferIsReferenceFree) {
  Scene s;
  std::mt19937_64 rng(2);
  const auto design = random_design(s.spec.nodes(), rng);
  Query q;
  q.structural = s.structural;
  q.design = vec(design);
  const Tensor direct = predict_solution(q, s.model.params, s.model.config);
  const Tensor smoothed = smoothed_prediction(vec(design), Buffer(2), s.model, s.structural);
  for (std::size_t i = 0; i < direct.numel(); ++i) EXPECT_EQ(smoothed.at(i), direct.at(i));
}

TEST(SmoothedGradient, NoNoiseEqualsPredictSensitivityExactly) {
  Scene s;
  std::mt19937_64 rng(3);
  const std::size_t n = s.spec.nodes();
  const auto design = random_design(n, rng), ref_design = random_design(n, rng), ref_u = random_design(n, rng);
  for (bool with_ref : {false, true}) {
    Buffer b(1);
    Query q;
    q.structural = s.structural;
    q.design = vec(design);
    if (with_ref) {
      b.push({vec(ref_u), vec(ref_design)});
      q.ref_solution = vec(ref_u);
      q.ref_design = vec(ref_design);
    }
    const Tensor expected = predict_sensitivity(q, s.model.params, s.model.config, s.spec);
    const Tensor got = smoothed_gradient(design, b, s.model, s.spec, s.structural, 1, 0.0, rng);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(got.at(i), expected.at(i)) << "node " << i;
  }
}

TEST(SmoothedGradient, ConstantModelGivesTheDirectTerm) {
  Scene s;
  Checkpoint zero = s.model;
  zero.params = map_params(zero.params, [](const Tensor& t) { return Tensor::zeros(t.shape()); });
  const std::size_t n = s.spec.nodes();
  const std::vector<double> design(n, 0.8);
  std::mt19937_64 rng(4);
  const Tensor g = smoothed_gradient(design, Buffer(1), zero, s.spec, s.structural, 8, 0.5, rng);
  const double direct = 2.0 * s.spec.volume_weight * (0.8 - s.spec.volume_fraction) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(g.at(i), direct, 1e-12 * direct);
}

TEST(SmoothedGradient, VarianceShrinksWithPasses) {
  Scene s;
  std::mt19937_64 rng(5);
  const std::size_t n = s.spec.nodes();
  const auto design = random_design(n, rng);
  Buffer b(1);
  b.push({vec(random_design(n, rng)), vec(random_design(n, rng))});
  auto total_variance = [&](std::size_t passes) {
    std::vector<std::vector<double>> draws;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 local(1000 + seed);
      const Tensor g = smoothed_gradient(design, b, s.model, s.spec, s.structural, passes, 0.05, local);
      draws.emplace_back(g.data().begin(), g.data().end());
    }
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = 0.0;
      for (const auto& d : draws) m += d[i] / draws.size();
      for (const auto& d : draws) var += (d[i] - m) * (d[i] - m) / (draws.size() - 1);
    }
    return var;
  };
  const double ratio = total_variance(1) / total_variance(64);
  EXPECT_GT(ratio, 64.0 / 3.0);
  EXPECT_LT(ratio, 64.0 * 3.0);
}

TEST(Run, NumericalModeReproducesTheClassicalOptimizer) {
  const auto spec = heat::instance_sampler(5, 10, 10);
  HybridConfig cfg;
  cfg.mode = HybridMode::numerical;
  cfg.steps = 6;
  const RunLog log = run_optimization(nullptr, spec, cfg, 0);
  OptimizerConfig opt;
  opt.steps = 6;
  opt.step_size = cfg.step_size;
  opt.filter_radius = cfg.filter_radius;
  const Trajectory traj = run_numerical_opt(spec, opt);
  ASSERT_EQ(log.steps.size(), 7u);
  for (std::size_t t = 0; t < 7; ++t) {
    EXPECT_EQ(log.steps[t].step, t);
    EXPECT_NEAR(log.steps[t].true_J, traj.records[t].J, 1e-12 * traj.records[t].J);
    EXPECT_EQ(log.steps[t].design_hash, design_hash(traj.records[t].rho));
    if (t < 6) EXPECT_EQ(log.steps[t].solver_calls, t + 1);
  }
  EXPECT_EQ(log.final_design, traj.records.back().rho);
  EXPECT_FALSE(log.aborted);
}

TEST(Run, HybridModeRecalibratesAndLogs) {
  Scene s;
  HybridConfig cfg;
  cfg.steps = 8;
  cfg.warm_up = 2;
  cfg.radius = 1e-6;  // every step beyond warm-up drifts past this
  const RunLog log = run_optimization(&s.model, s.spec, cfg, 7);
  ASSERT_EQ(log.steps.size(), 9u);
  std::size_t prev = 0;
  for (std::size_t t = 0; t < 8; ++t) {
    const auto& r = log.steps[t];
    EXPECT_GE(r.solver_calls, prev);
    prev = r.solver_calls;
    EXPECT_EQ(r.recalibrated, t >= 2) << "step " << t;
    EXPECT_EQ(std::isnan(r.true_J), !r.recalibrated);
    EXPECT_TRUE(std::isfinite(r.predicted_J));
  }
  EXPECT_EQ(log.recalibrations, 6u);
  EXPECT_EQ(log.steps.back().step, 8u);
  EXPECT_TRUE(std::isfinite(log.steps.back().true_J));
  EXPECT_EQ(log.steps.back().design_hash, design_hash(log.final_design));
  EXPECT_EQ(log.final_true_J, log.steps.back().true_J);
}

TEST(Run, NoReferenceModeOnlyEvaluates) {
  Scene s;
  HybridConfig cfg;
  cfg.mode = HybridMode::no_reference;
  cfg.steps = 9;
  cfg.eval_interval = 4;
  const RunLog log = run_optimization(&s.model, s.spec, cfg, 1);
  EXPECT_EQ(log.recalibrations, 0u);
  EXPECT_EQ(log.evaluations, 3u);  // steps 4, 8 and the final row
  for (const auto& r : log.steps) {
    EXPECT_EQ(r.solver_calls, 0u);
    EXPECT_EQ(std::isfinite(r.true_J), r.step == 4 || r.step == 8 || r.step == 9) << "step " << r.step;
  }
}

TEST(Run, DeterministicInSeedAndCsvLayout) {
  Scene s;
  HybridConfig cfg;
  cfg.steps = 4;
  const std::string a = run_optimization(&s.model, s.spec, cfg, 3).to_csv();
  EXPECT_EQ(a, run_optimization(&s.model, s.spec, cfg, 3).to_csv());
  EXPECT_EQ(a.substr(0, a.find('\n')), "step,solver_calls,predicted_J,true_J");
  // Step 1 is not recalibrated under the default radius only if the model is
  // consistent; either way every line has four fields.
  std::size_t pos = 0, lines = 0;
  while ((pos = a.find('\n', pos)) != std::string::npos) {
    ++pos;
    ++lines;
  }
  EXPECT_EQ(lines, 6u);
}

TEST(Run, MissingModelAndSolverFailure) {
  Scene s;
  HybridConfig cfg;
  cfg.steps = 3;
  EXPECT_THROW(run_optimization(nullptr, s.spec, cfg, 0), UsageError);

  heat::ProblemSpec broken = s.spec;
  broken.source[0] = std::numeric_limits<double>::quiet_NaN();
  for (auto mode : {HybridMode::numerical, HybridMode::hybrid}) {
    cfg.mode = mode;
    const RunLog log = run_optimization(&s.model, broken, cfg, 0);
    EXPECT_TRUE(log.aborted);
    EXPECT_FALSE(log.error.empty());
    EXPECT_TRUE(log.steps.empty());
    EXPECT_TRUE(std::isnan(log.final_true_J));
  }
}
