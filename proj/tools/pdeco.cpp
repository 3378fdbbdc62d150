// pdeco: trajectory generation, RNO training, surrogate-driven optimization
// and derivative checks.
//
// Exit codes: 0 success, 1 verification or run failure, 2 usage, 3 I/O.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <optional>

#include "pdeco/error.hpp"
#include "pdeco/log.hpp"
#include "pdeco/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<double> alpha;
  std::vector<double> alpha_sweep;
  std::optional<std::string> store;
  std::optional<std::string> init;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> num_traj;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> instance_seed;
  std::string corrupt;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--threads", o.threads, "worker thread cap")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "output directory");
}

int run_gen(pdeco::RunConfig& rc, const Overrides& o) {
  auto& g = rc.gen;
  if (o.seed) g.seed = *o.seed;
  if (o.threads) g.threads = *o.threads;
  if (o.out) g.out = *o.out;
  if (o.num_traj) g.num_traj = *o.num_traj;
  if (o.steps) g.optimizer.steps = *o.steps;
  const auto report = pdeco::cmd_gen(g);
  std::printf("traj,initial_J,final_J,descent_fraction\n");
  for (std::size_t i = 0; i < report.final_J.size(); ++i) {
    std::printf("%zu,%.10g,%.10g,%.4f\n", i, report.initial_J[i], report.final_J[i], report.descent_fraction[i]);
  }
  const double n = static_cast<double>(report.final_J.size());
  const double mean_descent =
      std::accumulate(report.descent_fraction.begin(), report.descent_fraction.end(), 0.0) / n;
  std::size_t monotone = 0;
  for (double f : report.descent_fraction) monotone += f == 1.0 ? 1 : 0;
  pdeco::logging::info("wrote " + std::to_string(report.manifest.num_traj) + " trajectories to " + g.out.string() +
                       "; mean descent fraction " + std::to_string(mean_descent) + ", monotone " +
                       std::to_string(monotone) + "/" + std::to_string(report.final_J.size()));
  return 0;
}

int run_train(pdeco::RunConfig& rc, const Overrides& o) {
  auto& t = rc.train;
  if (o.alpha && !o.alpha_sweep.empty()) throw pdeco::UsageError("train: --alpha and --alpha-sweep are exclusive");
  if (o.seed) t.train.seed = *o.seed;
  if (o.threads) t.train.threads = *o.threads;
  if (o.out) t.out = *o.out;
  if (o.store) t.store = *o.store;
  if (o.init) t.init = *o.init;
  if (o.epochs) t.train.epochs = *o.epochs;
  if (o.alpha) {
    t.train.alpha = *o.alpha;
    t.alpha_sweep.clear();
  }
  if (!o.alpha_sweep.empty()) t.alpha_sweep = o.alpha_sweep;
  for (const auto& r : pdeco::cmd_train(t)) {
    const auto& m = r.result;
    std::printf("alpha %g: with reference T %.4g L_s %.4g | without reference T %.4g L_s %.4g -> %s\n", r.alpha,
                m.with_reference.solution_error, m.with_reference.sensitivity_error,
                m.without_reference.solution_error, m.without_reference.sensitivity_error, r.dir.string().c_str());
  }
  return 0;
}

int run_optimize(pdeco::RunConfig& rc, const Overrides& o) {
  auto& opt = rc.optimize;
  if (o.seed) opt.seed = *o.seed;
  if (o.out) opt.out = *o.out;
  if (o.mode) opt.hybrid.mode = pdeco::hybrid_mode_from_string(*o.mode);
  if (o.checkpoint) opt.checkpoint = *o.checkpoint;
  if (o.steps) opt.hybrid.steps = *o.steps;
  if (o.instance_seed) opt.instance_seed = *o.instance_seed;
  const auto report = pdeco::cmd_optimize(opt);
  std::printf("mode %s: final true J %.10g, %zu recalibrations, %zu evaluations -> %s\n",
              pdeco::to_string(report.log.mode).c_str(), report.log.final_true_J, report.log.recalibrations,
              report.log.evaluations, report.csv.string().c_str());
  return 0;
}

int run_gradcheck(pdeco::RunConfig& rc, const Overrides& o) {
  auto& g = rc.gradcheck;
  if (o.seed) g.suite.seed = *o.seed;
  g.suite.corrupt = o.corrupt;
  bool ok = true;
  for (const auto& r : pdeco::cmd_gradcheck(g)) {
    std::printf("%-30s %s  max error %.3e  tolerance %.0e\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.max_error,
                r.tolerance);
    ok = ok && r.passed;
  }
  if (!ok) std::printf("gradcheck: FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  pdeco::logging::set_level(pdeco::logging::level_from_env());
  CLI::App app{"Reference neural operator pipeline for PDE-constrained design optimization"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("gen", "generate a trajectory store with the classical optimizer");
  add_common(gen, o);
  gen->add_option("--num-traj", o.num_traj, "number of trajectories");
  gen->add_option("--steps", o.steps, "optimizer steps per trajectory");

  auto* trn = app.add_subcommand("train", "train an RNO on a trajectory store");
  add_common(trn, o);
  trn->add_option("--store", o.store, "trajectory store directory");
  trn->add_option("--alpha", o.alpha, "sensitivity-loss weight");
  trn->add_option("--alpha-sweep", o.alpha_sweep, "train once per weight")->expected(1, -1);
  trn->add_option("--init", o.init, "resume from this checkpoint");
  trn->add_option("--epochs", o.epochs, "training epochs");

  auto* opt = app.add_subcommand("optimize", "optimize a design with the trained surrogate");
  add_common(opt, o);
  opt->add_option("--mode", o.mode, "hybrid, no_reference or numerical")
      ->check(CLI::IsMember({"hybrid", "no_reference", "numerical"}));
  opt->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  opt->add_option("--steps", o.steps, "optimization steps");
  opt->add_option("--instance-seed", o.instance_seed, "problem instance seed");

  auto* chk = app.add_subcommand("gradcheck", "run the derivative verification suite");
  add_common(chk, o);
  chk->add_option("--corrupt", o.corrupt, "perturb the named analytic derivative (test hook)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    pdeco::RunConfig rc = o.config.empty() ? pdeco::RunConfig{} : pdeco::load_run_config(o.config);
    if (gen->parsed()) return run_gen(rc, o);
    if (trn->parsed()) return run_train(rc, o);
    if (opt->parsed()) return run_optimize(rc, o);
    return run_gradcheck(rc, o);
  } catch (const std::exception& e) {
    pdeco::logging::error(e.what());
    return pdeco::exit_code_for(e);
  }
}
