#include "pdeco/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <set>
#include <sstream>

#include "pdeco/binary_io.hpp"
#include "pdeco/checkpoint.hpp"
#include "pdeco/error.hpp"
#include "pdeco/log.hpp"

namespace pdeco {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Typed view of one config section that rejects keys outside `known`.
class Section {
 public:
  Section(const json& root, const std::string& name, std::set<std::string> known) : name_(name) {
    if (!root.contains(name)) return;
    node_ = &root.at(name);
    if (!node_->is_object()) throw ConfigError("config section '" + name + "' must be an object");
    for (const auto& [key, value] : node_->items()) {
      if (!known.contains(key)) throw ConfigError("unknown key '" + name + "." + key + "'");
    }
  }

  template <class T>
  void get(const std::string& key, T& out) const {
    if (!node_ || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
    }
  }

  void get_path(const std::string& key, fs::path& out) const {
    std::string s;
    get(key, s);
    if (!s.empty()) out = s;
  }

  void get_path(const std::string& key, std::optional<fs::path>& out) const {
    std::string s;
    get(key, s);
    if (!s.empty()) out = s;
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
};

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw PathError("cannot create output directory " + dir.string());
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw PathError(what + " not found: " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file_atomic(path, text);
}

json metrics_to_json(const Metrics& m) {
  return {{"solution_error", m.solution_error},
          {"sensitivity_error", m.sensitivity_error},
          {"objective_error", m.objective_error},
          {"samples", m.samples}};
}

std::string alpha_label(double alpha) {
  std::ostringstream ss;
  ss << alpha;
  return ss.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : root.items()) {
    if (key != "gen" && key != "train" && key != "optimize" && key != "gradcheck") {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  RunConfig rc;

  {
    const Section s(root, "gen",
                    {"num_traj", "nx", "ny", "steps", "step_size", "filter_radius", "seed", "threads", "out"});
    auto& g = rc.gen;
    s.get("num_traj", g.num_traj);
    s.get("nx", g.nx);
    s.get("ny", g.ny);
    s.get("steps", g.optimizer.steps);
    s.get("step_size", g.optimizer.step_size);
    s.get("filter_radius", g.optimizer.filter_radius);
    s.get("seed", g.seed);
    s.get("threads", g.threads);
    s.get_path("out", g.out);
  }
  {
    const Section s(root, "train",
                    {"store",     "out",        "init",          "split_ratio", "split_seed", "alpha_sweep",
                     "epochs",    "batch_size", "learning_rate", "cosine_schedule", "alpha", "sens_form",
                     "window",    "threshold",  "drop_probability", "seed",    "threads",    "layer",
                     "depth",     "channels",   "sensors",       "modes",      "heads"});
    auto& t = rc.train;
    s.get_path("store", t.store);
    s.get_path("out", t.out);
    s.get_path("init", t.init);
    s.get("split_ratio", t.split_ratio);
    s.get("split_seed", t.split_seed);
    s.get("alpha_sweep", t.alpha_sweep);
    s.get("epochs", t.train.epochs);
    s.get("batch_size", t.train.batch_size);
    s.get("learning_rate", t.train.learning_rate);
    s.get("cosine_schedule", t.train.cosine_schedule);
    s.get("alpha", t.train.alpha);
    std::string form = to_string(t.train.sens_form);
    s.get("sens_form", form);
    t.train.sens_form = sens_form_from_string(form);
    s.get("window", t.train.pairing.window);
    s.get("threshold", t.train.pairing.threshold);
    s.get("drop_probability", t.train.pairing.drop_probability);
    s.get("seed", t.train.seed);
    s.get("threads", t.train.threads);
    std::string layer = to_string(t.model.layer);
    s.get("layer", layer);
    t.model.layer = layer_kind_from_string(layer);
    s.get("depth", t.model.depth);
    s.get("channels", t.model.channels);
    s.get("sensors", t.model.sensors);
    s.get("modes", t.model.modes);
    s.get("heads", t.model.heads);
  }
  {
    const Section s(root, "optimize",
                    {"checkpoint", "out", "instance_seed", "nx", "ny", "seed", "mode", "steps", "step_size",
                     "warm_up", "radius", "buffer_size", "noise_passes", "noise_fraction", "filter_radius",
                     "eval_interval"});
    auto& o = rc.optimize;
    s.get_path("checkpoint", o.checkpoint);
    s.get_path("out", o.out);
    s.get("instance_seed", o.instance_seed);
    s.get("nx", o.nx);
    s.get("ny", o.ny);
    s.get("seed", o.seed);
    std::string mode = to_string(o.hybrid.mode);
    s.get("mode", mode);
    o.hybrid.mode = hybrid_mode_from_string(mode);
    s.get("steps", o.hybrid.steps);
    s.get("step_size", o.hybrid.step_size);
    s.get("warm_up", o.hybrid.warm_up);
    s.get("radius", o.hybrid.radius);
    s.get("buffer_size", o.hybrid.buffer_size);
    s.get("noise_passes", o.hybrid.noise_passes);
    s.get("noise_fraction", o.hybrid.noise_fraction);
    s.get("filter_radius", o.hybrid.filter_radius);
    s.get("eval_interval", o.hybrid.eval_interval);
  }
  {
    const Section s(root, "gradcheck", {"seed", "random_graphs"});
    s.get("seed", rc.gradcheck.suite.seed);
    s.get("random_graphs", rc.gradcheck.suite.random_graphs);
  }
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  require_file(path, "config file");
  return parse_run_config(io::read_file(path));
}

GenReport cmd_gen(const GenRunConfig& cfg) {
  cfg.optimizer.validate();
  if (cfg.num_traj < 1) throw ConfigError("gen: num_traj must be at least 1");
  ensure_directory(cfg.out);
  const auto trajectories = generate_corpus(cfg.num_traj, cfg.seed, cfg.nx, cfg.ny, cfg.optimizer, cfg.threads);
  GenReport report;
  report.manifest = save_store(cfg.out, trajectories, cfg.optimizer);
  for (const auto& t : trajectories) {
    report.descent_fraction.push_back(descent_fraction(t));
    report.initial_J.push_back(t.records.front().J);
    report.final_J.push_back(t.records.back().J);
  }
  return report;
}

std::string metrics_json(const TrainResult& result, const TrainConfig& cfg) {
  json j;
  j["alpha"] = cfg.alpha;
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["sens_form"] = to_string(cfg.sens_form);
  j["best_epoch"] = result.best_epoch;
  j["model"] = json::parse(result.config.to_json());
  j["with_reference"] = metrics_to_json(result.with_reference);
  j["without_reference"] = metrics_to_json(result.without_reference);
  return j.dump(2) + "\n";
}

std::string loss_csv(const TrainResult& result) {
  std::ostringstream out;
  out << std::setprecision(17) << "epoch,train_loss,test_loss,learning_rate\n";
  for (const auto& e : result.curve) {
    out << e.epoch << ',' << e.train_loss << ',' << e.test_loss << ',' << e.learning_rate << '\n';
  }
  return out.str();
}

std::vector<TrainReport> cmd_train(const TrainRunConfig& cfg) {
  cfg.train.validate();
  if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) throw ConfigError("train: split_ratio must lie in (0, 1)");
  require_file(cfg.store / "manifest.json", "trajectory store manifest");
  if (cfg.init) require_file(*cfg.init, "initial checkpoint");
  ensure_directory(cfg.out);

  const auto trajectories = load_store(cfg.store);
  const auto [train_ids, test_ids] = split_by_trajectory(trajectories.size(), cfg.split_ratio, cfg.split_seed);

  RnoConfig model = cfg.model;
  std::optional<RnoParams> init;
  if (cfg.init) {
    Checkpoint ck = load_checkpoint(*cfg.init);
    model = ck.config;
    init = std::move(ck.params);
  }
  model.validate();

  std::vector<double> alphas = cfg.alpha_sweep;
  const bool sweep = !alphas.empty();
  if (!sweep) alphas.push_back(cfg.train.alpha);

  std::vector<TrainReport> reports;
  for (double alpha : alphas) {
    TrainConfig tc = cfg.train;
    tc.alpha = alpha;
    TrainReport r;
    r.alpha = alpha;
    r.dir = sweep ? cfg.out / ("alpha_" + alpha_label(alpha)) : cfg.out;
    ensure_directory(r.dir);
    logging::info("training " + to_string(model.layer) + " model, alpha " + alpha_label(alpha));
    r.result = train(trajectories, train_ids, test_ids, model, tc, init);
    save_checkpoint(r.dir / "model.rno", r.result.config, r.result.params);
    write_text(r.dir / "metrics.json", metrics_json(r.result, tc));
    write_text(r.dir / "loss.csv", loss_csv(r.result));
    reports.push_back(std::move(r));
  }
  return reports;
}

OptimizeReport cmd_optimize(const OptimizeRunConfig& cfg) {
  cfg.hybrid.validate();
  const bool numerical = cfg.hybrid.mode == HybridMode::numerical;
  if (!numerical && !cfg.checkpoint) {
    throw UsageError("optimize: mode " + to_string(cfg.hybrid.mode) + " requires a checkpoint");
  }
  if (numerical && cfg.checkpoint) logging::info("warning: numerical mode ignores the checkpoint");
  if (!numerical) require_file(*cfg.checkpoint, "checkpoint");
  ensure_directory(cfg.out);

  const heat::ProblemSpec spec = heat::instance_sampler(cfg.instance_seed, cfg.nx, cfg.ny);
  std::optional<Checkpoint> model;
  if (!numerical) model = load_checkpoint(*cfg.checkpoint);
  OptimizeReport report;
  report.log = run_optimization(model ? &*model : nullptr, spec, cfg.hybrid, cfg.seed);
  report.csv = cfg.out / "runlog.csv";
  write_text(report.csv, report.log.to_csv());
  if (report.log.aborted) throw SolverError(report.log.error + " (partial log in " + report.csv.string() + ")");
  return report;
}

std::vector<check::CheckResult> cmd_gradcheck(const GradcheckRunConfig& cfg) { return check::run_suite(cfg.suite); }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const PathError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 3;
  return 1;
}

}  // namespace pdeco
