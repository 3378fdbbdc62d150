#include "pdeco/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "pdeco/error.hpp"
#include "pdeco/log.hpp"

namespace pdeco {

std::string to_string(SensForm form) { return form == SensForm::raw ? "raw" : "cosine"; }

SensForm sens_form_from_string(const std::string& name) {
  if (name == "raw") return SensForm::raw;
  if (name == "cosine") return SensForm::cosine;
  throw ConfigError("unknown sensitivity loss form '" + name + "' (expected raw or cosine)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch size must be at least 1");
  if (!(alpha >= 0.0)) throw ConfigError("train: alpha must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
  pairing.validate();
}

Tensor data_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("data_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  const Tensor p = pred.dim() == 1 ? reshape(pred, {pred.numel(), 1}) : pred;
  const Tensor t = target.dim() == 1 ? reshape(target, {target.numel(), 1}) : target.detach();
  const std::size_t n = p.size(0), c = p.size(1);
  std::vector<double> inv_norm(c, 0.0);
  const auto td = t.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) inv_norm[k] += td[i * c + k] * td[i * c + k];
  }
  for (auto& v : inv_norm) v = std::sqrt(v) < 1e-12 ? 1.0 : 1.0 / std::sqrt(v);
  const Tensor diff = p - t.detach();
  const Tensor per_channel = sqrt(sum(diff * diff, 0)) * Tensor({1, c}, std::move(inv_norm));
  return sum(per_channel) * (1.0 / static_cast<double>(c));
}

Tensor sensitivity_loss(const Tensor& pred, const Tensor& truth, SensForm form) {
  if (pred.numel() != truth.numel()) throw DimensionError("sensitivity_loss: length mismatch");
  const Tensor p = reshape(pred, {pred.numel()});
  const Tensor t = reshape(truth.detach(), {truth.numel()});
  double t_norm = 0.0;
  for (double v : t.data()) t_norm += v * v;
  t_norm = std::sqrt(t_norm);
  if (form == SensForm::raw) {
    const Tensor d = p - t;
    return sqrt(sum(d * d)) * (1.0 / std::max(t_norm, 1e-12));
  }
  double p_norm = 0.0;
  for (double v : p.data()) p_norm += v * v;
  if (p_norm == 0.0 || t_norm == 0.0) throw DegenerateInputError("sensitivity_loss: zero-norm sensitivity in cosine form");
  const Tensor pn = p / sqrt(sum(p * p));
  const Tensor d = pn - t * (1.0 / t_norm);
  return sqrt(sum(d * d));
}

void fit_normalization(RnoConfig& cfg, const std::vector<Trajectory>& trajectories,
                       const std::vector<std::size_t>& ids) {
  double sq = 0.0, f_max = 0.0;
  std::size_t count = 0;
  for (auto id : ids) {
    const auto& t = trajectories.at(id);
    for (const auto& r : t.records) {
      for (double v : r.T) sq += v * v;
      count += r.T.size();
    }
    for (double f : t.spec.source) f_max = std::max(f_max, std::fabs(f));
  }
  if (count > 0 && sq > 0.0) cfg.solution_scale = std::sqrt(sq / static_cast<double>(count));
  if (f_max > 0.0) cfg.source_scale = f_max;
}

Query make_query(const Trajectory& traj, const TrainingSample& sample, const RnoConfig& cfg) {
  const std::size_t n = traj.spec.nodes();
  const auto& rec = traj.records.at(sample.step);
  Query q;
  q.structural = heat::structural_channels(traj.spec, cfg.source_scale);
  q.design = Tensor({n}, rec.rho);
  if (sample.reference) {
    const auto& ref = traj.records.at(*sample.reference);
    q.ref_solution = Tensor({n}, ref.T);
    q.ref_design = Tensor({n}, ref.rho);
  }
  return q;
}

Tensor sample_loss(const Trajectory& traj, const TrainingSample& sample, const RnoParams& params,
                   const RnoConfig& cfg, double alpha, SensForm form) {
  const std::size_t n = traj.spec.nodes();
  const auto& rec = traj.records.at(sample.step);
  Query q = make_query(traj, sample, cfg);
  if (alpha > 0.0) q.design.set_requires_grad(true);
  const Tensor pred = predict_solution(q, params, cfg);
  Tensor loss = data_loss(reshape(pred, {n, 1}), Tensor({n, 1}, rec.T));
  if (alpha > 0.0) {
    const Tensor j = heat::objective(pred, q.design, traj.spec);
    const Tensor s = grad(j, {q.design}, /*create_graph=*/true).front();
    // A flat target (fully clipped design) or a flat prediction has no direction
    // to match; the sample then contributes only its data term.
    auto nonzero = [](std::span<const double> v) {
      return std::any_of(v.begin(), v.end(), [](double e) { return e != 0.0; });
    };
    if (nonzero(rec.s) && nonzero(s.data())) loss = loss + sensitivity_loss(s, Tensor({n}, rec.s), form) * alpha;
  }
  return loss;
}

TrainingSample evaluation_sample(const Trajectory& traj, std::size_t step, const PairingConfig& pairing,
                                 std::uint64_t seed) {
  const auto candidates = reference_candidates(traj, step, pairing);
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + step);
  TrainingSample s;
  s.step = step;
  s.reference = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
  return s;
}

namespace {

struct SampleMetrics {
  double solution = 0.0, sensitivity = 0.0, objective = 0.0;
};

SampleMetrics evaluate_one(const Trajectory& traj, const TrainingSample& sample, const RnoParams& params,
                           const RnoConfig& cfg) {
  const auto& rec = traj.records[sample.step];
  Query q = make_query(traj, sample, cfg);
  q.design.set_requires_grad(true);
  const Tensor pred = predict_solution(q, params, cfg);
  const Tensor j = heat::objective(pred, q.design, traj.spec);
  const Tensor s = grad(j, {q.design}).front();
  SampleMetrics m;
  m.solution = relative_l2(pred.data(), rec.T);
  try {
    m.sensitivity = sensitivity_loss(s, Tensor({s.numel()}, rec.s), SensForm::cosine).item();
  } catch (const DegenerateInputError&) {
    m.sensitivity = std::numbers::sqrt2;  // no direction predicted
  }
  m.objective = std::fabs(j.item() - rec.J) / std::max(std::fabs(rec.J), 1e-12);
  return m;
}

}  // namespace

Metrics evaluate(const std::vector<Trajectory>& trajectories, const std::vector<std::size_t>& ids,
                 const RnoParams& params, const RnoConfig& cfg, bool with_reference, const PairingConfig& pairing,
                 std::size_t threads) {
  std::vector<std::pair<std::size_t, std::size_t>> items;
  for (auto id : ids) {
    for (std::size_t step = 0; step < trajectories.at(id).records.size(); ++step) items.emplace_back(id, step);
  }
  std::vector<SampleMetrics> results(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < items.size(); k = next++) {
      const auto& traj = trajectories[items[k].first];
      TrainingSample sample;
      if (with_reference) {
        sample = evaluation_sample(traj, items[k].second, pairing, items[k].first);
      } else {
        sample.step = items[k].second;
      }
      results[k] = evaluate_one(traj, sample, params, cfg);
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(threads, items.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  Metrics m;
  m.samples = items.size();
  for (const auto& r : results) {
    m.solution_error += r.solution;
    m.sensitivity_error += r.sensitivity;
    m.objective_error += r.objective;
  }
  if (m.samples > 0) {
    const double inv = 1.0 / static_cast<double>(m.samples);
    m.solution_error *= inv;
    m.sensitivity_error *= inv;
    m.objective_error *= inv;
  }
  return m;
}

RnoParams clone_params(const RnoParams& p) {
  return map_params(p, [](const Tensor& t) {
    return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
  });
}

namespace {

class Adam {
 public:
  explicit Adam(const std::vector<Tensor>& params) : params_(params) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void step(const GradMap& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (!grads.contains(params_[k])) continue;
      const Tensor g = grads.at(params_[k]);
      const auto gd = g.data();
      auto pd = params_[k].mutable_data();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        m_[k][i] = kBeta1 * m_[k][i] + (1.0 - kBeta1) * gd[i];
        v_[k][i] = kBeta2 * v_[k][i] + (1.0 - kBeta2) * gd[i] * gd[i];
        pd[i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace

TrainResult train(const std::vector<Trajectory>& trajectories, const std::vector<std::size_t>& train_ids,
                  const std::vector<std::size_t>& test_ids, RnoConfig model, const TrainConfig& cfg,
                  const std::optional<RnoParams>& init) {
  cfg.validate();
  if (train_ids.empty()) throw UsageError("train: no training trajectories");
  RnoParams params;
  if (init) {
    params = clone_params(*init);
  } else {
    fit_normalization(model, trajectories, train_ids);
    params = make_rno_params(model, cfg.seed);
  }
  model.validate();

  std::vector<std::pair<std::size_t, std::size_t>> items;
  for (auto id : train_ids) {
    for (std::size_t step = 0; step < trajectories.at(id).records.size(); ++step) items.emplace_back(id, step);
  }
  const std::size_t batches = (items.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * batches);

  Adam adam(params.tensors());
  std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dull);
  TrainResult result;
  result.config = model;
  result.params = clone_params(params);
  double best = std::numeric_limits<double>::infinity();
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      std::swap(items[i], items[static_cast<std::size_t>(rng() % (i + 1))]);
    }
    double epoch_loss = 0.0;
    double lr = cfg.learning_rate;
    for (std::size_t b = 0; b < batches; ++b) {
      lr = cfg.cosine_schedule
               ? 0.5 * cfg.learning_rate *
                     (1.0 + std::cos(std::numbers::pi * static_cast<double>(global_step) / static_cast<double>(total_steps)))
               : cfg.learning_rate;
      const std::size_t lo = b * cfg.batch_size, hi = std::min(items.size(), lo + cfg.batch_size);
      Tensor total;
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& traj = trajectories[items[k].first];
        const auto sample = pair_reference(traj, items[k].second, cfg.pairing, rng);
        const Tensor l = sample_loss(traj, sample, params, model, cfg.alpha, cfg.sens_form);
        total = total.defined() ? total + l : l;
      }
      total = total * (1.0 / static_cast<double>(hi - lo));
      const double value = total.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      epoch_loss += value * static_cast<double>(hi - lo);
      adam.step(backward(total), lr);
      ++global_step;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(items.size());
    stats.learning_rate = lr;
    if (!test_ids.empty()) {
      const Metrics m = evaluate(trajectories, test_ids, params, model, true, cfg.pairing, cfg.threads);
      stats.test_loss = m.solution_error + cfg.alpha * m.sensitivity_error;
    } else {
      stats.test_loss = stats.train_loss;
    }
    if (stats.test_loss < best) {
      best = stats.test_loss;
      result.best_epoch = epoch;
      result.params = clone_params(params);
    }
    logging::info("epoch " + std::to_string(epoch) + " train " + std::to_string(stats.train_loss) + " test " +
                  std::to_string(stats.test_loss));
    result.curve.push_back(stats);
  }
  if (cfg.epochs == 0) result.params = clone_params(params);
  if (!test_ids.empty()) {
    result.with_reference = evaluate(trajectories, test_ids, result.params, model, true, cfg.pairing, cfg.threads);
    result.without_reference = evaluate(trajectories, test_ids, result.params, model, false, cfg.pairing, cfg.threads);
  }
  return result;
}

}  // namespace pdeco
