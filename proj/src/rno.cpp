#include "pdeco/rno.hpp"

#include <json.hpp>

#include "pdeco/error.hpp"

namespace pdeco {

std::string to_string(LayerKind kind) { return kind == LayerKind::vf ? "vf" : "linear_attention"; }

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "vf") return LayerKind::vf;
  if (name == "linear_attention" || name == "la") return LayerKind::linear_attention;
  throw ConfigError("unknown layer kind '" + name + "' (expected vf or linear_attention)");
}

void RnoConfig::validate() const {
  if (depth < 1) throw ConfigError("RNO: depth must be at least 1");
  if (lambda_channels < 1 || solution_channels < 1 || phi_channels < 1) {
    throw ConfigError("RNO: channel counts must be positive");
  }
  if (!(solution_scale > 0.0) || !(source_scale > 0.0)) throw ConfigError("RNO: scales must be positive");
  if (layer == LayerKind::vf) {
    vf().validate();
  } else if (heads < 1 || channels % heads != 0) {
    throw ConfigError("RNO: head count must divide channel count");
  }
}

std::string RnoConfig::to_json() const {
  nlohmann::json j{{"layer", to_string(layer)},
                   {"depth", depth},
                   {"channels", channels},
                   {"sensors", sensors},
                   {"modes", modes},
                   {"heads", heads},
                   {"lambda_channels", lambda_channels},
                   {"solution_channels", solution_channels},
                   {"phi_channels", phi_channels},
                   {"solution_scale", solution_scale},
                   {"source_scale", source_scale}};
  return j.dump();
}

RnoConfig RnoConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("model config: ") + e.what(), e.byte);
  }
  RnoConfig cfg;
  try {
    cfg.layer = layer_kind_from_string(j.at("layer").get<std::string>());
    cfg.depth = j.at("depth").get<std::size_t>();
    cfg.channels = j.at("channels").get<std::size_t>();
    cfg.sensors = j.at("sensors").get<std::size_t>();
    cfg.modes = j.at("modes").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.lambda_channels = j.at("lambda_channels").get<std::size_t>();
    cfg.solution_channels = j.at("solution_channels").get<std::size_t>();
    cfg.phi_channels = j.at("phi_channels").get<std::size_t>();
    cfg.solution_scale = j.at("solution_scale").get<double>();
    cfg.source_scale = j.at("source_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

void append(std::vector<Tensor>& out, const Linear& l) {
  out.push_back(l.weight);
  if (l.bias.defined()) out.push_back(l.bias);
}

void append(std::vector<Tensor>& out, const PointwiseMlp& m) {
  append(out, m.first);
  append(out, m.second);
}

}  // namespace

std::vector<Tensor> RnoParams::tensors() const {
  std::vector<Tensor> out;
  append(out, lift_design);
  append(out, lift_solution);
  append(out, lift_phi);
  for (const auto& l : vf_layers) {
    for (const auto& t : l.tensors()) out.push_back(t);
  }
  for (const auto& l : la_layers) {
    for (const auto& t : l.tensors()) out.push_back(t);
  }
  append(out, project);
  out.push_back(no_reference);
  return out;
}

RnoParams make_rno_params(const RnoConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t c = cfg.channels;
  RnoParams p;
  p.lift_design = make_mlp(cfg.lambda_channels, c, c, rng);
  p.lift_solution = make_mlp(cfg.solution_channels, c, c, rng);
  p.lift_phi = make_mlp(cfg.phi_channels, c, c, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    if (cfg.layer == LayerKind::vf) {
      p.vf_layers.push_back(make_vf_params(cfg.vf(), rng));
    } else {
      p.la_layers.push_back(make_la_params(c, cfg.heads, rng));
    }
  }
  p.project = make_mlp(c, c, cfg.solution_channels, rng);
  std::normal_distribution<double> normal(0.0, 0.1);
  std::vector<double> emb(c);
  for (auto& v : emb) v = normal(rng);
  p.no_reference = Tensor({c}, std::move(emb), true);
  return p;
}

RnoParams map_params(const RnoParams& p, const std::function<Tensor(const Tensor&)>& replace) {
  auto map_linear = [&](const Linear& l) {
    Linear out;
    out.weight = replace(l.weight);
    if (l.bias.defined()) out.bias = replace(l.bias);
    return out;
  };
  auto map_mlp = [&](const PointwiseMlp& m) { return PointwiseMlp{map_linear(m.first), map_linear(m.second)}; };
  RnoParams out;
  out.lift_design = map_mlp(p.lift_design);
  out.lift_solution = map_mlp(p.lift_solution);
  out.lift_phi = map_mlp(p.lift_phi);
  for (const auto& l : p.vf_layers) {
    VFParams v;
    v.project = replace(l.project);
    for (const auto& r : l.spectral) v.spectral.push_back({replace(r.re), replace(r.im)});
    v.skip_weight = replace(l.skip_weight);
    v.skip_bias = replace(l.skip_bias);
    out.vf_layers.push_back(std::move(v));
  }
  for (const auto& l : p.la_layers) {
    LAParams a;
    a.query = replace(l.query);
    a.key = replace(l.key);
    a.value = replace(l.value);
    a.skip_weight = replace(l.skip_weight);
    a.skip_bias = replace(l.skip_bias);
    a.heads = l.heads;
    out.la_layers.push_back(std::move(a));
  }
  out.project = map_mlp(p.project);
  out.no_reference = replace(p.no_reference);
  return out;
}

namespace {

void require_matrix(const Tensor& t, std::size_t rows, std::size_t cols, const char* what) {
  if (t.dim() != 2 || t.size(0) != rows || t.size(1) != cols) {
    throw DimensionError(std::string("rno_forward: ") + what + " must be [" + std::to_string(rows) + ", " +
                         std::to_string(cols) + "], got " + to_string(t.shape()));
  }
}

}  // namespace

Tensor rno_forward(const RnoInput& inp, const RnoParams& p, const RnoConfig& cfg) {
  if (!inp.lambda_q.defined() || inp.lambda_q.dim() != 2) throw DimensionError("rno_forward: lambda_q must be [N, d]");
  const std::size_t n = inp.lambda_q.size(0);
  require_matrix(inp.lambda_q, n, cfg.lambda_channels, "lambda_q");
  if (inp.has_ref != inp.u_ref.defined() || inp.has_ref != inp.phi.defined()) {
    throw DimensionError("rno_forward: u_ref and phi must both be present exactly when has_ref is set");
  }
  Tensor hidden = p.lift_design(inp.lambda_q);
  if (inp.has_ref) {
    require_matrix(inp.u_ref, n, cfg.solution_channels, "u_ref");
    require_matrix(inp.phi, n, cfg.phi_channels, "phi");
    hidden = hidden + p.lift_solution(inp.u_ref) + p.lift_phi(inp.phi);
  } else {
    // Zero-filled reference plus the learned marker.
    hidden = hidden + p.lift_solution(Tensor::zeros({n, cfg.solution_channels})) +
             p.lift_phi(Tensor::zeros({n, cfg.phi_channels})) + p.no_reference;
  }
  if (cfg.layer == LayerKind::vf) {
    const VFConfig vf = cfg.vf();
    for (const auto& layer : p.vf_layers) hidden = vf_layer(hidden, layer, vf);
  } else {
    for (const auto& layer : p.la_layers) hidden = linear_attention_layer(hidden, layer);
  }
  return p.project(hidden);
}

RnoInput assemble_input(const Query& q, const RnoConfig& cfg) {
  const std::size_t n = q.design.numel();
  if (q.structural.dim() != 2 || q.structural.size(0) != n || q.structural.size(1) + 1 != cfg.lambda_channels) {
    throw DimensionError("query: structural channels must be [N, d_lambda - 1] with N = design size");
  }
  if (q.ref_solution.defined() != q.ref_design.defined()) {
    throw DimensionError("query: reference solution and design must both be present or both absent");
  }
  const Tensor design = reshape(q.design, {n, 1});
  RnoInput inp;
  inp.lambda_q = concat({q.structural, design}, 1);
  if (q.has_ref()) {
    if (q.ref_solution.numel() != n || q.ref_design.numel() != n) {
      throw DimensionError("query: reference fields must have one value per node");
    }
    inp.has_ref = true;
    inp.u_ref = reshape(q.ref_solution, {n, 1}) * (1.0 / cfg.solution_scale);
    inp.phi = reshape(q.ref_design, {n, 1}) - design;
  }
  return inp;
}

Tensor predict_solution(const Query& q, const RnoParams& p, const RnoConfig& cfg) {
  const std::size_t n = q.design.numel();
  const Tensor raw = rno_forward(assemble_input(q, cfg), p, cfg);
  // Dirichlet nodes are exactly zero; column 3 of the structural block is the sink mask.
  const auto sink = q.structural.data();
  std::vector<double> free(n);
  for (std::size_t i = 0; i < n; ++i) free[i] = sink[i * 4 + 3] != 0.0 ? 0.0 : cfg.solution_scale;
  return reshape(raw, {n}) * Tensor({n}, std::move(free));
}

Tensor predict_objective(const Query& q, const RnoParams& p, const RnoConfig& cfg, const heat::ProblemSpec& spec) {
  return heat::objective(predict_solution(q, p, cfg), q.design, spec);
}

Tensor predict_sensitivity(const Query& q, const RnoParams& p, const RnoConfig& cfg, const heat::ProblemSpec& spec,
                           bool create_graph) {
  Query local = q;
  if (!local.design.requires_grad()) {
    local.design = Tensor(local.design.shape(), std::vector<double>(q.design.data().begin(), q.design.data().end()), true);
  }
  const Tensor j = predict_objective(local, p, cfg, spec);
  return grad(j, {local.design}, create_graph).front();
}

}  // namespace pdeco
