#pragma once

// Reference neural operator: (lambda_q, u_ref, phi) -> u_q.
//
//   hidden = P1(lambda_q) + P2(u_ref) + P3(phi)            with a reference
//   hidden = P1(lambda_q) + no_reference_embedding           without one
//   u_q    = Q(L_depth(... L_1(hidden)))
//
// L is a Virtual-Fourier or a linear-attention layer.

#include <cstdint>
#include <string>
#include <vector>

#include "pdeco/heat_problem.hpp"
#include "pdeco/layers.hpp"
#include "pdeco/tensor.hpp"

namespace pdeco {

enum class LayerKind { vf, linear_attention };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct RnoConfig {
  LayerKind layer = LayerKind::vf;
  std::size_t depth = 2;
  std::size_t channels = 16;
  std::size_t sensors = 16;
  std::size_t modes = 8;
  std::size_t heads = 2;
  std::size_t lambda_channels = 5;    // x, y, f, sink, design (design last)
  std::size_t solution_channels = 1;  // T
  std::size_t phi_channels = 1;       // design difference
  // Normalization fitted on training data; stored with the model.
  double solution_scale = 1.0;
  double source_scale = 1.0;

  VFConfig vf() const { return {sensors, channels, modes, heads}; }
  void validate() const;

  std::string to_json() const;
  static RnoConfig from_json(const std::string& text);
};

struct RnoParams {
  PointwiseMlp lift_design;
  PointwiseMlp lift_solution;
  PointwiseMlp lift_phi;
  std::vector<VFParams> vf_layers;
  std::vector<LAParams> la_layers;
  PointwiseMlp project;
  Tensor no_reference;  // [C]

  /// Every trainable tensor in declaration order (the checkpoint order).
  std::vector<Tensor> tensors() const;
};

RnoParams make_rno_params(const RnoConfig& cfg, std::uint64_t seed);
/// Copy with every tensor replaced by `replace(old)`; structure preserved.
RnoParams map_params(const RnoParams& p, const std::function<Tensor(const Tensor&)>& replace);

struct RnoInput {
  Tensor lambda_q;  // [N, d_lambda]
  Tensor u_ref;     // [N, d_u], undefined without reference
  Tensor phi;       // [N, d_phi], undefined without reference
  bool has_ref = false;
};

/// Throws DimensionError on inconsistent shapes or a half-present reference.
Tensor rno_forward(const RnoInput& inp, const RnoParams& p, const RnoConfig& cfg);

// ---------------------------------------------------------------------------
// Heat-problem adapters. The design is the control variable; the structural
// channels are constants of the instance.

struct Query {
  Tensor structural;    // [N, 4] from heat::structural_channels
  Tensor design;        // [N]
  Tensor ref_solution;  // [N] temperature in physical units, or undefined
  Tensor ref_design;    // [N], or undefined

  bool has_ref() const { return ref_solution.defined(); }
};

/// Builds the network input; phi = ref_design - design stays on the graph.
RnoInput assemble_input(const Query& q, const RnoConfig& cfg);
/// Predicted temperature [N] in physical units, zero on sink nodes.
Tensor predict_solution(const Query& q, const RnoParams& p, const RnoConfig& cfg);
Tensor predict_objective(const Query& q, const RnoParams& p, const RnoConfig& cfg, const heat::ProblemSpec& spec);
/// dJ/d(design) through the network, including the phi path. The design
/// tensor of `q` is replaced by a fresh leaf when it does not require grad.
Tensor predict_sensitivity(const Query& q, const RnoParams& p, const RnoConfig& cfg,
                           const heat::ProblemSpec& spec, bool create_graph = false);

}  // namespace pdeco
