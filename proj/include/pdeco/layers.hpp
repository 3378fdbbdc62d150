#pragma once

// Point-cloud operator layers: the Virtual-Fourier layer, a kernelized
// linear-attention baseline, and pointwise perceptrons for lifting and
// projection. All layers take per-point features x of shape [N, C] where N
// may change from case to case.

#include <cstdint>
#include <random>
#include <vector>

#include "pdeco/tensor.hpp"

namespace pdeco {

using Rng = std::mt19937_64;

/// Affine map applied row-wise: y = x W + b with W [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when the map has no bias

  Tensor operator()(const Tensor& x) const;
};

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

/// Two-layer pointwise perceptron with a GeLU between the layers.
struct PointwiseMlp {
  Linear first;
  Linear second;

  Tensor operator()(const Tensor& x) const;
};

PointwiseMlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

// ---------------------------------------------------------------------------
// Virtual-Fourier layer

struct VFConfig {
  std::size_t sensors = 16;   // M, size of the virtual 1-D signal
  std::size_t channels = 16;  // C
  std::size_t modes = 8;      // k retained frequencies
  std::size_t heads = 2;      // channel groups for spectral mixing

  std::size_t head_width() const { return channels / heads; }
  /// Throws ConfigError unless 1 <= k <= M/2+1 and heads divides C.
  void validate() const;
};

struct VFParams {
  Tensor project;                       // [C, M], linear logit map
  std::vector<ComplexTensor> spectral;  // per head [k, C/n, C/n]
  Tensor skip_weight;                   // [C, C]
  Tensor skip_bias;                     // [C]

  std::vector<Tensor> tensors() const;
};

VFParams make_vf_params(const VFConfig& cfg, Rng& rng);

/// l = x P / sqrt(C); row i only depends on x_i.
Tensor project_logits(const Tensor& x, const VFParams& p);
/// z_j = sum_i softmax_i(l)_{ij} x_i : [N, C] -> [M, C].
Tensor aggregate(const Tensor& x, const Tensor& logits);
/// Truncated spectral channel mixing, within each head.
Tensor spectral_mix(const Tensor& z, const VFParams& p, const VFConfig& cfg);
/// x'_i = sum_j softmax_j(l)_{ij} z_j : [M, C] -> [N, C].
Tensor backproject(const Tensor& z, const Tensor& logits);
/// gelu(x W + b + x') with x' from aggregate -> spectral_mix -> backproject.
Tensor vf_layer(const Tensor& x, const VFParams& p, const VFConfig& cfg);

/// Directional derivative of aggregate(x, project_logits(x)) along `direction`,
/// assembled from the softmax Jacobian ds_j/dt_i = s_j (delta_ij - s_i).
Tensor analytic_aggregate_jvp(const Tensor& x, const Tensor& project, const Tensor& direction);
/// Directional derivative of backproject(z, project_logits(x)) w.r.t. x, z held fixed.
Tensor analytic_backproject_jvp(const Tensor& x, const Tensor& project, const Tensor& z,
                                const Tensor& direction);
/// Full Jacobian d vec(z) / d vec(x) of the aggregation, shape [M*C, N*C].
Tensor analytic_aggregate_jacobian(const Tensor& x, const Tensor& project);

// ---------------------------------------------------------------------------
// Linear-attention baseline

struct LAParams {
  Tensor query;  // [C, C]
  Tensor key;    // [C, C]
  Tensor value;  // [C, C]
  Tensor skip_weight;
  Tensor skip_bias;
  std::size_t heads = 1;

  std::vector<Tensor> tensors() const;
};

LAParams make_la_params(std::size_t channels, std::size_t heads, Rng& rng);

/// Per-head phi(Q) (phi(K)^T V) / (phi(Q) phi(K)^T 1) with phi(x) = elu(x) + 1.
Tensor linear_attention(const Tensor& x, const LAParams& p);
/// gelu(x W + b + linear_attention(x)).
Tensor linear_attention_layer(const Tensor& x, const LAParams& p);

}  // namespace pdeco
