#include "pdeco/layers.hpp"

#include <cmath>

#include "pdeco/error.hpp"

namespace pdeco {

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), /*requires_grad=*/true);
}

void require_features(const Tensor& x, std::size_t channels, const char* where) {
  if (x.dim() != 2 || x.size(1) != channels) {
    throw DimensionError(std::string(where) + ": expected [N, " + std::to_string(channels) + "] features, got " +
                         to_string(x.shape()));
  }
}

}  // namespace

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? y + bias : y;
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = uniform({in, out}, bound, rng);
  if (with_bias) l.bias = uniform({out}, bound, rng);
  return l;
}

Tensor PointwiseMlp::operator()(const Tensor& x) const { return second(gelu(first(x))); }

PointwiseMlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  PointwiseMlp mlp;
  mlp.first = make_linear(in, hidden, rng);
  mlp.second = make_linear(hidden, out, rng);
  return mlp;
}

// ---------------------------------------------------------------------------
// Virtual-Fourier

void VFConfig::validate() const {
  if (sensors < 1) throw ConfigError("VF: sensor count must be positive");
  if (channels < 1) throw ConfigError("VF: channel count must be positive");
  if (modes < 1 || modes > sensors / 2 + 1) {
    throw ConfigError("VF: modes must lie in [1, " + std::to_string(sensors / 2 + 1) + "], got " +
                      std::to_string(modes));
  }
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("VF: head count " + std::to_string(heads) + " must divide channel count " +
                      std::to_string(channels));
  }
}

std::vector<Tensor> VFParams::tensors() const {
  std::vector<Tensor> out{project};
  for (const auto& r : spectral) {
    out.push_back(r.re);
    out.push_back(r.im);
  }
  out.push_back(skip_weight);
  out.push_back(skip_bias);
  return out;
}

VFParams make_vf_params(const VFConfig& cfg, Rng& rng) {
  cfg.validate();
  VFParams p;
  const double c = static_cast<double>(cfg.channels);
  p.project = uniform({cfg.channels, cfg.sensors}, 1.0 / std::sqrt(c), rng);
  const std::size_t w = cfg.head_width();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const double bound = 1.0 / static_cast<double>(w);
    Tensor re = uniform({cfg.modes, w, w}, bound, rng);
    Tensor im = uniform({cfg.modes, w, w}, bound, rng);
    p.spectral.push_back({re, im});
  }
  p.skip_weight = uniform({cfg.channels, cfg.channels}, 1.0 / std::sqrt(c), rng);
  p.skip_bias = uniform({cfg.channels}, 1.0 / std::sqrt(c), rng);
  return p;
}

Tensor project_logits(const Tensor& x, const VFParams& p) {
  require_features(x, p.project.size(0), "project_logits");
  return matmul(x, p.project) * (1.0 / std::sqrt(static_cast<double>(p.project.size(0))));
}

Tensor aggregate(const Tensor& x, const Tensor& logits) {
  if (logits.dim() != 2 || logits.size(0) != x.size(0)) {
    throw DimensionError("aggregate: logits " + to_string(logits.shape()) + " do not match points " +
                         to_string(x.shape()));
  }
  // Softmax over the point axis: each sensor is a probability-weighted mean of points.
  return matmul(softmax(logits, 0), x, /*trans_a=*/true);
}

Tensor spectral_mix(const Tensor& z, const VFParams& p, const VFConfig& cfg) {
  require_features(z, cfg.channels, "spectral_mix");
  if (z.size(0) != cfg.sensors) throw DimensionError("spectral_mix: signal length must equal the sensor count");
  if (p.spectral.size() != cfg.heads) throw ConfigError("spectral_mix: one weight block per head required");
  const ComplexTensor spec = dft_axis(z, cfg.modes);
  const std::size_t w = cfg.head_width();
  std::vector<Tensor> re_parts, im_parts;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Tensor re = slice(spec.re, 1, h * w, w);
    Tensor im = slice(spec.im, 1, h * w, w);
    const ComplexTensor& r = p.spectral[h];
    re_parts.push_back(rowmix(r.re, re) - rowmix(r.im, im));
    im_parts.push_back(rowmix(r.re, im) + rowmix(r.im, re));
  }
  return idft_axis({concat(re_parts, 1), concat(im_parts, 1)}, cfg.sensors);
}

Tensor backproject(const Tensor& z, const Tensor& logits) {
  if (logits.dim() != 2 || logits.size(1) != z.size(0)) {
    throw DimensionError("backproject: logits " + to_string(logits.shape()) + " do not match sensors " +
                         to_string(z.shape()));
  }
  return matmul(softmax(logits, 1), z);
}

Tensor vf_layer(const Tensor& x, const VFParams& p, const VFConfig& cfg) {
  require_features(x, cfg.channels, "vf_layer");
  // The same logits drive aggregation and back-projection.
  const Tensor logits = project_logits(x, p);
  const Tensor z = aggregate(x, logits);
  const Tensor mixed = spectral_mix(z, p, cfg);
  const Tensor back = backproject(mixed, logits);
  return gelu(matmul(x, p.skip_weight) + p.skip_bias + back);
}

namespace {

struct Dense {
  std::size_t rows, cols;
  std::vector<double> v;
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

Dense dense(const Tensor& t) { return {t.size(0), t.size(1), {t.data().begin(), t.data().end()}}; }

// logits and their directional derivative, computed with plain loops.
std::pair<Dense, Dense> logits_and_tangent(const Dense& x, const Dense& project, const Dense& dir) {
  const std::size_t n = x.rows, c = x.cols, m = project.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));
  Dense l{n, m, std::vector<double>(n * m, 0.0)};
  Dense dl{n, m, std::vector<double>(n * m, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t a = 0; a < c; ++a) {
        l(i, j) += x(i, a) * project(a, j);
        dl(i, j) += dir(i, a) * project(a, j);
      }
      l(i, j) *= scale;
      dl(i, j) *= scale;
    }
  return {l, dl};
}

}  // namespace

Tensor analytic_aggregate_jvp(const Tensor& x_t, const Tensor& project_t, const Tensor& dir_t) {
  const Dense x = dense(x_t), project = dense(project_t), dir = dense(dir_t);
  const auto [l, dl] = logits_and_tangent(x, project, dir);
  const std::size_t n = x.rows, c = x.cols, m = project.cols;
  // w1: softmax over points for every sensor column.
  Dense w{n, m, std::vector<double>(n * m)};
  for (std::size_t j = 0; j < m; ++j) {
    double peak = -INFINITY, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, l(i, j));
    for (std::size_t i = 0; i < n; ++i) total += (w(i, j) = std::exp(l(i, j) - peak));
    for (std::size_t i = 0; i < n; ++i) w(i, j) /= total;
  }
  std::vector<double> dz(m * c, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    // dw_ij = sum_k w_ij (delta_ik - w_kj) dl_kj
    double weighted = 0.0;
    for (std::size_t k = 0; k < n; ++k) weighted += w(k, j) * dl(k, j);
    for (std::size_t i = 0; i < n; ++i) {
      const double dw = w(i, j) * (dl(i, j) - weighted);
      for (std::size_t a = 0; a < c; ++a) dz[j * c + a] += dw * x(i, a) + w(i, j) * dir(i, a);
    }
  }
  return Tensor({m, c}, std::move(dz));
}

Tensor analytic_backproject_jvp(const Tensor& x_t, const Tensor& project_t, const Tensor& z_t,
                                const Tensor& dir_t) {
  const Dense x = dense(x_t), project = dense(project_t), z = dense(z_t), dir = dense(dir_t);
  const auto [l, dl] = logits_and_tangent(x, project, dir);
  const std::size_t n = x.rows, m = project.cols, c = z.cols;
  std::vector<double> dout(n * c, 0.0);
  std::vector<double> w(m);
  for (std::size_t i = 0; i < n; ++i) {
    double peak = -INFINITY, total = 0.0;
    for (std::size_t j = 0; j < m; ++j) peak = std::max(peak, l(i, j));
    for (std::size_t j = 0; j < m; ++j) total += (w[j] = std::exp(l(i, j) - peak));
    for (auto& v : w) v /= total;
    double weighted = 0.0;
    for (std::size_t j = 0; j < m; ++j) weighted += w[j] * dl(i, j);
    for (std::size_t j = 0; j < m; ++j) {
      const double dw = w[j] * (dl(i, j) - weighted);
      for (std::size_t a = 0; a < c; ++a) dout[i * c + a] += dw * z(j, a);
    }
  }
  return Tensor({n, c}, std::move(dout));
}

Tensor analytic_aggregate_jacobian(const Tensor& x, const Tensor& project) {
  const std::size_t n = x.size(0), c = x.size(1), m = project.size(1);
  std::vector<double> jac(m * c * n * c);
  for (std::size_t col = 0; col < n * c; ++col) {
    std::vector<double> e(n * c, 0.0);
    e[col] = 1.0;
    const Tensor dz = analytic_aggregate_jvp(x, project, Tensor({n, c}, std::move(e)));
    for (std::size_t row = 0; row < m * c; ++row) jac[row * n * c + col] = dz.data()[row];
  }
  return Tensor({m * c, n * c}, std::move(jac));
}

// ---------------------------------------------------------------------------
// Linear attention

std::vector<Tensor> LAParams::tensors() const { return {query, key, value, skip_weight, skip_bias}; }

LAParams make_la_params(std::size_t channels, std::size_t heads, Rng& rng) {
  if (heads < 1 || channels % heads != 0) throw ConfigError("LA: head count must divide channel count");
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  LAParams p;
  p.query = uniform({channels, channels}, bound, rng);
  p.key = uniform({channels, channels}, bound, rng);
  p.value = uniform({channels, channels}, bound, rng);
  p.skip_weight = uniform({channels, channels}, bound, rng);
  p.skip_bias = uniform({channels}, bound, rng);
  p.heads = heads;
  return p;
}

Tensor linear_attention(const Tensor& x, const LAParams& p) {
  const std::size_t c = p.query.size(0);
  require_features(x, c, "linear_attention");
  const Tensor q = elu(matmul(x, p.query)) + 1.0;
  const Tensor k = elu(matmul(x, p.key)) + 1.0;
  const Tensor v = matmul(x, p.value);
  const std::size_t w = c / p.heads;
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor qh = slice(q, 1, h * w, w);
    const Tensor kh = slice(k, 1, h * w, w);
    const Tensor vh = slice(v, 1, h * w, w);
    const Tensor kv = matmul(kh, vh, /*trans_a=*/true);                      // [w, w]
    const Tensor norm = matmul(qh, sum(kh, 0), false, /*trans_b=*/true);    // [N, 1]
    heads.push_back(matmul(qh, kv) / norm);
  }
  return concat(heads, 1);
}

Tensor linear_attention_layer(const Tensor& x, const LAParams& p) {
  return gelu(matmul(x, p.skip_weight) + p.skip_bias + linear_attention(x, p));
}

}  // namespace pdeco
