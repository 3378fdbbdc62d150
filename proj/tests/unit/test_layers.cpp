#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "pdeco/error.hpp"
#include "pdeco/gradcheck.hpp"
#include "pdeco/layers.hpp"

using namespace pdeco;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t c = x.size(1);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = x.at(perm[i], k);
  return Tensor(x.shape(), std::move(out));
}

double gelu_ref(double v) { return 0.5 * v * std::erfc(-v / std::numbers::sqrt2); }

// Spectral weights that act as the identity on every retained mode.
void set_identity_spectral(VFParams& p, const VFConfig& cfg) {
  const std::size_t w = cfg.head_width();
  for (auto& r : p.spectral) {
    std::vector<double> re(cfg.modes * w * w, 0.0);
    for (std::size_t k = 0; k < cfg.modes; ++k)
      for (std::size_t i = 0; i < w; ++i) re[(k * w + i) * w + i] = 1.0;
    r.re = Tensor({cfg.modes, w, w}, re);
    r.im = Tensor::zeros({cfg.modes, w, w});
  }
}

}  // namespace

TEST(VFConfig, Validation) {
  EXPECT_THROW((VFConfig{8, 4, 6, 2}.validate()), ConfigError);
  EXPECT_THROW((VFConfig{8, 4, 2, 3}.validate()), ConfigError);
  EXPECT_NO_THROW((VFConfig{8, 4, 5, 2}.validate()));
}

TEST(ProjectLogits, Examples) {
  Rng rng(1);
  VFParams p = make_vf_params({4, 1, 1, 1}, rng);
  p.project = Tensor::zeros({1, 4});
  EXPECT_EQ(values(project_logits(Tensor({2, 1}, {3, 4}), p)), std::vector<double>(8, 0.0));

  p.project = Tensor({1, 1}, {1.0});
  EXPECT_EQ(values(project_logits(Tensor({1, 1}, {2.0}), p)), (std::vector<double>{2.0}));

  // C = 4 with one-hot rows: each logit row is a projection row over sqrt(4).
  const Tensor proj = random_tensor({4, 3}, rng);
  p.project = proj;
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  const Tensor l = project_logits(Tensor({4, 4}, eye), p);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(l.at(i, j), proj.at(i, j) / 2.0);
}

TEST(Aggregate, EqualLogitsGiveMeanAndSingletonIsIdentity) {
  Rng rng(2);
  const Tensor x = random_tensor({5, 3}, rng);
  const Tensor z = aggregate(x, Tensor::full({5, 4}, 0.7));
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0.0;
      for (std::size_t i = 0; i < 5; ++i) m += x.at(i, c);
      EXPECT_NEAR(z.at(j, c), m / 5.0, 1e-15);
    }
  }
  const Tensor x1 = random_tensor({1, 3}, rng);
  const Tensor z1 = aggregate(x1, random_tensor({1, 4}, rng));
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(z1.at(j, c), x1.at(0, c));
}

TEST(Aggregate, MatchesTwoLoopOracle) {
  Rng rng(3);
  const Tensor x = random_tensor({3, 2}, rng), l = random_tensor({3, 2}, rng, -2, 2);
  const Tensor z = aggregate(x, l);
  for (std::size_t j = 0; j < 2; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) total += std::exp(l.at(i, j));
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 3; ++i) acc += std::exp(l.at(i, j)) / total * x.at(i, c);
      EXPECT_NEAR(z.at(j, c), acc, 1e-14);
    }
  }
}

TEST(Backproject, SingletonAndUniformAndOracle) {
  Rng rng(4);
  const Tensor z1 = random_tensor({1, 3}, rng);
  const Tensor b1 = backproject(z1, random_tensor({4, 1}, rng));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(b1.at(i, c), z1.at(0, c));

  const Tensor z = random_tensor({3, 2}, rng);
  const Tensor bu = backproject(z, Tensor::zeros({2, 3}));
  for (std::size_t c = 0; c < 2; ++c) {
    const double m = (z.at(0, c) + z.at(1, c) + z.at(2, c)) / 3.0;
    EXPECT_NEAR(bu.at(0, c), m, 1e-15);
    EXPECT_NEAR(bu.at(1, c), m, 1e-15);
  }

  const Tensor l = random_tensor({2, 3}, rng, -2, 2);
  const Tensor b = backproject(z, l);
  for (std::size_t i = 0; i < 2; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 3; ++j) total += std::exp(l.at(i, j));
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 3; ++j) acc += std::exp(l.at(i, j)) / total * z.at(j, c);
      EXPECT_NEAR(b.at(i, c), acc, 1e-14);
    }
  }
}

TEST(SpectralMix, IdentityAndZeroWeights) {
  Rng rng(5);
  for (std::size_t m : {7u, 8u}) {
    const VFConfig cfg{m, 4, m / 2 + 1, 2};
    VFParams p = make_vf_params(cfg, rng);
    set_identity_spectral(p, cfg);
    const Tensor z = random_tensor({m, 4}, rng);
    const Tensor out = spectral_mix(z, p, cfg);
    for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_NEAR(out.at(i), z.at(i), 1e-12);

    for (auto& r : p.spectral) {
      r.re = Tensor::zeros(r.re.shape());
      r.im = Tensor::zeros(r.im.shape());
    }
    const Tensor zeroed = spectral_mix(z, p, cfg);
    for (double v : zeroed.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(SpectralMix, SingleModeMixesTheChannelMeans) {
  Rng rng(6);
  const VFConfig cfg{8, 4, 1, 2};
  VFParams p = make_vf_params(cfg, rng);
  for (auto& r : p.spectral) r.im = Tensor::zeros(r.im.shape());
  const Tensor z = random_tensor({8, 4}, rng);
  const Tensor out = spectral_mix(z, p, cfg);
  // Oracle: mode-0 coefficient is the column sum; inverse divides by M.
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t o = 0; o < 2; ++o) {
      double expected = 0.0;
      for (std::size_t i = 0; i < 2; ++i) {
        double col = 0.0;
        for (std::size_t t = 0; t < 8; ++t) col += z.at(t, h * 2 + i);
        expected += p.spectral[h].re.at(o * 2 + i) * col / 8.0;
      }
      for (std::size_t t = 0; t < 8; ++t) EXPECT_NEAR(out.at(t, h * 2 + o), expected, 1e-13);
    }
  }
}

TEST(SpectralMix, Linearity) {
  Rng rng(7);
  const VFConfig cfg{8, 4, 3, 2};
  const VFParams p = make_vf_params(cfg, rng);
  const Tensor z1 = random_tensor({8, 4}, rng), z2 = random_tensor({8, 4}, rng);
  const Tensor lhs = spectral_mix(z1 * 1.7 + z2 * -0.4, p, cfg);
  const Tensor rhs = spectral_mix(z1, p, cfg) * 1.7 + spectral_mix(z2, p, cfg) * -0.4;
  for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.at(i), rhs.at(i), 1e-12);
}

TEST(VFLayer, PermutationEquivarianceOnVariableN) {
  Rng rng(8);
  const VFConfig cfg{8, 6, 3, 3};
  const VFParams p = make_vf_params(cfg, rng);
  for (std::size_t n : {7u, 16u, 33u}) {
    const Tensor x = random_tensor({n, 6}, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor lhs = vf_layer(permute_rows(x, perm), p, cfg);
    const Tensor rhs = permute_rows(vf_layer(x, p, cfg), perm);
    for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.at(i), rhs.at(i), 1e-12);
  }
}

TEST(VFLayer, SingletonReducesToConstantSignalPath) {
  Rng rng(9);
  const VFConfig cfg{6, 4, 2, 2};
  const VFParams p = make_vf_params(cfg, rng);
  const Tensor x = random_tensor({1, 4}, rng);
  // A single point makes every sensor equal x_1 and every back-projection row one.
  Tensor signal = Tensor::zeros({6, 4});
  {
    std::vector<double> rep;
    for (int t = 0; t < 6; ++t) rep.insert(rep.end(), x.data().begin(), x.data().end());
    signal = Tensor({6, 4}, rep);
  }
  const Tensor mixed = spectral_mix(signal, p, cfg);
  const Tensor out = vf_layer(x, p, cfg);
  for (std::size_t c = 0; c < 4; ++c) {
    double pre = p.skip_bias.at(c) + mixed.at(0, c);
    for (std::size_t a = 0; a < 4; ++a) pre += x.at(0, a) * p.skip_weight.at(a, c);
    EXPECT_NEAR(out.at(0, c), gelu_ref(pre), 1e-13);
  }
}

TEST(VFLayer, ZeroParametersAndInputGiveZero) {
  Rng rng(10);
  const VFConfig cfg{4, 2, 2, 1};
  VFParams p = make_vf_params(cfg, rng);
  p.project = Tensor::zeros(p.project.shape());
  for (auto& r : p.spectral) r = {Tensor::zeros(r.re.shape()), Tensor::zeros(r.im.shape())};
  p.skip_weight = Tensor::zeros(p.skip_weight.shape());
  p.skip_bias = Tensor::zeros(p.skip_bias.shape());
  const Tensor out = vf_layer(Tensor::zeros({5, 2}), p, cfg);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(VFLayer, CostGrowsLinearlyInN) {
  Rng rng(11);
  const VFConfig cfg{16, 16, 8, 2};
  const VFParams p = make_vf_params(cfg, rng);
  auto time_for = [&](std::size_t n) {
    const Tensor x = random_tensor({n, 16}, rng);
    NoGradGuard guard;
    double best = 1e9;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      vf_layer(x, p, cfg);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  // Both sizes sit above the last-level cache step; a quadratic layer would show 64.
  time_for(4096);
  const double ratio = time_for(32768) / time_for(4096);
  EXPECT_GT(ratio, 8.0 / 3.0);
  EXPECT_LT(ratio, 8.0 * 3.0);
}

TEST(AnalyticJacobian, ConstantInputEqualLogitsReducesToUniformWeights) {
  const std::size_t n = 3, c = 2, m = 2;
  const Tensor x = Tensor::full({n, c}, 0.8);
  const Tensor project = Tensor::zeros({c, m});
  const Tensor jac = analytic_aggregate_jacobian(x, project);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < c; ++b) {
          EXPECT_NEAR(jac.at(j * c + a, i * c + b), a == b ? 1.0 / n : 0.0, 1e-15);
        }
}

TEST(AnalyticJacobian, MatchesAutodiffAndFiniteDifferences) {
  Rng rng(12);
  for (auto [n, m] : {std::pair<std::size_t, std::size_t>{2, 1}, {5, 3}}) {
    const VFConfig cfg{m, 3, 1, 1};
    const VFParams p = make_vf_params(cfg, rng);
    const Tensor x = random_tensor({n, 3}, rng);
    auto agg = [&](const Tensor& v) { return aggregate(v, project_logits(v, p)); };
    const auto analytic = values(analytic_aggregate_jacobian(x, p.project));
    EXPECT_LT(check::relative_error(analytic, check::autodiff_jacobian(agg, x).data()), 1e-10);

    std::vector<double> fd(analytic.size());
    const std::size_t cols = x.numel();
    for (std::size_t col = 0; col < cols; ++col) {
      auto up = values(x), down = values(x);
      up[col] += 1e-5;
      down[col] -= 1e-5;
      const Tensor zu = agg(Tensor(x.shape(), up)), zd = agg(Tensor(x.shape(), down));
      for (std::size_t r = 0; r < zu.numel(); ++r) fd[r * cols + col] = (zu.at(r) - zd.at(r)) / 2e-5;
    }
    EXPECT_LT(check::relative_error(analytic, fd), 1e-6);

    const Tensor z = random_tensor({m, 3}, rng), dir = random_tensor({n, 3}, rng);
    const Tensor bj = check::autodiff_jacobian([&](const Tensor& v) { return backproject(z, project_logits(v, p)); }, x);
    std::vector<double> jvp(n * 3, 0.0);
    for (std::size_t r = 0; r < jvp.size(); ++r)
      for (std::size_t col = 0; col < cols; ++col) jvp[r] += bj.at(r, col) * dir.at(col);
    EXPECT_LT(check::relative_error(values(analytic_backproject_jvp(x, p.project, z, dir)), jvp), 1e-10);
  }
}

TEST(LinearAttention, SingletonReturnsValueRow) {
  Rng rng(13);
  const LAParams p = make_la_params(4, 2, rng);
  const Tensor x = random_tensor({1, 4}, rng);
  const Tensor att = linear_attention(x, p);
  const Tensor v = matmul(x, p.value);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(att.at(0, c), v.at(0, c), 1e-14);
}

TEST(LinearAttention, ZeroValuesLeaveSkipPath) {
  Rng rng(14);
  LAParams p = make_la_params(4, 2, rng);
  p.value = Tensor::zeros({4, 4});
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor out = linear_attention_layer(x, p);
  const Tensor skip = matmul(x, p.skip_weight) + p.skip_bias;
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.at(i), gelu_ref(skip.at(i)), 1e-14);
}

TEST(LinearAttention, MatchesQuadraticOracle) {
  Rng rng(15);
  const LAParams p = make_la_params(4, 2, rng);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor q = matmul(x, p.query), k = matmul(x, p.key), v = matmul(x, p.value);
  auto phi = [](double t) { return t > 0 ? t + 1.0 : std::exp(t); };
  const Tensor att = linear_attention(x, p);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 3; ++i) {
      // Explicit N x N weights a_ij = phi(q_i) . phi(k_j), normalized per row.
      std::vector<double> a(3, 0.0);
      double total = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t c = 0; c < 2; ++c) a[j] += phi(q.at(i, h * 2 + c)) * phi(k.at(j, h * 2 + c));
        total += a[j];
      }
      for (std::size_t c = 0; c < 2; ++c) {
        double expected = 0.0;
        for (std::size_t j = 0; j < 3; ++j) expected += a[j] / total * v.at(j, h * 2 + c);
        EXPECT_NEAR(att.at(i, h * 2 + c), expected, 1e-12);
      }
    }
  }
}

TEST(LinearAttention, PermutationEquivariance) {
  Rng rng(16);
  const LAParams p = make_la_params(4, 2, rng);
  const Tensor x = random_tensor({9, 4}, rng);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Tensor lhs = linear_attention_layer(permute_rows(x, perm), p);
  const Tensor rhs = permute_rows(linear_attention_layer(x, p), perm);
  for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.at(i), rhs.at(i), 1e-12);
}

TEST(Mlp, ZeroIdentityAndMatmulOracle) {
  Rng rng(17);
  PointwiseMlp mlp = make_mlp(3, 3, 2, rng);
  const Tensor x = random_tensor({4, 3}, rng);

  PointwiseMlp zero = mlp;
  zero.first = {Tensor::zeros({3, 3}), Tensor::zeros({3})};
  zero.second = {Tensor::zeros({3, 2}), Tensor::zeros({2})};
  const Tensor zeroed = zero(x);
  for (double v : zeroed.data()) EXPECT_EQ(v, 0.0);

  Linear id{Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor()};
  EXPECT_EQ(values(id(x)), values(x));

  const Tensor out = mlp(x);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> hidden(3);
    for (std::size_t h = 0; h < 3; ++h) {
      double acc = mlp.first.bias.at(h);
      for (std::size_t a = 0; a < 3; ++a) acc += x.at(i, a) * mlp.first.weight.at(a, h);
      hidden[h] = gelu_ref(acc);
    }
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = mlp.second.bias.at(o);
      for (std::size_t h = 0; h < 3; ++h) acc += hidden[h] * mlp.second.weight.at(h, o);
      EXPECT_NEAR(out.at(i, o), acc, 1e-14);
    }
  }
}
