#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "pdeco/error.hpp"
#include "pdeco/gradcheck.hpp"
#include "pdeco/tensor.hpp"

using namespace pdeco;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Central differences of a tensor-to-scalar map, computed without recording.
std::vector<double> fd(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  return check::fd_gradient(
      [&](std::span<const double> p) {
        NoGradGuard guard;
        return f(Tensor(x.shape(), std::vector<double>(p.begin(), p.end()))).item();
      },
      x.data(), h);
}

std::vector<double> ad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  const Tensor leaf(x.shape(), values(x), true);
  return values(grad(f(leaf), {leaf}).front());
}

}  // namespace

TEST(Elementwise, AddExample) {
  const Tensor r = add(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  EXPECT_EQ(values(r), (std::vector<double>{4, 6}));
}

TEST(Elementwise, GeluFixesZeroAndMatchesExactCdf) {
  EXPECT_EQ(gelu(Tensor::scalar(0.0)).item(), 0.0);
  const double oracle = 1.0 * 0.5 * std::erfc(-1.0 / std::numbers::sqrt2);
  EXPECT_NEAR(gelu(Tensor::scalar(1.0)).item(), oracle, 1e-15);
  EXPECT_NEAR(gelu(Tensor::scalar(1.0)).item(), 0.8413447461, 1e-10);
}

TEST(Elementwise, BroadcastTrailing) {
  const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  const Tensor b = Tensor::vector({10, 20, 30});
  EXPECT_EQ(values(a + b), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  const Tensor col = Tensor({2, 1}, {100, 200});
  EXPECT_EQ(values(a * col), (std::vector<double>{100, 200, 300, 800, 1000, 1200}));
}

TEST(Elementwise, Errors) {
  EXPECT_THROW(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
  EXPECT_THROW(div(Tensor::vector({1, 2}), Tensor::vector({1, 0})), DomainError);
  EXPECT_THROW(log(Tensor::vector({0.0})), DomainError);
  EXPECT_THROW(elementwise(ElementwiseKind::add, Tensor::vector({1})), UsageError);
}

TEST(Elementwise, DispatcherMatchesNamedOps) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({3, 4}, rng, 0.5, 2.0), b = random_tensor({4}, rng, 0.5, 2.0);
  EXPECT_EQ(values(elementwise(ElementwiseKind::div, a, &b)), values(a / b));
  EXPECT_EQ(values(elementwise(ElementwiseKind::pow, a, nullptr, 2.5)), values(pow(a, 2.5)));
  EXPECT_EQ(values(elementwise(ElementwiseKind::gelu, a)), values(gelu(a)));
}

TEST(Elementwise, VjpMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Tensor y = random_tensor({3, 4}, rng);
  const Tensor w = random_tensor({3, 4}, rng);
  const std::vector<std::function<Tensor(const Tensor&)>> ops = {
      [&](const Tensor& x) { return sum((x + y) * w); },
      [&](const Tensor& x) { return sum((x - y) * w); },
      [&](const Tensor& x) { return sum(x * y * w); },
      [&](const Tensor& x) { return sum(x / (y * y + 1.0) * w); },
      [&](const Tensor& x) { return sum((y + 2.0) / (x + 3.0) * w); },
      [&](const Tensor& x) { return sum(-x * w); },
      [&](const Tensor& x) { return sum(gelu(x) * w); },
      [&](const Tensor& x) { return sum(exp(x) * w); },
      [&](const Tensor& x) { return sum(log(x + 2.0) * w); },
      [&](const Tensor& x) { return sum(sqrt(x + 2.0) * w); },
      [&](const Tensor& x) { return sum(pow(x + 2.0, 2.7) * w); },
      [&](const Tensor& x) { return sum(erf(x) * w); },
      [&](const Tensor& x) { return sum(elu(x) * w); },
      [&](const Tensor& x) { return sum(softmax(x, 0) * w); },
      [&](const Tensor& x) { return sum(softmax(x, 1) * w); },
  };
  const Tensor x = random_tensor({3, 4}, rng);
  for (std::size_t k = 0; k < ops.size(); ++k) {
    EXPECT_LT(check::relative_error(ad(ops[k], x), fd(ops[k], x)), 1e-6) << "op " << k;
  }
}

TEST(Elementwise, KinkedOpsAwayFromKinks) {
  const Tensor x = Tensor::vector({-0.7, -0.2, 0.3, 0.9});
  auto f = [](const Tensor& v) { return sum(relu(v) * Tensor::vector({1, 2, 3, 4})); };
  EXPECT_EQ(ad(f, x), (std::vector<double>{0, 0, 3, 4}));
  auto g = [](const Tensor& v) { return sum(maximum(v, 0.0) + minimum(v, 0.0) * 2.0); };
  EXPECT_EQ(ad(g, x), (std::vector<double>{2, 2, 1, 1}));
}

TEST(Matmul, Examples) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(values(matmul(Tensor::matrix({{1, 0}, {0, 1}}), m)), values(m));
  EXPECT_EQ(values(matmul(Tensor::matrix({{1, 0}}), Tensor::matrix({{5}, {7}}))), (std::vector<double>{5}));
  EXPECT_THROW(matmul(m, Tensor::matrix({{1, 2, 3}})), DimensionError);
}

TEST(Matmul, TripleLoopOracleAllTransposeFlags) {
  std::mt19937_64 rng(5);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  const Tensor at = transpose(a), bt = transpose(b);
  std::vector<double> oracle(6, 0.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 4; ++k) oracle[i * 2 + j] += a.at(i, k) * b.at(k, j);
  for (auto [x, y, ta, tb] : {std::tuple{a, b, false, false}, std::tuple{at, b, true, false},
                              std::tuple{a, bt, false, true}, std::tuple{at, bt, true, true}}) {
    const auto r = values(matmul(x, y, ta, tb));
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(r[i], oracle[i], 1e-14);
  }
}

TEST(Matmul, GradientsAllTransposeFlags) {
  std::mt19937_64 rng(6);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), w = random_tensor({3, 2}, rng);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const Tensor a_in = ta ? transpose(a) : a;
      const Tensor b_in = tb ? transpose(b) : b;
      auto fa = [&](const Tensor& x) { return sum(matmul(x, b_in, ta, tb) * w); };
      auto fb = [&](const Tensor& x) { return sum(matmul(a_in, x, ta, tb) * w); };
      EXPECT_LT(check::relative_error(ad(fa, a_in), fd(fa, a_in)), 1e-8);
      EXPECT_LT(check::relative_error(ad(fb, b_in), fd(fb, b_in)), 1e-8);
    }
  }
}

TEST(Softmax, Examples) {
  EXPECT_EQ(values(softmax(Tensor::vector({0, 0}), 0)), (std::vector<double>{0.5, 0.5}));
  const auto big = values(softmax(Tensor::vector({1000, 0}), 0));
  EXPECT_EQ(big[0], 1.0);
  EXPECT_GE(big[1], 0.0);
  EXPECT_LT(big[1], 1e-300);
  const Tensor jac = check::autodiff_jacobian([](const Tensor& t) { return softmax(t, 0); }, Tensor::vector({0, 0}));
  EXPECT_EQ(values(jac), (std::vector<double>{0.25, -0.25, -0.25, 0.25}));
}

TEST(Softmax, RowsSumToOneAndShiftInvariance) {
  std::mt19937_64 rng(8);
  const Tensor t = random_tensor({5, 7}, rng, -5, 5);
  const Tensor s = softmax(t, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) total += s.at(i, j);
    EXPECT_NEAR(total, 1.0, 1e-14);
  }
  const Tensor shifted = softmax(t + 123.0, 1);
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_NEAR(shifted.at(i), s.at(i), 1e-12);
}

TEST(Shapes, ReshapeConcatSliceTransposeSums) {
  const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(reshape(a, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(a, {4}), DimensionError);
  EXPECT_EQ(values(slice(a, 1, 1, 2)), (std::vector<double>{2, 3, 5, 6}));
  EXPECT_THROW(slice(a, 1, 2, 2), DimensionError);
  EXPECT_EQ(values(concat({a, slice(a, 1, 0, 1)}, 1)), (std::vector<double>{1, 2, 3, 1, 4, 5, 6, 4}));
  EXPECT_EQ(values(transpose(a)), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(values(sum(a, 0)), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(values(sum(a, 1)), (std::vector<double>{6, 15}));
  EXPECT_EQ(mean(a).item(), 3.5);
  EXPECT_EQ(values(sum_to(a, {3})), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(values(expand(Tensor::vector({1, 2}), {2, 2})), (std::vector<double>{1, 2, 1, 2}));
}

TEST(Shapes, GradientsOfStructuralOps) {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor w = random_tensor({3, 5}, rng);
  auto f = [&](const Tensor& v) {
    const Tensor c = concat({slice(v, 0, 1, 2), v, reshape(v, {4, 3}) * 2.0}, 0);  // [10, 3]
    return sum(matmul(transpose(sum(c, 0) + c), transpose(transpose(c)), false, false) * 0.01 +
               sum(expand(sum_to(v, {3}), {6, 3})));
  };
  EXPECT_LT(check::relative_error(ad(f, x), fd(f, x)), 1e-6);
  (void)w;
}

TEST(Dft, ConstantSignalHasOnlyDc) {
  const Tensor z = Tensor::full({8, 2}, 1.5);
  const ComplexTensor f = dft_axis(z, 1);
  EXPECT_EQ(f.shape(), (Shape{1, 2}));
  EXPECT_NEAR(f.re.at(0, 0), 12.0, 1e-14);
  EXPECT_NEAR(f.im.at(0, 1), 0.0, 1e-14);
}

TEST(Dft, CosineEnergyInModeOneMatchesDirectOracle) {
  const std::size_t m = 8;
  std::vector<double> v(m);
  for (std::size_t t = 0; t < m; ++t) v[t] = std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / m);
  const ComplexTensor f = dft_axis(Tensor({m, 1}, v), m / 2 + 1);
  for (std::size_t k = 0; k <= m / 2; ++k) {
    std::complex<double> oracle = 0.0;
    for (std::size_t t = 0; t < m; ++t) {
      oracle += v[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / m);
    }
    EXPECT_NEAR(f.re.at(k, 0), oracle.real(), 1e-12);
    EXPECT_NEAR(f.im.at(k, 0), oracle.imag(), 1e-12);
    if (k != 1) EXPECT_NEAR(std::abs(oracle), 0.0, 1e-12);
  }
  EXPECT_NEAR(f.re.at(1, 0), 4.0, 1e-12);
}

TEST(Dft, FullSpectrumRoundTrip) {
  std::mt19937_64 rng(10);
  for (std::size_t m : {5u, 8u, 16u}) {
    const Tensor z = random_tensor({m, 3}, rng);
    const Tensor back = idft_axis(dft_axis(z, m / 2 + 1), m);
    for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_NEAR(back.at(i), z.at(i), 1e-12);
  }
}

TEST(Dft, ModeRangeChecked) {
  const Tensor z = Tensor::zeros({8, 1});
  EXPECT_THROW(dft_axis(z, 0), ConfigError);
  EXPECT_THROW(dft_axis(z, 6), ConfigError);
}

TEST(Backward, QuadraticAndCubicExamples) {
  const Tensor x(Shape{3}, {1, 2, 3}, true);
  EXPECT_EQ(values(backward(sum(x * x)).at(x)), (std::vector<double>{2, 4, 6}));
  const Tensor g = grad(sum(x * x * x), {x}, true).front();
  const Tensor gg = grad(sum(g * Tensor::ones({3})), {x}).front();
  EXPECT_EQ(values(gg), (std::vector<double>{6, 12, 18}));
}

TEST(Backward, NonScalarRootIsUsageError) {
  const Tensor x(Shape{3}, {1, 2, 3}, true);
  EXPECT_THROW(backward(x * 2.0), UsageError);
}

TEST(Backward, CreateGraphIsCountedAndNoGradSkipsRecording) {
  const Tensor x(Shape{2}, {1, 2}, true);
  const auto before = create_graph_count();
  grad(sum(x * x), {x}, true);
  EXPECT_EQ(create_graph_count(), before + 1);
  grad(sum(x * x), {x}, false);
  EXPECT_EQ(create_graph_count(), before + 1);
  NoGradGuard guard;
  EXPECT_FALSE((x * x).requires_grad());
}

TEST(Backward, GraphIsTopologicallyOrdered) {
  const Tensor x(Shape{2}, {1, 2}, true);
  const Tensor y = exp(x) * x;
  const Tensor root = sum(y);
  EXPECT_GT(root.id(), y.id());
  EXPECT_GT(y.id(), x.id());
  for (const auto& in : y.grad_fn()->inputs) EXPECT_LT(in.id(), y.id());
}

TEST(Backward, RandomFiveOpGraphsFirstAndSecondOrder) {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = check::random_graph(rng, 5, 6, true);
    const Tensor y = random_tensor(g.y_shape, rng);
    const Tensor x = random_tensor(g.x_shape, rng);
    auto f = [&](const Tensor& v) { return g.build(v, y); };
    EXPECT_LT(check::relative_error(ad(f, x), fd(f, x)), 1e-6) << "trial " << trial;

    // Hessian-vector product against differences of the first gradient.
    const Tensor v = random_tensor(g.x_shape, rng);
    const Tensor leaf(x.shape(), values(x), true);
    const Tensor gx = grad(f(leaf), {leaf}, true).front();
    const auto hv = values(grad(sum(gx * v), {leaf}).front());
    const double h = 1e-5;
    const auto gp = ad(f, x + v * h), gm = ad(f, x - v * h);
    std::vector<double> oracle(hv.size());
    for (std::size_t i = 0; i < hv.size(); ++i) oracle[i] = (gp[i] - gm[i]) / (2 * h);
    EXPECT_LT(check::relative_error(hv, oracle), 1e-5) << "trial " << trial;
  }
}

TEST(Backward, UnreachableLeafGetsZeros) {
  const Tensor x(Shape{2}, {1, 2}, true), z(Shape{3}, {1, 2, 3}, true);
  const GradMap g = backward(sum(x));
  EXPECT_FALSE(g.contains(z));
  EXPECT_EQ(values(g.at(z)), (std::vector<double>{0, 0, 0}));
}

TEST(Tensor, ConstructionInvariants) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor({0}, {}), DimensionError);
  const Tensor x(Shape{2}, {1, 2}, true);
  const Tensor y = x * 2.0;
  EXPECT_TRUE(x.is_leaf());
  EXPECT_FALSE(y.is_leaf());
  EXPECT_FALSE(y.detach().requires_grad());
}
