#include "pdeco/gradcheck.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "pdeco/error.hpp"
#include "pdeco/heat_problem.hpp"
#include "pdeco/layers.hpp"
#include "pdeco/rno.hpp"
#include "pdeco/training.hpp"

namespace pdeco::check {

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                                double h) {
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    point[i] = x[i] + h;
    const double up = f(point);
    point[i] = x[i] - h;
    const double down = f(point);
    point[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Tensor autodiff_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  const Tensor leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  const Tensor out = f(leaf);
  const std::size_t rows = out.numel(), cols = leaf.numel();
  std::vector<double> jac(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> e(rows, 0.0);
    e[r] = 1.0;
    const Tensor g = grad(sum(out * Tensor(out.shape(), std::move(e))), {leaf}).front();
    std::copy(g.data().begin(), g.data().end(), jac.begin() + static_cast<long>(r * cols));
  }
  return Tensor({rows, cols}, std::move(jac));
}

namespace {

std::vector<double> uniform_values(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& e : v) e = u(rng);
  return v;
}

Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), uniform_values(n, lo, hi, rng));
}

using Op = std::function<Tensor(const Tensor& h, const Tensor& y)>;

}  // namespace

RandomGraph random_graph(std::mt19937_64& rng, std::size_t depth, std::size_t max_size, bool smooth) {
  std::uniform_int_distribution<std::size_t> dim(2, std::max<std::size_t>(2, max_size));
  const std::size_t r = dim(rng), c = dim(rng);
  RandomGraph g;
  g.x_shape = {r, c};
  g.y_shape = std::bernoulli_distribution(0.5)(rng) ? Shape{r, c} : Shape{c};

  std::vector<std::pair<std::string, std::function<Op()>>> menu = {
      {"gelu", [] { return Op([](const Tensor& h, const Tensor&) { return gelu(h); }); }},
      {"exp", [] { return Op([](const Tensor& h, const Tensor&) { return exp(h * 0.3); }); }},
      {"log", [] { return Op([](const Tensor& h, const Tensor&) { return log(h * h + 1.0); }); }},
      {"sqrt", [] { return Op([](const Tensor& h, const Tensor&) { return sqrt(h * h + 1.0); }); }},
      {"pow", [] { return Op([](const Tensor& h, const Tensor&) { return pow(h * h + 0.5, 1.5); }); }},
      {"erf", [] { return Op([](const Tensor& h, const Tensor&) { return erf(h); }); }},
      // Scaled by the axis length so nested softmaxes keep O(1) values and
      // gradients; otherwise the composite becomes too flat for differences.
      {"softmax0", [r] { return Op([r](const Tensor& h, const Tensor&) { return softmax(h, 0) * double(r); }); }},
      {"softmax1", [c] { return Op([c](const Tensor& h, const Tensor&) { return softmax(h, 1) * double(c); }); }},
      {"add", [] { return Op([](const Tensor& h, const Tensor& y) { return h + y; }); }},
      {"sub", [] { return Op([](const Tensor& h, const Tensor& y) { return y - h; }); }},
      {"mul", [] { return Op([](const Tensor& h, const Tensor& y) { return h * y; }); }},
      {"div", [] { return Op([](const Tensor& h, const Tensor& y) { return h / (y * y + 1.0); }); }},
      {"matmul_const",
       [&rng, c] {
         const Tensor w = uniform_tensor({c, c}, rng);
         return Op([w](const Tensor& h, const Tensor&) { return matmul(h, w) * 0.5; });
       }},
      {"gram",
       [r] {
         return Op([r](const Tensor& h, const Tensor&) {
           return matmul(h, matmul(h, h, true, false)) * (0.3 / static_cast<double>(r));
         });
       }},
      {"split_concat",
       [c] {
         const std::size_t k = c / 2;
         return Op([k, c](const Tensor& h, const Tensor&) {
           return concat({slice(h, 1, 0, k), slice(h, 1, k, c - k) * -0.7}, 1);
         });
       }},
      {"row_sum", [] { return Op([](const Tensor& h, const Tensor&) { return h + sum(h, 0) * 0.2; }); }},
      {"transpose2", [] { return Op([](const Tensor& h, const Tensor&) { return transpose(transpose(h) * 1.3); }); }},
  };
  if (!smooth) {
    menu.push_back({"relu", [] { return Op([](const Tensor& h, const Tensor&) { return relu(h) + h * 0.1; }); }});
    menu.push_back({"elu", [] { return Op([](const Tensor& h, const Tensor&) { return elu(h); }); }});
  }
  std::uniform_int_distribution<std::size_t> pick(0, menu.size() - 1);
  const std::size_t n_ops = std::uniform_int_distribution<std::size_t>(1, depth)(rng);
  std::vector<Op> ops;
  for (std::size_t i = 0; i < n_ops; ++i) {
    const auto& entry = menu[pick(rng)];
    g.ops.push_back(entry.first);
    ops.push_back(entry.second());
  }
  const Tensor weights = uniform_tensor({r, c}, rng);
  g.build = [ops, weights](const Tensor& x, const Tensor& y) {
    Tensor h = x;
    for (const auto& op : ops) h = op(h, y);
    // The quadratic term keeps the Hessian nonzero for chains of linear ops.
    return sum(h * weights + h * h * 0.25);
  };
  return g;
}

namespace {

double scalar_of(const RandomGraph& g, std::span<const double> x, const Tensor& y) {
  NoGradGuard guard;
  return g.build(Tensor(g.x_shape, std::vector<double>(x.begin(), x.end())), y).item();
}

std::vector<double> gradient_of(const RandomGraph& g, std::span<const double> x, const Tensor& y) {
  const Tensor leaf(g.x_shape, std::vector<double>(x.begin(), x.end()), true);
  const Tensor gx = grad(g.build(leaf, y), {leaf}).front();
  return {gx.data().begin(), gx.data().end()};
}

CheckResult make(std::string name, double err, double tol) {
  return {std::move(name), err, tol, err < tol};
}

// Perturbation sized relative to the vector so every check sees it above tolerance.
void corrupt_if(const SuiteOptions& o, const char* name, std::vector<double>& values) {
  if (o.corrupt != name || values.empty()) return;
  double norm = 0.0;
  for (double v : values) norm += v * v;
  values[values.size() / 2] += 1e-2 * std::sqrt(norm) + 1e-3;
}

// Fourth-order central stencil along direction v; truncation error O(h^4).
template <typename F>
auto directional_fd4(F&& f, std::span<const double> x, std::span<const double> v, double h) {
  auto at = [&](double t) {
    std::vector<double> p(x.begin(), x.end());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += t * v[i];
    return f(std::span<const double>(p));
  };
  const auto a = at(-2 * h), b = at(-h), c = at(h), d = at(2 * h);
  return std::make_tuple(a, b, c, d);
}

std::vector<double> fd4_gradient(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                                 double h) {
  std::vector<double> g(x.size()), e(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = 1.0;
    const auto [a, b, c, d] = directional_fd4(f, x, e, h);
    g[i] = (a - 8.0 * b + 8.0 * c - d) / (12.0 * h);
    e[i] = 0.0;
  }
  return g;
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Direct sparse Cholesky solve of the eliminated system; independent of the CG path.
double direct_objective(std::span<const double> rho, const heat::ProblemSpec& spec) {
  const auto k_full = heat::stiffness_matrix(rho, spec);
  std::vector<int> index(spec.nodes(), -1);
  int free = 0;
  for (std::size_t i = 0; i < spec.nodes(); ++i) {
    if (!spec.sink[i]) index[i] = free++;
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (int col = 0; col < k_full.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(k_full, col); it; ++it) {
      const int a = index[static_cast<std::size_t>(it.row())], b = index[static_cast<std::size_t>(it.col())];
      if (a >= 0 && b >= 0) trip.emplace_back(a, b, it.value());
    }
  }
  Eigen::SparseMatrix<double> k(free, free);
  k.setFromTriplets(trip.begin(), trip.end());
  Eigen::VectorXd f(free);
  for (std::size_t i = 0; i < spec.nodes(); ++i) {
    if (index[i] >= 0) f[index[i]] = spec.source[i];
  }
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(k);
  const Eigen::VectorXd t = ldlt.solve(f);
  double j = 0.0;
  for (std::size_t i = 0; i < spec.nodes(); ++i) {
    if (index[i] >= 0) j += spec.source[i] * t[index[i]];
  }
  j *= spec.cell_area();
  double mean = std::accumulate(rho.begin(), rho.end(), 0.0) / static_cast<double>(rho.size());
  const double excess = std::max(0.0, mean - spec.volume_fraction);
  return j + spec.volume_weight * excess * excess;
}

}  // namespace

std::vector<CheckResult> run_suite(const SuiteOptions& options) {
  std::vector<CheckResult> results;
  std::mt19937_64 rng(options.seed);

  // Random composite graphs, first and second order.
  {
    double first = 0.0, second = 0.0;
    for (std::size_t k = 0; k < options.random_graphs; ++k) {
      // Redraw graphs whose gradient is negligible against the value (saturated
      // nonlinearities); there the relative error measures only cancellation noise.
      RandomGraph g;
      Tensor y;
      std::vector<double> x, analytic;
      for (;;) {
        g = random_graph(rng, 6, 16, /*smooth=*/true);
        y = uniform_tensor(g.y_shape, rng);
        x = uniform_values(numel(g.x_shape), -1.0, 1.0, rng);
        analytic = gradient_of(g, x, y);
        double n2 = 0.0;
        for (double a : analytic) n2 += a * a;
        if (std::sqrt(n2) >= 1e-4 * std::max(1.0, std::abs(scalar_of(g, x, y)))) break;
      }
      auto f = [&](std::span<const double> p) { return scalar_of(g, p, y); };
      corrupt_if(options, "random_graph_first_order", analytic);
      first = std::max(first, relative_error(analytic, fd4_gradient(f, x, 1e-3)));

      // Hessian-vector product against differences of the gradient.
      const auto v = uniform_values(x.size(), -1.0, 1.0, rng);
      const Tensor leaf(g.x_shape, x, true);
      const Tensor gx = grad(g.build(leaf, y), {leaf}, /*create_graph=*/true).front();
      const Tensor hv = grad(sum(gx * Tensor(g.x_shape, v)), {leaf}).front();
      const double h = 1e-3;
      const auto [ga, gb, gc, gd] =
          directional_fd4([&](std::span<const double> p) { return gradient_of(g, p, y); }, x, v, h);
      std::vector<double> fd(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) fd[i] = (ga[i] - 8.0 * gb[i] + 8.0 * gc[i] - gd[i]) / (12.0 * h);
      second = std::max(second, relative_error(hv.data(), fd));
    }
    results.push_back(make("random_graph_first_order", first, 1e-6));
    results.push_back(make("random_graph_second_order", second, 1e-5));
  }

  // Softmax Jacobian against s_j (delta_ij - s_i).
  {
    const Tensor t = uniform_tensor({1, 6}, rng, -2.0, 2.0);
    const Tensor jac = autodiff_jacobian([](const Tensor& a) { return softmax(a, 1); }, t);
    const Tensor s = softmax(t, 1);
    std::vector<double> expected(36);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) expected[j * 6 + i] = s.at(0, j) * ((i == j ? 1.0 : 0.0) - s.at(0, i));
    }
    auto a = to_vector(jac);
    corrupt_if(options, "softmax_jacobian", a);
    results.push_back(make("softmax_jacobian", relative_error(a, expected), 1e-12));
  }

  // Virtual-Fourier permutation equivariance on several point counts.
  {
    Rng model_rng(options.seed + 1);
    const VFConfig cfg{8, 4, 3, 2};
    const VFParams p = make_vf_params(cfg, model_rng);
    double worst = 0.0;
    for (std::size_t n : {7u, 16u, 33u}) {
      const Tensor x = uniform_tensor({n, cfg.channels}, rng);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> px(n * cfg.channels);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < cfg.channels; ++c) px[i * cfg.channels + c] = x.at(perm[i], c);
      }
      const Tensor out = vf_layer(x, p, cfg);
      const Tensor out_p = vf_layer(Tensor({n, cfg.channels}, px), p, cfg);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < cfg.channels; ++c) {
          worst = std::max(worst, std::fabs(out_p.at(i, c) - out.at(perm[i], c)));
        }
      }
    }
    results.push_back(make("vf_permutation_equivariance", worst, 1e-12));
  }

  // Spectral mixing is linear in its input.
  {
    Rng model_rng(options.seed + 2);
    const VFConfig cfg{8, 4, 5, 2};
    const VFParams p = make_vf_params(cfg, model_rng);
    const Tensor z1 = uniform_tensor({8, 4}, rng), z2 = uniform_tensor({8, 4}, rng);
    const double a = 0.7, b = -1.3;
    const Tensor lhs = spectral_mix(z1 * a + z2 * b, p, cfg);
    const Tensor rhs = spectral_mix(z1, p, cfg) * a + spectral_mix(z2, p, cfg) * b;
    double worst = 0.0;
    for (std::size_t i = 0; i < lhs.numel(); ++i) worst = std::max(worst, std::fabs(lhs.at(i) - rhs.at(i)));
    results.push_back(make("spectral_mix_linearity", worst, 1e-12));
  }

  // Aggregation and back-projection derivatives.
  {
    Rng model_rng(options.seed + 3);
    const VFConfig cfg{3, 4, 2, 1};
    const VFParams p = make_vf_params(cfg, model_rng);
    const Tensor x = uniform_tensor({5, 4}, rng);
    auto agg = [&](const Tensor& v) { return aggregate(v, project_logits(v, p)); };
    auto analytic = to_vector(analytic_aggregate_jacobian(x, p.project));
    corrupt_if(options, "aggregate_jacobian", analytic);
    const Tensor ad = autodiff_jacobian(agg, x);
    results.push_back(make("aggregate_jacobian_autodiff", relative_error(analytic, ad.data()), 1e-10));

    // Finite-difference Jacobian, column by column.
    const std::size_t rows = 3 * 4, cols = x.numel();
    std::vector<double> fd(rows * cols);
    for (std::size_t col = 0; col < cols; ++col) {
      std::vector<double> up(x.data().begin(), x.data().end()), down(up);
      up[col] += 1e-5;
      down[col] -= 1e-5;
      NoGradGuard guard;
      const Tensor zu = agg(Tensor(x.shape(), up)), zd = agg(Tensor(x.shape(), down));
      for (std::size_t r = 0; r < rows; ++r) fd[r * cols + col] = (zu.at(r) - zd.at(r)) / 2e-5;
    }
    results.push_back(make("aggregate_jacobian_fd", relative_error(analytic, fd), 1e-6));

    const Tensor z = uniform_tensor({3, 4}, rng);
    const Tensor dir = uniform_tensor({5, 4}, rng);
    auto jvp = to_vector(analytic_backproject_jvp(x, p.project, z, dir));
    corrupt_if(options, "backproject_jvp", jvp);
    const Tensor bj = autodiff_jacobian([&](const Tensor& v) { return backproject(z, project_logits(v, p)); }, x);
    std::vector<double> expected(5 * 4, 0.0);
    for (std::size_t r = 0; r < expected.size(); ++r) {
      for (std::size_t col = 0; col < x.numel(); ++col) expected[r] += bj.at(r, col) * dir.at(col);
    }
    results.push_back(make("backproject_jvp_autodiff", relative_error(jvp, expected), 1e-10));
  }

  // Adjoint sensitivity against differences of a direct solve.
  {
    const heat::ProblemSpec spec = heat::instance_sampler(options.seed + 4, 12, 12);
    const auto rho = uniform_values(spec.nodes(), 0.2, 0.8, rng);
    auto s = heat::adjoint_sensitivity(rho, heat::solve(rho, spec), spec);
    corrupt_if(options, "adjoint_sensitivity", s);
    const auto fd = fd_gradient([&](std::span<const double> r) { return direct_objective(r, spec); }, rho, 1e-6);
    results.push_back(make("adjoint_vs_fd", relative_error(s, fd), 1e-4));
  }

  // Model sensitivity against differences of the predicted objective.
  {
    heat::InstanceParams ip = heat::sample_instance(options.seed + 5);
    const heat::ProblemSpec spec = heat::build_spec(ip, 3, 2);
    RnoConfig cfg;
    cfg.channels = 4;
    cfg.sensors = 4;
    cfg.modes = 2;
    cfg.heads = 2;
    cfg.depth = 1;
    const RnoParams p = make_rno_params(cfg, options.seed + 6);
    const Tensor structural = heat::structural_channels(spec, 1.0);
    const auto design = uniform_values(spec.nodes(), 0.2, 0.8, rng);
    const auto ref_design = uniform_values(spec.nodes(), 0.2, 0.8, rng);
    const auto ref_solution = uniform_values(spec.nodes(), 0.0, 1.0, rng);
    auto query = [&](std::span<const double> d) {
      return Query{structural, Tensor({d.size()}, std::vector<double>(d.begin(), d.end())),
                   Tensor({d.size()}, ref_solution), Tensor({d.size()}, ref_design)};
    };
    auto s = to_vector(predict_sensitivity(query(design), p, cfg, spec));
    corrupt_if(options, "rno_sensitivity", s);
    const auto fd = fd_gradient(
        [&](std::span<const double> d) {
          NoGradGuard guard;
          return predict_objective(query(d), p, cfg, spec).item();
        },
        design, 1e-5);
    results.push_back(make("rno_sensitivity_vs_fd", relative_error(s, fd), 1e-6));
  }

  // Gradient of the composite training loss (second-order path) along a random direction.
  {
    heat::InstanceParams ip = heat::sample_instance(options.seed + 7);
    const heat::ProblemSpec spec = heat::build_spec(ip, 4, 3);
    OptimizerConfig oc;
    oc.steps = 2;
    const Trajectory traj = run_numerical_opt(spec, oc, ip);
    RnoConfig cfg;
    cfg.channels = 4;
    cfg.sensors = 4;
    cfg.modes = 2;
    cfg.heads = 2;
    cfg.depth = 1;
    const RnoParams p = make_rno_params(cfg, options.seed + 8);
    const TrainingSample sample{1, 0};
    const auto leaves = p.tensors();
    const GradMap g = backward(sample_loss(traj, sample, p, cfg, 0.5, SensForm::cosine));
    std::vector<std::vector<double>> dirs;
    double analytic = 0.0;
    for (const auto& leaf : leaves) {
      dirs.push_back(uniform_values(leaf.numel(), -1.0, 1.0, rng));
      const Tensor gl = g.at(leaf);
      for (std::size_t i = 0; i < leaf.numel(); ++i) analytic += gl.at(i) * dirs.back()[i];
    }
    auto shifted = [&](double h) {
      std::size_t k = 0;
      const RnoParams q = map_params(p, [&](const Tensor& t) {
        std::vector<double> v(t.data().begin(), t.data().end());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += h * dirs[k][i];
        ++k;
        return Tensor(t.shape(), std::move(v));
      });
      return sample_loss(traj, sample, q, cfg, 0.5, SensForm::cosine).item();
    };
    const double h = 1e-5;
    const double fd = (shifted(h) - shifted(-h)) / (2.0 * h);
    std::vector<double> a{analytic};
    corrupt_if(options, "training_loss_gradient", a);
    results.push_back(make("training_loss_gradient", std::fabs(a[0] - fd) / std::max(std::fabs(fd), 1e-12), 1e-4));
  }
  return results;
}

}  // namespace pdeco::check
