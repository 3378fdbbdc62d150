#include <Eigen/Core>
#include <cmath>
#include <map>
#include <numbers>

#include "pdeco/error.hpp"
#include "pdeco/tensor.hpp"

namespace pdeco {

namespace {

// Strides of `in` laid against the right-aligned dimensions of `out`; broadcast
// dimensions get stride zero.
std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t ia = in.size() - 1 - k;
    const std::size_t io = out.size() - 1 - k;
    if (in[ia] != 1) strides[io] = stride;
    stride *= in[ia];
  }
  return strides;
}

// Visits every element of `out` with the matching offsets into two operands.
template <class F>
void broadcast_loop(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t nd = out.size();
  if (nd == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[nd - 1];
  const std::size_t step_a = sa[nd - 1];
  const std::size_t step_b = sb[nd - 1];
  const std::size_t outer = numel(out) / inner;
  std::vector<std::size_t> idx(nd - 1, 0);
  std::size_t oa = 0, ob = 0, o = 0;
  for (std::size_t r = 0; r < outer; ++r) {
    std::size_t pa = oa, pb = ob;
    for (std::size_t c = 0; c < inner; ++c) {
      f(o++, pa, pb);
      pa += step_a;
      pb += step_b;
    }
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class F>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, BackwardRule rule) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  std::vector<double> data;
  auto da = a.data();
  auto db = b.data();
  if (a.shape() == b.shape()) {
    data.reserve(da.size());
    for (std::size_t i = 0; i < da.size(); ++i) data.push_back(f(da[i], db[i]));
  } else {
    data.resize(numel(out));
    broadcast_loop(out, aligned_strides(a.shape(), out), aligned_strides(b.shape(), out),
                   [&](std::size_t o, std::size_t ia, std::size_t ib) { data[o] = f(da[ia], db[ib]); });
  }
  return Tensor::make_result(op, std::move(out), std::move(data), {a, b}, std::move(rule));
}

template <class F>
Tensor unary(const char* op, const Tensor& a, F f, BackwardRule rule) {
  auto da = a.data();
  std::vector<double> data;
  data.reserve(da.size());
  for (double v : da) data.push_back(f(v));
  return Tensor::make_result(op, a.shape(), std::move(data), {a}, std::move(rule));
}

Tensor constant_like(const Tensor& a, std::vector<double> values) {
  return Tensor(a.shape(), std::move(values));
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + to_string(t.shape()));
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// d/dx gelu(x) = Phi(x) + x phi(x); recorded so that third derivatives exist.
Tensor gelu_prime(const Tensor& x) {
  return unary(
      "gelu_prime", x,
      [](double v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); },
      [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
        const Tensor& v = in[0];
        Tensor v2 = v * v;
        Tensor density = exp(v2 * -0.5) * kInvSqrt2Pi;
        return {g * density * (v2 * -1.0 + 2.0)};
      });
}

// Inverse of `slice`: places `g` into a zero tensor of `full` shape.
Tensor embed(const Tensor& g, const Shape& full, std::size_t axis, std::size_t start) {
  const auto src = split_at(g.shape(), axis);
  const auto dst = split_at(full, axis);
  std::vector<double> data(numel(full), 0.0);
  auto dg = g.data();
  for (std::size_t o = 0; o < src.outer; ++o) {
    for (std::size_t a = 0; a < src.len; ++a) {
      const double* from = dg.data() + (o * src.len + a) * src.inner;
      double* to = data.data() + (o * dst.len + start + a) * dst.inner;
      std::copy(from, from + src.inner, to);
    }
  }
  const std::size_t length = g.size(axis);
  return Tensor::make_result(
      "embed", full, std::move(data), {g},
      [axis, start, length](const Tensor& gg, const Tensor&, std::span<const Tensor>) -> std::vector<Tensor> {
        return {slice(gg, axis, start, length)};
      });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t k = 0; k < nd; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcast-compatible");
    }
    out[nd - 1 - k] = std::max(da, db);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                  return {in[0].requires_grad() ? sum_to(g, in[0].shape()) : Tensor(),
                          in[1].requires_grad() ? sum_to(g, in[1].shape()) : Tensor()};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                  return {in[0].requires_grad() ? sum_to(g, in[0].shape()) : Tensor(),
                          in[1].requires_grad() ? sum_to(neg(g), in[1].shape()) : Tensor()};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                  return {in[0].requires_grad() ? sum_to(g * in[1], in[0].shape()) : Tensor(),
                          in[1].requires_grad() ? sum_to(g * in[0], in[1].shape()) : Tensor()};
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("division by exact zero");
  }
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](const Tensor& g, const Tensor& out, std::span<const Tensor> in) -> std::vector<Tensor> {
                  return {in[0].requires_grad() ? sum_to(g / in[1], in[0].shape()) : Tensor(),
                          in[1].requires_grad() ? sum_to(neg(g * out / in[1]), in[1].shape()) : Tensor()};
                });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; },
               [](const Tensor& g, const Tensor&, std::span<const Tensor>) -> std::vector<Tensor> {
                 return {neg(g)};
               });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](const Tensor& g, const Tensor& out, std::span<const Tensor>) -> std::vector<Tensor> {
                 return {g * out};
               });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log of a non-positive value");
  }
  return unary("log", a, [](double x) { return std::log(x); },
               [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                 return {g / in[0]};
               });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw DomainError("sqrt of a negative value");
  }
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](const Tensor& g, const Tensor& out, std::span<const Tensor>) -> std::vector<Tensor> {
                 return {g / (out * 2.0)};
               });
}

Tensor pow(const Tensor& a, double exponent) {
  if (exponent != std::floor(exponent)) {
    for (double v : a.data()) {
      if (v < 0.0) throw DomainError("non-integer power of a negative value");
    }
  }
  return unary("pow", a, [exponent](double x) { return std::pow(x, exponent); },
               [exponent](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                 if (exponent == 0.0) return {Tensor::zeros(in[0].shape())};
                 if (exponent == 1.0) return {g};
                 return {g * pow(in[0], exponent - 1.0) * exponent};
               });
}

Tensor erf(const Tensor& a) {
  return unary("erf", a, [](double x) { return std::erf(x); },
               [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                 const double c = 2.0 / std::sqrt(std::numbers::pi);
                 return {g * exp(in[0] * in[0] * -1.0) * c};
               });
}

Tensor gelu(const Tensor& a) {
  return unary("gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
               [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                 return {g * gelu_prime(in[0])};
               });
}

Tensor elu(const Tensor& a) {
  return unary("elu", a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
               [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                 return {g * exp(minimum(in[0], 0.0))};
               });
}

Tensor maximum(const Tensor& a, double floor) {
  return unary("maximum", a, [floor](double x) { return x > floor ? x : floor; },
               [floor](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                 std::vector<double> mask(in[0].numel());
                 auto d = in[0].data();
                 for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = d[i] > floor ? 1.0 : 0.0;
                 return {g * constant_like(in[0], std::move(mask))};
               });
}

Tensor minimum(const Tensor& a, double ceiling) {
  return unary("minimum", a, [ceiling](double x) { return x < ceiling ? x : ceiling; },
               [ceiling](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                 std::vector<double> mask(in[0].numel());
                 auto d = in[0].data();
                 for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = d[i] < ceiling ? 1.0 : 0.0;
                 return {g * constant_like(in[0], std::move(mask))};
               });
}

Tensor relu(const Tensor& a) { return maximum(a, 0.0); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor* b, double exponent) {
  auto need_b = [&]() -> const Tensor& {
    if (!b) throw UsageError("binary elementwise operation requires a second operand");
    return *b;
  };
  switch (kind) {
    case ElementwiseKind::add: return add(a, need_b());
    case ElementwiseKind::sub: return sub(a, need_b());
    case ElementwiseKind::mul: return mul(a, need_b());
    case ElementwiseKind::div: return div(a, need_b());
    case ElementwiseKind::neg: return neg(a);
    case ElementwiseKind::gelu: return gelu(a);
    case ElementwiseKind::exp: return exp(a);
    case ElementwiseKind::log: return log(a);
    case ElementwiseKind::sqrt: return sqrt(a);
    case ElementwiseKind::pow: return pow(a, exponent);
  }
  throw UsageError("unknown elementwise kind");
}

// ---------------------------------------------------------------------------
// Shapes and reductions

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  if (shape == a.shape()) return a;
  std::vector<double> data(a.data().begin(), a.data().end());
  return Tensor::make_result("reshape", std::move(shape), std::move(data), {a},
                             [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                               return {reshape(g, in[0].shape())};
                             });
}

Tensor expand(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (broadcast_shape(a.shape(), shape) != shape) {
    throw DimensionError("cannot expand " + to_string(a.shape()) + " to " + to_string(shape));
  }
  std::vector<double> data(numel(shape));
  auto da = a.data();
  broadcast_loop(shape, aligned_strides(a.shape(), shape), std::vector<std::size_t>(shape.size(), 0),
                 [&](std::size_t o, std::size_t ia, std::size_t) { data[o] = da[ia]; });
  return Tensor::make_result("expand", shape, std::move(data), {a},
                             [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                               return {sum_to(g, in[0].shape())};
                             });
}

Tensor sum_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (broadcast_shape(shape, a.shape()) != a.shape()) {
    throw DimensionError("cannot reduce " + to_string(a.shape()) + " to " + to_string(shape));
  }
  std::vector<double> data(numel(shape), 0.0);
  auto da = a.data();
  const Shape& full = a.shape();
  std::vector<std::size_t> identity(full.size());
  std::size_t stride = 1;
  for (std::size_t d = full.size(); d-- > 0;) {
    identity[d] = stride;
    stride *= full[d];
  }
  broadcast_loop(full, identity, aligned_strides(shape, full),
                 [&](std::size_t, std::size_t ia, std::size_t ib) { data[ib] += da[ia]; });
  return Tensor::make_result("sum_to", shape, std::move(data), {a},
                             [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                               return {expand(g, in[0].shape())};
                             });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return Tensor::make_result("sum", {}, {total}, {a},
                             [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                               return {expand(g, in[0].shape())};
                             });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  const auto s = split_at(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = 1;
  std::vector<double> data(s.outer * s.inner, 0.0);
  auto da = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.len; ++k) {
      const double* row = da.data() + (o * s.len + k) * s.inner;
      double* acc = data.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) acc[i] += row[i];
    }
  }
  return Tensor::make_result("sum_axis", std::move(shape), std::move(data), {a},
                             [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                               return {expand(g, in[0].shape())};
                             });
}

Tensor mean(const Tensor& a) { return sum(a) * (1.0 / static_cast<double>(a.numel())); }

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto s = split_at(a.shape(), axis);
  std::vector<double> data(a.numel());
  auto da = a.data();
  std::vector<double> peak(s.inner), total(s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const std::size_t base = o * s.len * s.inner;
    std::fill(peak.begin(), peak.end(), -std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < s.len; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) peak[i] = std::max(peak[i], da[base + k * s.inner + i]);
    }
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t k = 0; k < s.len; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t p = base + k * s.inner + i;
        data[p] = std::exp(da[p] - peak[i]);
        total[i] += data[p];
      }
    }
    for (std::size_t k = 0; k < s.len; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) data[base + k * s.inner + i] /= total[i];
    }
  }
  return Tensor::make_result(
      "softmax", a.shape(), std::move(data), {a},
      [axis](const Tensor& g, const Tensor& out, std::span<const Tensor>) -> std::vector<Tensor> {
        // ds_j/dt_i = s_j (delta_ij - s_i)
        return {out * (g - sum(g * out, axis))};
      });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  if (parts.size() == 1) return parts.front();
  Shape shape = parts.front().shape();
  split_at(shape, axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim() != shape.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != axis && p.size(d) != shape[d]) {
        throw DimensionError("concat shape mismatch: " + to_string(p.shape()) + " vs " + to_string(shape));
      }
    }
    total += p.size(axis);
  }
  shape[axis] = total;
  const auto dst = split_at(shape, axis);
  std::vector<double> data(numel(shape));
  std::size_t offset = 0;
  std::vector<std::size_t> starts;
  for (const auto& p : parts) {
    starts.push_back(offset);
    const auto src = split_at(p.shape(), axis);
    auto dp = p.data();
    for (std::size_t o = 0; o < src.outer; ++o) {
      const double* from = dp.data() + o * src.len * src.inner;
      double* to = data.data() + (o * dst.len + offset) * dst.inner;
      std::copy(from, from + src.len * src.inner, to);
    }
    offset += p.size(axis);
  }
  return Tensor::make_result(
      "concat", std::move(shape), std::move(data), parts,
      [axis, starts](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
        std::vector<Tensor> grads(in.size());
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (in[i].requires_grad()) grads[i] = slice(g, axis, starts[i], in[i].size(axis));
        }
        return grads;
      });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto src = split_at(a.shape(), axis);
  if (length == 0 || start + length > src.len) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis of extent " + std::to_string(src.len));
  }
  if (start == 0 && length == src.len) return a;
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<double> data(numel(shape));
  auto da = a.data();
  for (std::size_t o = 0; o < src.outer; ++o) {
    const double* from = da.data() + (o * src.len + start) * src.inner;
    std::copy(from, from + length * src.inner, data.data() + o * length * src.inner);
  }
  return Tensor::make_result(
      "slice", std::move(shape), std::move(data), {a},
      [axis, start](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
        return {embed(g, in[0].shape(), axis, start)};
      });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.size(0), n = a.size(1);
  std::vector<double> data(m * n);
  auto da = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) data[j * m + i] = da[i * n + j];
  return Tensor::make_result("transpose", {n, m}, std::move(data), {a},
                             [](const Tensor& g, const Tensor&, std::span<const Tensor>) -> std::vector<Tensor> {
                               return {transpose(g)};
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = trans_a ? a.size(1) : a.size(0);
  const std::size_t ka = trans_a ? a.size(0) : a.size(1);
  const std::size_t kb = trans_b ? b.size(1) : b.size(0);
  const std::size_t n = trans_b ? b.size(0) : b.size(1);
  if (ka != kb) {
    throw DimensionError("matmul inner dimensions disagree: " + to_string(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + to_string(b.shape()) + (trans_b ? "^T" : ""));
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> A(a.data().data(), static_cast<Eigen::Index>(a.size(0)),
                             static_cast<Eigen::Index>(a.size(1)));
  Eigen::Map<const RowMat> B(b.data().data(), static_cast<Eigen::Index>(b.size(0)),
                             static_cast<Eigen::Index>(b.size(1)));
  // The buffer starts zeroed, so accumulate instead of letting Eigen clear it again.
  std::vector<double> data(m * n);
  Eigen::Map<RowMat> C(data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!trans_a && !trans_b) {
    C.noalias() += A * B;
  } else if (trans_a && !trans_b) {
    C.noalias() += A.transpose() * B;
  } else if (!trans_a && trans_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
  return Tensor::make_result(
      "matmul", {m, n}, std::move(data), {a, b},
      [trans_a, trans_b](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
        const Tensor& x = in[0];
        const Tensor& y = in[1];
        Tensor gx, gy;
        if (!trans_a && !trans_b) {
          if (x.requires_grad()) gx = matmul(g, y, false, true);
          if (y.requires_grad()) gy = matmul(x, g, true, false);
        } else if (trans_a && !trans_b) {
          if (x.requires_grad()) gx = matmul(y, g, false, true);
          if (y.requires_grad()) gy = matmul(x, g, false, false);
        } else if (!trans_a && trans_b) {
          if (x.requires_grad()) gx = matmul(g, y, false, false);
          if (y.requires_grad()) gy = matmul(g, x, true, false);
        } else {
          if (x.requires_grad()) gx = matmul(y, g, true, true);
          if (y.requires_grad()) gy = matmul(g, x, true, true);
        }
        return {gx, gy};
      });
}

Tensor rowmix(const Tensor& w, const Tensor& x, bool transpose_w) {
  if (w.dim() != 3 || x.dim() != 2 || w.size(0) != x.size(0)) {
    throw DimensionError("rowmix expects W [k,O,I] and X [k,*], got " + to_string(w.shape()) + " and " +
                         to_string(x.shape()));
  }
  const std::size_t k = w.size(0), o_dim = w.size(1), i_dim = w.size(2);
  const std::size_t in_dim = transpose_w ? o_dim : i_dim;
  const std::size_t out_dim = transpose_w ? i_dim : o_dim;
  if (x.size(1) != in_dim) {
    throw DimensionError("rowmix channel mismatch: W " + to_string(w.shape()) + ", X " + to_string(x.shape()));
  }
  auto dw = w.data();
  auto dx = x.data();
  std::vector<double> data(k * out_dim, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    const double* wr = dw.data() + r * o_dim * i_dim;
    const double* xr = dx.data() + r * in_dim;
    double* yr = data.data() + r * out_dim;
    for (std::size_t o = 0; o < o_dim; ++o) {
      for (std::size_t i = 0; i < i_dim; ++i) {
        if (transpose_w) {
          yr[i] += wr[o * i_dim + i] * xr[o];
        } else {
          yr[o] += wr[o * i_dim + i] * xr[i];
        }
      }
    }
  }
  return Tensor::make_result(
      "rowmix", {k, out_dim}, std::move(data), {w, x},
      [transpose_w](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
        Tensor gw, gx;
        if (transpose_w) {
          if (in[0].requires_grad()) gw = row_outer(in[1], g);
          if (in[1].requires_grad()) gx = rowmix(in[0], g, false);
        } else {
          if (in[0].requires_grad()) gw = row_outer(g, in[1]);
          if (in[1].requires_grad()) gx = rowmix(in[0], g, true);
        }
        return {gw, gx};
      });
}

Tensor row_outer(const Tensor& a, const Tensor& b) {
  require_2d(a, "row_outer");
  require_2d(b, "row_outer");
  if (a.size(0) != b.size(0)) throw DimensionError("row_outer row count mismatch");
  const std::size_t k = a.size(0), o_dim = a.size(1), i_dim = b.size(1);
  std::vector<double> data(k * o_dim * i_dim);
  auto da = a.data();
  auto db = b.data();
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t o = 0; o < o_dim; ++o)
      for (std::size_t i = 0; i < i_dim; ++i) data[(r * o_dim + o) * i_dim + i] = da[r * o_dim + o] * db[r * i_dim + i];
  return Tensor::make_result("row_outer", {k, o_dim, i_dim}, std::move(data), {a, b},
                             [](const Tensor& g, const Tensor&, std::span<const Tensor> in) -> std::vector<Tensor> {
                               return {in[0].requires_grad() ? rowmix(g, in[1], false) : Tensor(),
                                       in[1].requires_grad() ? rowmix(g, in[0], true) : Tensor()};
                             });
}

// ---------------------------------------------------------------------------
// DFT

namespace {

struct DftBasis {
  Tensor forward_cos;   // [k, M]
  Tensor forward_sin;   // [k, M], carries the minus sign
  Tensor inverse_cos;   // [M, k]
  Tensor inverse_sin;   // [M, k]
};

const DftBasis& dft_basis(std::size_t length, std::size_t modes) {
  thread_local std::map<std::pair<std::size_t, std::size_t>, DftBasis> cache;
  auto key = std::make_pair(length, modes);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  std::vector<double> fc(modes * length), fs(modes * length), ic(length * modes), is(length * modes);
  const double m = static_cast<double>(length);
  for (std::size_t f = 0; f < modes; ++f) {
    // Hermitian weight: interior modes stand for themselves and their mirror.
    const double weight = (f == 0 || 2 * f == length) ? 1.0 : 2.0;
    for (std::size_t t = 0; t < length; ++t) {
      // Reduce the phase index exactly before scaling to keep symmetric entries bitwise equal.
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((f * t) % length) / m;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      fc[f * length + t] = c;
      fs[f * length + t] = -s;
      ic[t * modes + f] = weight * c / m;
      is[t * modes + f] = -weight * s / m;
    }
  }
  DftBasis basis{Tensor({modes, length}, std::move(fc)), Tensor({modes, length}, std::move(fs)),
                 Tensor({length, modes}, std::move(ic)), Tensor({length, modes}, std::move(is))};
  return cache.emplace(key, std::move(basis)).first->second;
}

}  // namespace

ComplexTensor dft_axis(const Tensor& z, std::size_t modes) {
  require_2d(z, "dft_axis");
  const std::size_t length = z.size(0);
  if (modes < 1 || modes > length / 2 + 1) {
    throw ConfigError("dft_axis: modes must lie in [1, " + std::to_string(length / 2 + 1) + "], got " +
                      std::to_string(modes));
  }
  const auto& basis = dft_basis(length, modes);
  return {matmul(basis.forward_cos, z), matmul(basis.forward_sin, z)};
}

Tensor idft_axis(const ComplexTensor& spectrum, std::size_t length) {
  require_2d(spectrum.re, "idft_axis");
  if (spectrum.re.shape() != spectrum.im.shape()) throw DimensionError("idft_axis: re/im shape mismatch");
  const std::size_t modes = spectrum.re.size(0);
  if (modes < 1 || modes > length / 2 + 1) {
    throw ConfigError("idft_axis: " + std::to_string(modes) + " modes cannot describe length " +
                      std::to_string(length));
  }
  const auto& basis = dft_basis(length, modes);
  return matmul(basis.inverse_cos, spectrum.re) + matmul(basis.inverse_sin, spectrum.im);
}

}  // namespace pdeco
