#pragma once

// Dense float64 tensors with a dynamic reverse-mode differentiation record.
//
// Every operation on tensors that require gradients appends a node to the
// graph. Backward rules are themselves written in terms of recorded
// operations, so running `backward(root, /*create_graph=*/true)` yields
// gradients that can be differentiated again.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace pdeco {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

/// Vector-Jacobian rule: maps the gradient of the output to one gradient per
/// input. An entry may be left undefined when the input does not require grad.
using BackwardRule = std::function<std::vector<Tensor>(
    const Tensor& grad_out, const Tensor& out, std::span<const Tensor> inputs)>;

struct GradFn {
  std::string op;
  std::vector<Tensor> inputs;
  BackwardRule rule;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::shared_ptr<GradFn> grad_fn;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Row-major 2-D tensor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const { return data().size(); }

  std::span<const double> data() const;
  /// Writable view; only permitted on tensors without a recorded history.
  std::span<double> mutable_data();

  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  const GradFn* grad_fn() const;
  std::uint64_t id() const;

  /// Copy of the values with no history.
  Tensor detach() const;

  const detail::TensorImpl* impl() const noexcept { return impl_.get(); }

  /// Internal: construct the output of a recorded operation.
  static Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                            std::vector<Tensor> inputs, BackwardRule rule);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& checked() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Complex tensor stored as separate real and imaginary parts of equal shape.
struct ComplexTensor {
  Tensor re;
  Tensor im;

  const Shape& shape() const { return re.shape(); }
};

// ---------------------------------------------------------------------------
// Grad mode

bool grad_enabled() noexcept;

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Elementwise (trailing-dimension broadcasting)

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Raises DomainError when any divisor element is exactly zero.
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
Tensor erf(const Tensor& a);
/// x * Phi(x) with the exact Gaussian CDF.
Tensor gelu(const Tensor& a);
/// Exponential linear unit, alpha = 1.
Tensor elu(const Tensor& a);
Tensor maximum(const Tensor& a, double floor);
Tensor minimum(const Tensor& a, double ceiling);
Tensor relu(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);

enum class ElementwiseKind { add, sub, mul, div, neg, gelu, exp, log, sqrt, pow };

/// Dispatcher over the elementwise family. `b` is required for binary kinds;
/// for `pow` the exponent is passed as `exponent`.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor* b = nullptr,
                   double exponent = 1.0);

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

Tensor reshape(const Tensor& a, Shape shape);
Tensor expand(const Tensor& a, const Shape& shape);
/// Sums broadcast dimensions away so the result has `shape`.
Tensor sum_to(const Tensor& a, const Shape& shape);
Tensor sum(const Tensor& a);
/// Sum along `axis`, keeping it with extent 1.
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor transpose(const Tensor& a);

// ---------------------------------------------------------------------------
// Linear algebra

/// op(a) * op(b) for 2-D tensors, op = transpose when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// Per-row channel mixing. W is [k, O, I]; X is [k, I] giving Y[i,o] = sum_j W[i,o,j] X[i,j].
/// With `transpose_w`, X is [k, O] and Y[i,j] = sum_o W[i,o,j] X[i,o].
Tensor rowmix(const Tensor& w, const Tensor& x, bool transpose_w = false);
/// Row-wise outer product: A [k, O], B [k, I] -> [k, O, I].
Tensor row_outer(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Discrete Fourier transform along the first axis (real input)

/// Unnormalized forward transform of z [M, C], keeping the first `modes` frequencies.
ComplexTensor dft_axis(const Tensor& z, std::size_t modes);
/// Inverse of dft_axis with 1/M normalization; missing modes are treated as zero.
Tensor idft_axis(const ComplexTensor& spectrum, std::size_t length);

// ---------------------------------------------------------------------------
// Reverse mode

/// Gradients of a scalar root, keyed by leaf tensor.
class GradMap {
 public:
  bool contains(const Tensor& leaf) const;
  /// Gradient of `leaf`; zeros when the leaf is unreachable from the root.
  Tensor at(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

  void insert(const Tensor& leaf, Tensor grad);

 private:
  std::unordered_map<const detail::TensorImpl*, Tensor> grads_;
};

/// Accumulates the gradient of `root` into every reachable leaf that requires
/// grad. With `create_graph`, the returned gradients carry their own history.
GradMap backward(const Tensor& root, bool create_graph = false);

/// Gradients of `root` with respect to `inputs` (which may be non-leaves).
std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

/// Number of backward passes run with create_graph on this thread.
std::uint64_t create_graph_count() noexcept;

}  // namespace pdeco
