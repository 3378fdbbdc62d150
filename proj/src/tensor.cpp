#include "pdeco/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_set>

#include "pdeco/error.hpp"

namespace pdeco {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_create_graph_count = 0;

std::uint64_t next_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (pdeco::numel(shape) != data.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
  impl_->id = next_id();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = pdeco::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

detail::TensorImpl& Tensor::checked() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for shape " + to_string(s));
  return s[axis];
}

std::span<const double> Tensor::data() const { return checked().data; }

std::span<double> Tensor::mutable_data() {
  auto& impl = checked();
  if (impl.grad_fn) throw UsageError("cannot mutate a tensor produced by a recorded operation");
  return impl.data;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() requires a single-element tensor, got " + to_string(shape()));
  return data()[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
  const auto& s = shape();
  if (s.size() != 2) throw DimensionError("at(i, j) requires a 2-D tensor");
  return data()[i * s[1] + j];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  auto& impl = checked();
  if (impl.grad_fn && !flag) throw UsageError("cannot clear requires_grad on a non-leaf tensor");
  impl.requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return !checked().grad_fn; }

const GradFn* Tensor::grad_fn() const { return checked().grad_fn.get(); }

std::uint64_t Tensor::id() const { return checked().id; }

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<double>(data().begin(), data().end())); }

Tensor Tensor::make_result(std::string op, Shape shape, std::vector<double> data,
                           std::vector<Tensor> inputs, BackwardRule rule) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->id = next_id();
  if (t_grad_enabled &&
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    impl->requires_grad = true;
    impl->grad_fn = std::make_shared<GradFn>(GradFn{std::move(op), std::move(inputs), std::move(rule)});
  }
  return Tensor(std::move(impl));
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::uint64_t create_graph_count() noexcept { return t_create_graph_count; }

// ---------------------------------------------------------------------------
// Reverse mode

bool GradMap::contains(const Tensor& leaf) const { return grads_.count(leaf.impl()) != 0; }

Tensor GradMap::at(const Tensor& leaf) const {
  auto it = grads_.find(leaf.impl());
  if (it == grads_.end()) return Tensor::zeros(leaf.shape());
  return it->second;
}

void GradMap::insert(const Tensor& leaf, Tensor grad) { grads_[leaf.impl()] = std::move(grad); }

namespace {

// Runs the reverse sweep. When `targets` is empty every reachable leaf is
// reported; otherwise only the listed tensors are.
GradMap run_backward(const Tensor& root, const std::vector<Tensor>& targets, bool create_graph) {
  if (!root.defined()) throw UsageError("backward on an undefined tensor");
  if (root.numel() != 1) {
    throw UsageError("backward requires a scalar root, got shape " + to_string(root.shape()));
  }
  GradMap result;
  if (!root.requires_grad()) return result;

  std::unordered_set<const detail::TensorImpl*> wanted;
  for (const auto& t : targets) wanted.insert(t.impl());

  std::vector<Tensor> order;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<Tensor> stack{root};
  seen.insert(root.impl());
  while (!stack.empty()) {
    Tensor node = std::move(stack.back());
    stack.pop_back();
    if (const GradFn* fn = node.grad_fn()) {
      for (const auto& in : fn->inputs) {
        if (in.requires_grad() && seen.insert(in.impl()).second) stack.push_back(in);
      }
    }
    order.push_back(std::move(node));
  }
  // Ids increase with creation time, so descending id is a reverse topological order.
  std::sort(order.begin(), order.end(), [](const Tensor& a, const Tensor& b) { return a.id() > b.id(); });

  std::optional<NoGradGuard> guard;
  if (create_graph) {
    ++t_create_graph_count;
  } else {
    guard.emplace();
  }

  // Contributions arrive from consumers in descending id order; they are summed
  // in ascending consumer order so the result depends only on the graph.
  std::unordered_map<const detail::TensorImpl*, std::vector<Tensor>> pending;
  pending[root.impl()].push_back(Tensor::ones(root.shape()));

  for (const auto& node : order) {
    auto it = pending.find(node.impl());
    if (it == pending.end()) continue;
    auto& parts = it->second;
    Tensor g = parts.back();
    for (std::size_t k = parts.size() - 1; k-- > 0;) g = add(g, parts[k]);
    pending.erase(it);

    const GradFn* fn = node.grad_fn();
    if (targets.empty() ? fn == nullptr : wanted.count(node.impl()) != 0) result.insert(node, g);
    if (!fn) continue;

    auto input_grads = fn->rule(g, node, fn->inputs);
    for (std::size_t i = 0; i < fn->inputs.size(); ++i) {
      const Tensor& in = fn->inputs[i];
      if (!in.requires_grad() || i >= input_grads.size() || !input_grads[i].defined()) continue;
      if (input_grads[i].shape() != in.shape()) {
        throw DimensionError("backward of '" + fn->op + "' produced gradient of shape " +
                             to_string(input_grads[i].shape()) + " for input of shape " +
                             to_string(in.shape()));
      }
      pending[in.impl()].push_back(input_grads[i]);
    }
  }
  return result;
}

}  // namespace

GradMap backward(const Tensor& root, bool create_graph) { return run_backward(root, {}, create_graph); }

std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& inputs, bool create_graph) {
  auto map = run_backward(root, inputs, create_graph);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(map.at(in));
  return out;
}

}  // namespace pdeco
