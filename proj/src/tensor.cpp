#include "stgan/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "stgan/errors.hpp"

namespace stgan {
namespace {

thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape) {
  if (shape.size() > 4) {
    throw ShapeError("tensor rank " + std::to_string(shape.size()) +
                     " exceeds the supported maximum of 4");
  }
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {

std::vector<double>& grad_buffer(TensorImpl& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.value.size(), 0.0);
  return impl.grad;
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("element count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           std::vector<Tensor> inputs, detail::BackwardFn backward,
                           const char* op) {
  Tensor out = from(std::move(shape), std::move(values), false);
  out.impl_->op = op;
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  out.impl_->requires_grad = true;
  out.impl_->backward = std::move(backward);
  out.impl_->inputs.reserve(inputs.size());
  for (auto& in : inputs) out.impl_->inputs.push_back(in.impl_);
  return out;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const {
  return static_cast<std::int64_t>(impl_->value.size());
}

std::span<const double> Tensor::data() const { return impl_->value; }

std::span<double> Tensor::mutable_data() { return impl_->value; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->value[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.clear(); }

bool Tensor::is_leaf() const { return !impl_->backward; }

const char* Tensor::op_name() const { return impl_->op; }

void Tensor::backward() const {
  if (rank() != 0) {
    throw ShapeError("backward() requires a rank-0 loss, got shape " +
                     shape_str(shape()));
  }
  if (!requires_grad()) {
    throw std::logic_error("backward() on a tensor that is not part of a graph");
  }
  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::TensorImpl* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Leaves gather this pass's contributions from zero and add them to their
  // earlier gradient at the end, so k identical passes give exactly k times
  // one pass even when a leaf is reached along several paths.
  std::vector<std::pair<detail::TensorImpl*, std::vector<double>>> carried;
  for (auto* node : order) {
    if (!node->backward && !node->grad.empty()) {
      carried.emplace_back(node, std::move(node->grad));
    }
    node->grad.clear();
  }
  detail::grad_buffer(*impl_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    if (node != impl_.get()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
  for (auto& [leaf, earlier] : carried) {
    auto& g = detail::grad_buffer(*leaf);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = earlier[i] + g[i];
  }
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->value = impl_->value;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return from(shape(), impl_->value, requires_grad()); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

void check_finite(const Tensor& t, std::string_view where) {
  const auto values = t.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteError("non-finite value " + std::to_string(values[i]) +
                           " at element " + std::to_string(i) + " of " +
                           std::string(where) + " " + shape_str(t.shape()));
    }
  }
}

}  // namespace stgan
