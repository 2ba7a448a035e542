#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stgan {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;
using BackwardFn = std::function<void(TensorImpl& out)>;

// One node of the differentiation graph. Leaves have no backward rule;
// interior nodes keep their inputs alive and read saved values through them.
struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
  const char* op = "leaf";
};

// Returns the gradient buffer of `impl`, allocating zeros on first use.
std::vector<double>& grad_buffer(TensorImpl& impl);

}  // namespace detail

// Dense row-major tensor of doubles with reverse-mode differentiation.
// Copies share storage and graph identity (handle semantics).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  // Builds an op output. The backward rule is only attached when grad mode is
  // enabled and some input requires grad; otherwise the result is a constant.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs,
                            detail::BackwardFn backward, const char* op);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;

  std::span<const double> data() const;
  // Mutable view for leaf tensors (parameter updates, test fixtures).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  bool is_leaf() const;
  const char* op_name() const;

  // Reverse pass from a rank-0 tensor. Leaf gradients accumulate across
  // calls; interior gradients are recomputed each pass.
  void backward() const;

  // Same values, no graph history.
  Tensor detach() const;
  // Deep copy of the values into a fresh leaf.
  Tensor clone() const;

  const detail::ImplPtr& impl() const { return impl_; }

 private:
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}
  detail::ImplPtr impl_;
};

// Disables graph construction for the lifetime of the guard (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Throws NonFiniteError naming `where` if any element is NaN or infinite.
void check_finite(const Tensor& t, std::string_view where);

}  // namespace stgan
