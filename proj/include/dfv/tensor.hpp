#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dfv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Storage behind a Tensor handle. Values are row-major 64-bit reals.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something is accumulated into it
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Shared handle to an N-d array. Copies alias the same storage, the way
/// parameters are shared between a model and its optimizer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  /// Throws ShapeError if values.size() != numel(shape), NumericError on non-finite input.
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access; intended for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy of the values, detached from the tape.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }
  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Append-only record of differentiable operations. Insertion order is a
/// topological order, so backward simply walks the nodes in reverse.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  /// The calling thread's tape. A tape is never shared across threads.
  static Tape& current();

  void record(std::string op, const std::vector<Tensor>& inputs, const Tensor& output,
              std::function<void()> backward);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear();

  /// Node indices visited by the most recent backward pass, in visit order.
  const std::vector<std::size_t>& last_visit_order() const { return visit_order_; }

 private:
  friend void backward(const Tensor& root);
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

bool grad_enabled();

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

/// Seeds d(root)/d(root) = 1 and propagates through the current tape.
/// Leaf gradients accumulate across calls; intermediate gradients are reset.
/// Throws ShapeError if root is not a scalar.
void backward(const Tensor& root);

namespace detail {

/// Creates a non-leaf result, rejecting non-finite values with the op name.
Tensor make_result(Shape shape, std::vector<double> values, const char* op, bool requires_grad);
bool needs_grad(std::initializer_list<const Tensor*> inputs);
/// Gradient buffer of impl, allocated as zeros on first use.
std::vector<double>& grad_of(TensorImpl& impl);

}  // namespace detail

}  // namespace dfv
