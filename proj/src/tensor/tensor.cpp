#include "dfv/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dfv/error.hpp"

namespace dfv {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
}

thread_local bool g_grad_enabled = true;

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  check_finite(impl->data, "Tensor::full");
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape_numel(shape))
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  check_finite(values, "Tensor::from");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  shape();
  impl_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return !impl_ || impl_->is_leaf; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) return {};
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  shape();
  return detail::grad_of(*impl_);
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::string op, const std::vector<Tensor>& inputs, const Tensor& output,
                  std::function<void()> fn) {
  Node node;
  node.op = std::move(op);
  for (const Tensor& t : inputs)
    if (t.defined()) node.inputs.push_back(t.handle());
  node.output = output.handle();
  node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
}

void Tape::clear() {
  nodes_.clear();
  visit_order_.clear();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw ShapeError("backward requires a scalar root, got shape " +
                     (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  if (!root.requires_grad()) throw NumericError("backward: root does not require grad");

  Tape& tape = Tape::current();
  for (auto& node : tape.nodes_) node.output->grad.clear();
  detail::grad_of(*root.impl())[0] += 1.0;

  tape.visit_order_.clear();
  for (std::size_t i = tape.nodes_.size(); i-- > 0;) {
    const auto& node = tape.nodes_[i];
    if (node.output->grad.empty()) continue;
    tape.visit_order_.push_back(i);
    node.backward();
  }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> values, const char* op, bool requires_grad) {
  check_finite(values, op);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  impl->is_leaf = !requires_grad;
  return Tensor(std::move(impl));
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t && t->requires_grad()) return true;
  return false;
}

std::vector<double>& grad_of(TensorImpl& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

}  // namespace detail

}  // namespace dfv
