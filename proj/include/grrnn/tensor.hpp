#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "grrnn/common.hpp"

namespace grrnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<std::size_t>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

/// N-dimensional array of scalars with an optional same-shape gradient slot.
/// Copying a Tensor copies the handle, not the storage; ops on a Tape record
/// backward closures that write into the shared grad buffers.
template <typename T>
class Tensor {
  struct Storage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty unless requires_grad
    bool requires_grad = false;
  };

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->values.assign(shape_numel(t.s_->shape), value);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw ShapeError("tensor value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->values = std::move(values);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape[i]; }
  std::size_t numel() const { return s_->values.size(); }

  T* data() { return s_->values.data(); }
  const T* data() const { return s_->values.data(); }
  std::vector<T>& values() { return s_->values; }
  const std::vector<T>& values() const { return s_->values; }

  bool requires_grad() const { return s_ && s_->requires_grad; }

  void set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (on && s_->grad.size() != s_->values.size())
      s_->grad.assign(s_->values.size(), T(0));
    if (!on) s_->grad.clear();
  }

  T* grad_data() { return s_->grad.data(); }
  const T* grad_data() const { return s_->grad.data(); }
  std::vector<T>& grad() { return s_->grad; }
  const std::vector<T>& grad() const { return s_->grad; }

  void zero_grad() {
    if (requires_grad()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return s_->values[0];
  }

  bool all_finite() const {
    for (const T v : s_->values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  /// Identity of the underlying storage; two handles alias iff equal.
  const void* id() const { return s_.get(); }

 private:
  std::shared_ptr<Storage> s_;
};

/// Ordered record of executed operations. Ops append one closure each in
/// execution order; backward() replays them in exact reverse order. The tape
/// is rebuilt per forward pass (define-by-run).
template <typename T>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  std::size_t size() const { return steps_.size(); }

  void clear() { steps_.clear(); }

  /// Seed d(loss)/d(loss) = 1 and run all recorded steps in reverse.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw ValueError("backward() on a tensor that does not require grad");
    loss.grad()[0] = T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
};

}  // namespace grrnn
