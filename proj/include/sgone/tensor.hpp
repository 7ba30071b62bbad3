#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sgone/errors.hpp"

namespace sgone {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major tensor. Copying a Tensor copies a handle; the underlying
// buffer is shared. Values are written once by the producing operation and
// treated as immutable afterwards, except for parameters, which the optimizer
// updates outside any tape.
template <typename T>
class Tensor {
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
  };

 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad, /*fill*/ T{0});
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad, value);
  }

  static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = std::move(shape);
    t.st_->data = std::move(values);
    t.st_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return st_ != nullptr; }

  const Shape& shape() const { return st_->shape; }
  int rank() const { return static_cast<int>(st_->shape.size()); }

  int dim(int i) const {
    if (i < 0 || i >= rank()) {
      throw ShapeError("dim index " + std::to_string(i) + " out of range for " +
                       shape_str(st_->shape));
    }
    return st_->shape[i];
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(st_->data.size()); }

  std::span<const T> data() const { return {st_->data.data(), st_->data.size()}; }
  std::span<T> mutable_data() { return {st_->data.data(), st_->data.size()}; }

  // Scalar accessor for rank-0 / single-element tensors.
  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on non-scalar tensor " + shape_str(st_->shape));
    }
    return st_->data[0];
  }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool v) { st_->requires_grad = v; }

  bool has_grad() const { return st_ && !st_->grad.empty(); }

  std::span<const T> grad() const {
    if (st_->grad.empty()) {
      throw TapeError("gradient not populated; run backward() first");
    }
    return {st_->grad.data(), st_->grad.size()};
  }

  // Gradient buffer for accumulation, zero-initialized on first use.
  std::span<T> grad_accum() {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), T{0});
    return {st_->grad.data(), st_->grad.size()};
  }

  void zero_grad() {
    if (st_) st_->grad.clear();
  }

  Tensor clone() const {
    Tensor t;
    if (st_) {
      t.st_ = std::make_shared<Storage>();
      t.st_->shape = st_->shape;
      t.st_->data = st_->data;
      t.st_->requires_grad = st_->requires_grad;
    }
    return t;
  }

  // Identity of the underlying buffer; used to assert weight sharing.
  const void* storage_id() const { return st_.get(); }
  bool same_storage(const Tensor& other) const { return st_ == other.st_; }

 private:
  Tensor(Shape shape, std::vector<T>, bool requires_grad, T fill) {
    st_ = std::make_shared<Storage>();
    const auto n = shape_numel(shape);
    st_->shape = std::move(shape);
    st_->data.assign(static_cast<std::size_t>(n), fill);
    st_->requires_grad = requires_grad;
  }

  std::shared_ptr<Storage> st_;
};

// Records backward rules for the operations executed while it is alive.
// Construction activates the tape for the current thread (RAII, nestable);
// ops::backward() replays the recorded rules in reverse execution order,
// which is a reverse topological order of the value graph.
template <typename T>
class GradTape {
 public:
  GradTape() : prev_(tl_active) { tl_active = this; }

  ~GradTape() { tl_active = prev_; }

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return tl_active; }

  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return steps_.size(); }

  void run_backward() {
    if (consumed_) {
      throw TapeError("backward() called twice on a consumed tape");
    }
    consumed_ = true;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

 private:
  static inline thread_local GradTape* tl_active = nullptr;

  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
  GradTape* prev_ = nullptr;
};

using DTensor = Tensor<double>;
using FTensor = Tensor<float>;

}  // namespace sgone
