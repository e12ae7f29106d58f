#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lobemil/rng.hpp"

namespace lobemil {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;

// Dense 64-bit tensor with an attached gradient slot. Tensors are value
// handles onto a shared node; operations on tensors that require gradients
// record a backward closure so that backward() can replay the graph in
// reverse topological order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);
  // Uniform in [-bound, bound].
  static Tensor uniform(Shape shape, double bound, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int64_t dim(size_t i) const;
  bool requires_grad() const;

  // Tensor is a shared handle: constness of the handle does not propagate
  // to the underlying node, mirroring shared_ptr semantics.
  std::vector<double>& data() const;
  double item() const;  // scalar tensors only

  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad() const;  // allocates zeros on first use
  void zero_grad() const;

  // Reverse-mode sweep from a scalar. Grads accumulate across calls.
  void backward() const;

  TensorImpl* impl() const { return impl_.get(); }

  // Graph construction helper used by every differentiable op.
  static Tensor make(Shape shape, std::vector<double> data,
                     std::vector<Tensor> parents,
                     std::function<void(TensorImpl&)> backward_fn,
                     const char* op_name);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::unique_ptr<std::vector<double>> grad;
  std::vector<Tensor> parents;
  std::function<void(TensorImpl&)> backward_fn;
  const char* op_name = "leaf";

  std::vector<double>& grad_buffer();
  // Adds `g` (scaled) into the grad buffer if this node wants gradients.
  void accumulate(const std::vector<double>& g);
};

// RAII guard that disables graph recording (inference / finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Named map of trainable tensors. Iteration order is sorted by name so
// optimizers and serialization are deterministic.
class ParamStore {
 public:
  Tensor& create(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::map<std::string, Tensor>& items() { return items_; }
  const std::map<std::string, Tensor>& items() const { return items_; }

  void zero_grads();
  // Allocates zero grad buffers for every entry missing one.
  void ensure_grads();
  int64_t total_params() const;
  int64_t count_with_prefix(const std::string& prefix) const;

 private:
  std::map<std::string, Tensor> items_;
};

}  // namespace lobemil
