#include "lobemil/tensor.hpp"
#include <algorithm>

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace lobemil {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

double Rng::normal(double mu, double sigma) {
  if (have_spare_) {
    have_spare_ = false;
    return mu + sigma * spare_;
  }
  // Box-Muller on open-interval uniforms.
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return mu + sigma * r * std::cos(a);
}

uint64_t derive_seed(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243f6a8885a308d3ULL;
  for (uint64_t p : parts) {
    h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    Rng mix(h);
    h = mix.next_u64();
  }
  return h;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(size_t(n), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != int64_t(data.size()))
    throw std::invalid_argument("from_data: " + shape_str(shape) +
                                " does not match buffer of " +
                                std::to_string(data.size()) + " scalars");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::uniform(Shape shape, double bound, Rng& rng,
                       bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::numel() const { return int64_t(impl_->data.size()); }
int64_t Tensor::dim(size_t i) const { return impl_->shape.at(i); }
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

std::vector<double>& Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item(): tensor " + shape_str(shape()) +
                                " is not scalar");
  return impl_->data[0];
}

bool Tensor::has_grad() const { return impl_ && impl_->grad != nullptr; }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("tensor has no gradient");
  return *impl_->grad;
}

std::vector<double>& Tensor::mutable_grad() const {
  return impl_->grad_buffer();
}

void Tensor::zero_grad() const {
  if (impl_ && impl_->grad) impl_->grad.reset();
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (!grad) grad = std::make_unique<std::vector<double>>(data.size(), 0.0);
  return *grad;
}

void TensorImpl::accumulate(const std::vector<double>& g) {
  if (!requires_grad) return;
  std::vector<double>& buf = grad_buffer();
  for (size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

Tensor Tensor::make(Shape shape, std::vector<double> data,
                    std::vector<Tensor> parents,
                    std::function<void(TensorImpl&)> backward_fn,
                    const char* op_name) {
  Tensor out = from_data(std::move(shape), std::move(data));
  bool needs = false;
  if (g_grad_enabled)
    for (const Tensor& p : parents)
      if (p.requires_grad()) needs = true;
  if (needs) {
    out.impl_->requires_grad = true;
    out.impl_->parents = std::move(parents);
    out.impl_->backward_fn = std::move(backward_fn);
    out.impl_->op_name = op_name;
  }
  return out;
}

void Tensor::backward() const {
  if (!defined()) throw std::runtime_error("backward() on undefined tensor");
  if (numel() != 1)
    throw std::invalid_argument("backward() requires a scalar loss, got " +
                                shape_str(shape()));
  // Post-order DFS over the recorded graph; parent order makes the
  // traversal (and therefore accumulation order) deterministic.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (impl_->requires_grad) {
    stack.push_back({impl_.get(), 0});
    seen.insert(impl_.get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].impl();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  // Interior nodes get fresh buffers each sweep; leaves accumulate across
  // repeated backward calls.
  for (TensorImpl* node : order)
    if (node->backward_fn && node->grad)
      std::fill(node->grad->begin(), node->grad->end(), 0.0);
  impl_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && node->grad) node->backward_fn(*node);
  }
}

Tensor& ParamStore::create(const std::string& name, Tensor t) {
  auto [it, inserted] = items_.emplace(name, std::move(t));
  if (!inserted)
    throw std::invalid_argument("duplicate parameter name: " + name);
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = items_.find(name);
  if (it == items_.end())
    throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = items_.find(name);
  if (it == items_.end())
    throw std::out_of_range("no parameter named " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return items_.count(name) != 0;
}

void ParamStore::zero_grads() {
  // Buffers are kept and cleared in place; parameters are long-lived and
  // reallocating tens of MB per step costs more than the memset.
  for (auto& [name, t] : items_)
    if (t.has_grad())
      std::fill(t.mutable_grad().begin(), t.mutable_grad().end(), 0.0);
}

void ParamStore::ensure_grads() {
  for (auto& [name, t] : items_) t.mutable_grad();
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

int64_t ParamStore::count_with_prefix(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, t] : items_)
    if (name.rfind(prefix, 0) == 0) n += t.numel();
  return n;
}

}  // namespace lobemil
