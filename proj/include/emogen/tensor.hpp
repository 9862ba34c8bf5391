#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emogen/error.hpp"
#include "emogen/rng.hpp"

namespace emogen {

inline size_t shape_size(const std::vector<int>& shape) {
  size_t n = 1;
  for (int s : shape) {
    if (s <= 0) throw DimError("shape entries must be positive");
    n *= static_cast<size_t>(s);
  }
  return n;
}

// Dense row-major array of doubles. Plain value type; gradients live in
// ParamStore entries and graph nodes, not here.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(shape_size(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    if (v.size() != shape_size(shape)) throw DimError("tensor data length does not match shape");
  }

  static Tensor scalar(double x) { return Tensor({1}, {x}); }

  size_t size() const { return v.size(); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int i) { return v[static_cast<size_t>(i)]; }
  double at(int i) const { return v[static_cast<size_t>(i)]; }
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

// Named, shaped, differentiable parameter arrays. Insertion order is the
// iteration order, which fixes the gradient accumulation and SGD update
// order run to run.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  explicit ParamStore(uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

  Tensor& add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back(Entry{name, Tensor(shape), Tensor(shape)});
    return entries_.back().value;
  }

  Tensor& add_uniform(const std::string& name, std::vector<int> shape, double scale, Rng& rng) {
    Tensor& t = add(name, std::move(shape));
    for (auto& x : t.v) x = rng.uniform(-scale, scale);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }

  Entry& entry(int idx) { return entries_[static_cast<size_t>(idx)]; }
  const Entry& entry(int idx) const { return entries_[static_cast<size_t>(idx)]; }
  Entry& entry(const std::string& name) { return entries_[static_cast<size_t>(index_of(name))]; }
  const Entry& entry(const std::string& name) const {
    return entries_[static_cast<size_t>(index_of(name))];
  }
  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  void zero_grads() {
    for (auto& e : entries_)
      std::fill(e.grad.v.begin(), e.grad.v.end(), 0.0);
  }

  bool grads_finite() const {
    for (const auto& e : entries_)
      if (!e.grad.finite()) return false;
    return true;
  }

  double grad_sq_norm() const {
    double s = 0;
    for (const auto& e : entries_)
      for (double g : e.grad.v) s += g * g;
    return s;
  }

  // Plain gradient-descent step over every entry, in insertion order.
  // `skip_prefix` exempts a parameter group (used by --freeze-editor).
  void sgd_step(double lr, const std::string& skip_prefix = "") {
    for (auto& e : entries_) {
      if (!skip_prefix.empty() && e.name.rfind(skip_prefix, 0) == 0) continue;
      for (size_t i = 0; i < e.value.v.size(); ++i) e.value.v[i] -= lr * e.grad.v[i];
    }
  }

  // Scales every gradient so the global norm is at most `max_norm`.
  void clip_grads(double max_norm) {
    if (max_norm <= 0) return;
    double n = std::sqrt(grad_sq_norm());
    if (n <= max_norm) return;
    double s = max_norm / n;
    for (auto& e : entries_)
      for (double& g : e.grad.v) g *= s;
  }

  uint64_t rng_seed() const { return rng_seed_; }
  void set_rng_seed(uint64_t s) { rng_seed_ = s; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
  uint64_t rng_seed_;
};

}  // namespace emogen
