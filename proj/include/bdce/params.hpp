#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bdce/rng.hpp"
#include "bdce/tensor.hpp"

namespace bdce {

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Ordered, named parameters of one network with a parallel gradient buffer.
template <typename T>
class ParamStore {
 public:
  /// Adds a zero-initialised entry and returns its index.
  std::size_t add(const std::string& name, const Shape& dims) {
    require(find(name) == npos, "ParamStore: duplicate parameter name '" + name + "'");
    entries_.push_back({name, Tensor<T>(dims), Tensor<T>(dims)});
    return entries_.size() - 1;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    return npos;
  }

  std::size_t index(const std::string& name) const {
    const auto i = find(name);
    require(i != npos, "ParamStore: no parameter named '" + name + "'");
    return i;
  }

  std::size_t size() const { return entries_.size(); }
  ParamEntry<T>& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry<T>& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  const Tensor<T>& value(std::size_t i) const { return entries_[i].value; }
  Tensor<T>& value(std::size_t i) { return entries_[i].value; }

  void accumulate_grad(std::size_t i, const Tensor<T>& g) { entries_[i].grad += g; }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Same names, shapes and values in another precision; gradients zeroed.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      const auto i = out.add(e.name, e.value.dims());
      out[i].value = e.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
};

/// Kaiming-uniform (fan-in, relu gain) for rank-4 conv weights; everything else zero.
template <typename T>
void kaiming_init(ParamStore<T>& params, Rng& rng) {
  for (auto& e : params) {
    if (e.value.rank() == 4) {
      const double fan_in = static_cast<double>(e.value.dim(1) * e.value.dim(2) * e.value.dim(3));
      const double bound = std::sqrt(6.0 / fan_in);
      for (auto& v : e.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    } else {
      e.value.fill(T(0));
    }
    e.grad.fill(T(0));
  }
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig cfg;
  std::size_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  AdamState() = default;
  AdamState(const ParamStore<T>& params, AdamConfig c) : cfg(c) {
    for (const auto& e : params) {
      m.emplace_back(e.value.dims());
      v.emplace_back(e.value.dims());
    }
  }
};

/// One bias-corrected Adam update; gradients are zeroed afterwards.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state) {
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          "adam_step: optimizer state does not match parameter store");
  for (std::size_t i = 0; i < params.size(); ++i)
    require(state.m[i].dims() == params[i].value.dims() && state.v[i].dims() == params[i].value.dims(),
            "adam_step: moment dims do not match parameter '" + params[i].name + "'");
  ++state.step;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      const double g = static_cast<double>(e.grad[j]);
      const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * g;
      const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      e.value[j] = static_cast<T>(static_cast<double>(e.value[j]) - update);
    }
  }
  params.zero_grad();
}

}  // namespace bdce
