#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cornerdet/autograd.hpp"
#include "cornerdet/rng.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

// Named trainable parameters. Each entry is a leaf graph node plus a flag
// separating weights from biases/normalization offsets; weight decay applies
// to weights only. Iteration follows registration order so that checkpoint
// files and optimizer sweeps are reproducible.
template <typename T>
class ParamStore {
 public:
  Var<T>& add(const std::string& name, Tensor<T> value, bool is_weight) {
    if (entries_.count(name)) throw std::invalid_argument("param '" + name + "' registered twice");
    Entry e{Var<T>(std::move(value), /*requires_grad=*/true), is_weight};
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    order_.push_back(name);
    return it->second.var;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Var<T>& get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown param '" + name + "'");
    return it->second.var;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown param '" + name + "'");
    return it->second.var;
  }

  bool is_weight(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown param '" + name + "'");
    return it->second.is_weight;
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  int64_t value_count() const {
    int64_t n = 0;
    for (const auto& name : order_) n += entries_.at(name).var.value().numel();
    return n;
  }

  void zero_grads() {
    for (const auto& name : order_) entries_.at(name).var.grad().fill(T(0));
  }

 private:
  struct Entry {
    Var<T> var;
    bool is_weight;
  };
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

// Filter init: zero-mean normal with sigma^2 = 2 / (filters * kernel_area).
template <typename T>
void fill_normal_filter_init(Tensor<T>& w, int filters, int kernel_area, Rng& rng) {
  const double sigma = std::sqrt(2.0 / (static_cast<double>(filters) * kernel_area));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, sigma));
}

}  // namespace cornerdet
