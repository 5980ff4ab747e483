#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cornerdet/autograd.hpp"
#include "cornerdet/ops.hpp"
#include "cornerdet/rng.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

// Compares reverse-mode gradients against central finite differences in
// double precision. The op output is reduced to a scalar through a fixed
// random projection so every output element influences the check. Returns
// the max relative error over all elements of all inputs.
inline double grad_check(const std::function<Var<double>(std::vector<Var<double>>&)>& build,
                         std::vector<Tensor<double>> inputs, double step = 1e-5, uint64_t seed = 7) {
  auto make_vars = [&]() {
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (auto& t : inputs) vars.emplace_back(t, /*requires_grad=*/true);
    return vars;
  };

  std::vector<Var<double>> vars = make_vars();
  Var<double> out = build(vars);

  Rng rng(seed);
  Tensor<double> proj(out.value().shape());
  for (int64_t i = 0; i < proj.numel(); ++i) proj[i] = rng.uniform(-1.0, 1.0);

  Var<double> loss = dot_const(out, proj);
  backward(loss);

  std::vector<Tensor<double>> analytic;
  analytic.reserve(vars.size());
  for (auto& v : vars) analytic.push_back(v.grad());

  auto eval_loss = [&]() {
    std::vector<Var<double>> fresh = make_vars();
    Var<double> o = build(fresh);
    double acc = 0;
    for (int64_t i = 0; i < proj.numel(); ++i) acc += o.value()[i] * proj[i];
    return acc;
  };

  double max_rel = 0;
  for (size_t vi = 0; vi < inputs.size(); ++vi) {
    Tensor<double>& t = inputs[vi];
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = eval_loss();
      t[i] = saved - step;
      const double down = eval_loss();
      t[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[vi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace cornerdet
