#pragma once

#include <stdexcept>
#include <vector>

#include "cornerdet/head.hpp"
#include "cornerdet/ops.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

// Relative strengths of the three cost components plus the normalizers that
// scale each raw component to 1 on the first training batch. The normalizers
// freeze once set.
struct LossWeights {
  double lambda_class = 1.0;
  double lambda_corner = 100.0;
  double lambda_box = 1.0;
  double norm_class = 1.0;
  double norm_corner = 1.0;
  double norm_box = 1.0;
  bool calibrated = false;

  void calibrate(double raw_corner, double raw_class, double raw_box) {
    if (calibrated) throw std::logic_error("loss weights: already calibrated");
    auto norm = [](double raw) { return raw > 0 ? std::max(raw, 1e-8) : 1.0; };
    norm_corner = norm(raw_corner);
    norm_class = norm(raw_class);
    norm_box = norm(raw_box);
    calibrated = true;
  }
};

template <typename T>
struct RawLossTerms {
  Var<T> corner;  // cross entropy of the per-cell Bernoulli corner states
  Var<T> cls;     // cross entropy of the RoI class distribution
  Var<T> box;     // smooth-L1 over valid regression targets
};

// Builds the three raw cost components. Corner probabilities arrive as
// [B,4,2,Hc,Wc] (axis 2: absent/present); corner targets as {0,1} over
// [B,4,Hc,Wc]. Class targets index the |C|+1 axis with null last.
template <typename T>
RawLossTerms<T> raw_loss_terms(const Var<T>& corner_probs, const Tensor<T>& corner_targets,
                               const Var<T>& class_probs, const std::vector<int>& class_targets,
                               const Var<T>& box_params, const std::vector<RegressionTarget>& reg_targets) {
  const Tensor<T>& cp = corner_probs.value();
  detail::op_check(cp.rank() == 5 && cp.dim(1) == 4 && cp.dim(2) == 2,
                   "raw_loss_terms: corner probs must be [B,4,2,H,W], got " + cp.shape_str());
  const int B = cp.dim(0), H = cp.dim(3), W = cp.dim(4);
  detail::op_check(corner_targets.rank() == 4 && corner_targets.dim(0) == B && corner_targets.dim(1) == 4 &&
                       corner_targets.dim(2) == H && corner_targets.dim(3) == W,
                   "raw_loss_terms: corner target shape mismatch");

  std::vector<int64_t> corner_idx;
  corner_idx.reserve(static_cast<size_t>(corner_targets.numel()));
  const int64_t cells = static_cast<int64_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < 4; ++k) {
      const int64_t tbase = (static_cast<int64_t>(b) * 4 + k) * cells;
      const int64_t pbase = (static_cast<int64_t>(b) * 4 + k) * 2 * cells;
      for (int64_t i = 0; i < cells; ++i) {
        const int present = corner_targets[tbase + i] > T(0.5) ? 1 : 0;
        corner_idx.push_back(pbase + present * cells + i);
      }
    }
  }
  Var<T> corner_term = nll_gather(corner_probs, std::move(corner_idx));

  const Tensor<T>& sp = class_probs.value();
  detail::op_check(sp.rank() == 2, "raw_loss_terms: class probs must be 2-d");
  const int R = sp.dim(0), S = sp.dim(1);
  detail::op_check(static_cast<int>(class_targets.size()) == R, "raw_loss_terms: class target count mismatch");
  std::vector<int64_t> class_idx;
  class_idx.reserve(static_cast<size_t>(R));
  for (int r = 0; r < R; ++r) {
    const int c = class_targets[static_cast<size_t>(r)];
    detail::op_check(c >= 0 && c < S, "raw_loss_terms: class target out of range");
    class_idx.push_back(static_cast<int64_t>(r) * S + c);
  }
  Var<T> class_term = nll_gather(class_probs, std::move(class_idx));

  const Tensor<T>& bp = box_params.value();
  detail::op_check(bp.rank() == 2 && bp.dim(1) == 4 && bp.dim(0) == R,
                   "raw_loss_terms: box params must be [R,4]");
  detail::op_check(reg_targets.size() == static_cast<size_t>(R), "raw_loss_terms: regression target count");
  Tensor<T> target({R == 0 ? 1 : R, 4});
  std::vector<char> valid(static_cast<size_t>(R), 0);
  for (int r = 0; r < R; ++r) {
    const RegressionTarget& t = reg_targets[static_cast<size_t>(r)];
    if (!t.valid) continue;
    valid[static_cast<size_t>(r)] = 1;
    for (int i = 0; i < 4; ++i) target[static_cast<int64_t>(r) * 4 + i] = static_cast<T>(t.box[static_cast<size_t>(i)]);
  }
  Var<T> box_term = soft_l1_loss(box_params, std::move(target), std::move(valid));

  return {corner_term, class_term, box_term};
}

template <typename T>
struct LossBreakdown {
  Var<T> total;
  double corner = 0, cls = 0, box = 0;              // weighted, normalized terms
  double raw_corner = 0, raw_cls = 0, raw_box = 0;  // unscaled component values
};

// Weighted joint cost over the three components. The candidate boxes behind
// class_probs/box_params are constants by construction, so gradients reach
// the base network only through the corner term and the sampled features.
template <typename T>
LossBreakdown<T> joint_loss(const Var<T>& corner_probs, const Tensor<T>& corner_targets,
                            const Var<T>& class_probs, const std::vector<int>& class_targets,
                            const Var<T>& box_params, const std::vector<RegressionTarget>& reg_targets,
                            const LossWeights& weights) {
  if (!weights.calibrated) throw std::logic_error("joint_loss: loss weights are not calibrated");
  RawLossTerms<T> raw = raw_loss_terms(corner_probs, corner_targets, class_probs, class_targets, box_params,
                                       reg_targets);
  const double wc = weights.lambda_corner / weights.norm_corner;
  const double ws = weights.lambda_class / weights.norm_class;
  const double wb = weights.lambda_box / weights.norm_box;
  LossBreakdown<T> out;
  out.raw_corner = static_cast<double>(raw.corner.value()[0]);
  out.raw_cls = static_cast<double>(raw.cls.value()[0]);
  out.raw_box = static_cast<double>(raw.box.value()[0]);
  out.corner = wc * out.raw_corner;
  out.cls = ws * out.raw_cls;
  out.box = wb * out.raw_box;
  out.total = weighted_sum<T>({raw.corner, raw.cls, raw.box}, {wc, ws, wb});
  return out;
}

}  // namespace cornerdet
