#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cornerdet/gradcheck.hpp"
#include "cornerdet/head.hpp"
#include "cornerdet/loss.hpp"
#include "cornerdet/model.hpp"
#include "cornerdet/sampler.hpp"

namespace cornerdet {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0;
};

namespace gc_detail {

inline Tensor<double> random_uniform(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// End-to-end cost check on a miniature double-precision model: forward,
// box search, feature sampling and classification with the candidate boxes
// and targets frozen, then finite differences over a subset of every
// parameter tensor.
inline double joint_composition_check(uint64_t seed) {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.class_count = 2;
  cfg.backbone = {LayerSpec::conv(4, 3, 2), LayerSpec::conv(6, 3, 2), LayerSpec::conv(8, 3, 2)};
  cfg.deconv_filters = {6, 4};
  cfg.corner_stride = 2;
  cfg.feature_channels = 4;
  cfg.roi_grid = 3;
  cfg.corner_top_m = 4;
  cfg.corner_threshold = 0.05;
  cfg.head_widths = {8, 6};
  cfg.validate();

  Network<double> net(cfg);
  net.init_params(seed);
  Rng rng(derive_seed(seed, {1}));
  Tensor<double> images = random_uniform({1, 3, 32, 32}, rng, 0.0, 1.0);

  const int E = cfg.corner_map_extent();
  const std::vector<BBox> gt_px{{4, 6, 18, 20}, {20, 8, 30, 26}};
  std::vector<BBox> gt_cells;
  for (const BBox& b : gt_px) gt_cells.push_back(b.scaled(1.0 / cfg.corner_stride));
  const std::vector<int> gt_classes{0, 1};

  // One forward to freeze the candidate boxes and their targets.
  std::vector<RoI> rois;
  {
    auto base = net.forward_base(images, Mode::kTrain);
    Tensor<double> presence = net.corner_presence(base, 0);
    rois = generate_rois(presence, cfg.corner_threshold, cfg.corner_top_m, cfg.roi_grid);
  }
  for (const BBox& b : gt_cells) rois.push_back({b, 0.0, RoiSource::kGroundTruth});
  auto assignment = assign_targets(rois, gt_cells, gt_classes, 0.5, cfg.class_count, E, E);
  Tensor<double> corner_target = build_corner_target<double>(gt_px, cfg.corner_stride, E, E);
  Tensor<double> corner_targets({1, 4, E, E}, std::vector<double>(corner_target.data(),
                                                                  corner_target.data() + corner_target.numel()));
  std::vector<RoiRef> refs;
  for (const RoI& r : rois) refs.push_back({0, r.box});

  LossWeights weights;
  weights.calibrate(40.0, 5.0, 1.0);

  auto eval_loss = [&](bool with_backward) {
    auto base = net.forward_base(images, Mode::kTrain);
    Var<double> features = extract_roi_features(base.features, refs);
    auto [class_probs, box_params] = net.run_head(features, Mode::kTrain);
    LossBreakdown<double> loss = joint_loss(base.corner_probs, corner_targets, class_probs,
                                            assignment.class_targets, box_params, assignment.regression,
                                            weights);
    if (with_backward) {
      net.params().zero_grads();
      backward(loss.total);
    }
    return static_cast<double>(loss.total.value()[0]);
  };

  eval_loss(/*with_backward=*/true);

  const double step = 1e-5;
  double max_rel = 0;
  Rng pick(derive_seed(seed, {2}));
  for (const auto& name : net.params().names()) {
    Var<double>& var = net.params().get(name);
    Tensor<double> analytic = var.grad();
    const int64_t n = var.value().numel();
    const int samples = static_cast<int>(std::min<int64_t>(4, n));
    for (int s = 0; s < samples; ++s) {
      const int64_t i = static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(n));
      const double saved = var.value()[i];
      var.value()[i] = saved + step;
      const double up = eval_loss(false);
      var.value()[i] = saved - step;
      const double down = eval_loss(false);
      var.value()[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace gc_detail

// Finite-difference verification of every differentiable layer op plus the
// assembled cost, all in double precision.
inline std::vector<GradCheckCase> run_gradcheck_suite(uint64_t seed = 7) {
  using gc_detail::random_uniform;
  std::vector<GradCheckCase> cases;
  Rng rng(seed);

  {
    auto x = random_uniform({2, 3, 6, 6}, rng);
    auto w = random_uniform({4, 3, 3, 3}, rng);
    auto b = random_uniform({4}, rng);
    cases.push_back({"conv2d", grad_check([](std::vector<Var<double>>& v) { return conv2d(v[0], v[1], v[2], 2, 1); },
                                          {x, w, b})});
  }
  {
    auto x = random_uniform({1, 3, 4, 4}, rng);
    auto w = random_uniform({3, 2, 3, 3}, rng);
    auto b = random_uniform({2}, rng);
    cases.push_back({"deconv2d", grad_check(
                                     [](std::vector<Var<double>>& v) { return deconv2d(v[0], v[1], v[2], 2, 1, 1); },
                                     {x, w, b})});
  }
  {
    auto x = random_uniform({3, 4, 3, 3}, rng);
    auto gamma = random_uniform({4}, rng, 0.5, 1.5);
    auto beta = random_uniform({4}, rng);
    cases.push_back({"batchnorm", grad_check(
                                      [](std::vector<Var<double>>& v) {
                                        BatchNormState<double> state(4);
                                        return batchnorm(v[0], v[1], v[2], state, Mode::kTrain);
                                      },
                                      {x, gamma, beta})});
  }
  {
    Tensor<double> x({8}, {-1.4, -0.7, -0.2, 0.3, 0.6, 1.1, 1.9, -2.3});
    cases.push_back({"relu", grad_check([](std::vector<Var<double>>& v) { return relu(v[0]); }, {x})});
  }
  {
    auto x = random_uniform({3, 5}, rng, -3, 3);
    cases.push_back({"softmax", grad_check([](std::vector<Var<double>>& v) { return softmax(v[0], 1); }, {x})});
  }
  {
    auto x = random_uniform({4, 7}, rng);
    auto w = random_uniform({5, 7}, rng);
    auto b = random_uniform({5}, rng);
    cases.push_back({"linear", grad_check([](std::vector<Var<double>>& v) { return linear(v[0], v[1], v[2]); },
                                          {x, w, b})});
  }
  {
    auto pred = random_uniform({4, 4}, rng, 0.1, 0.9);
    Tensor<double> target = random_uniform({4, 4}, rng, 0.0, 2.0);  // exercises both branches
    cases.push_back({"soft_l1", grad_check(
                                    [&](std::vector<Var<double>>& v) {
                                      return soft_l1_loss(v[0], target, {1, 1, 0, 1});
                                    },
                                    {pred})});
  }
  cases.push_back({"joint_loss", gc_detail::joint_composition_check(seed)});
  return cases;
}

}  // namespace cornerdet
