#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cornerdet/head.hpp"
#include "cornerdet/loss.hpp"

namespace cornerdet {
namespace {

TEST(AssignTargets, ExactMatchAdoptsClassAndBox) {
  std::vector<RoI> rois{{{2, 2, 6, 6}, 0.9, RoiSource::kCornerSearch}};
  auto out = assign_targets(rois, {{2, 2, 6, 6}}, {1}, 0.5, 3, 16, 16);
  ASSERT_EQ(out.class_targets.size(), 1u);
  EXPECT_EQ(out.class_targets[0], 1);
  ASSERT_TRUE(out.regression[0].valid);
  EXPECT_DOUBLE_EQ(out.regression[0].box[0], 4.0 / 16);
  EXPECT_DOUBLE_EQ(out.regression[0].box[1], 4.0 / 16);
  EXPECT_DOUBLE_EQ(out.regression[0].box[2], 4.0 / 16);
  EXPECT_DOUBLE_EQ(out.regression[0].box[3], 4.0 / 16);
}

TEST(AssignTargets, DisjointBecomesNull) {
  std::vector<RoI> rois{{{0, 0, 2, 2}, 0.9, RoiSource::kCornerSearch}};
  auto out = assign_targets(rois, {{8, 8, 12, 12}}, {0}, 0.5, 3, 16, 16);
  EXPECT_EQ(out.class_targets[0], 3);
  EXPECT_FALSE(out.regression[0].valid);
}

TEST(AssignTargets, PicksLargestOverlap) {
  // roi (0,0,2,2): iou with gt_a (0,0.5,2,2.5) = 3/(4+4-3) = 0.6,
  // with gt_b (1,0,3,2) = 2/(4+4-2) = 1/3.
  std::vector<RoI> rois{{{0, 0, 2, 2}, 0.9, RoiSource::kCornerSearch}};
  auto out = assign_targets(rois, {{1, 0, 3, 2}, {0, 0.5, 2, 2.5}}, {0, 2}, 0.5, 3, 16, 16);
  EXPECT_EQ(out.class_targets[0], 2);
  ASSERT_TRUE(out.regression[0].valid);
}

TEST(AssignTargets, InvariantToRoiOrder) {
  std::vector<RoI> rois{{{0, 0, 4, 4}, 0.9, RoiSource::kCornerSearch},
                        {{8, 8, 12, 12}, 0.5, RoiSource::kCornerSearch},
                        {{2, 2, 6, 6}, 0.2, RoiSource::kCornerSearch}};
  std::vector<BBox> gt{{0, 0, 4, 4}, {8, 8, 12, 12}};
  std::vector<int> cls{0, 1};
  auto a = assign_targets(rois, gt, cls, 0.5, 3, 16, 16);
  std::reverse(rois.begin(), rois.end());
  auto b = assign_targets(rois, gt, cls, 0.5, 3, 16, 16);
  for (size_t i = 0; i < rois.size(); ++i) {
    EXPECT_EQ(a.class_targets[i], b.class_targets[rois.size() - 1 - i]);
  }
}

// Fully confident, exactly-on-target predictions cost nothing.
TEST(JointLoss, ZeroAtPerfectPredictions) {
  const int B = 1, H = 2, W = 2, R = 2, S = 3;
  Tensor<float> targets({B, 4, H, W});
  targets[0] = 1.f;  // one corner present, rest absent
  Tensor<float> probs({B, 4, 2, H, W});
  const int cells = H * W;
  for (int k = 0; k < 4; ++k) {
    for (int i = 0; i < cells; ++i) {
      const bool present = targets[k * cells + i] > 0.5f;
      probs[(k * 2 + 0) * cells + i] = present ? 0.f : 1.f;
      probs[(k * 2 + 1) * cells + i] = present ? 1.f : 0.f;
    }
  }
  Tensor<float> class_probs({R, S});
  class_probs[0 * S + 1] = 1.f;
  class_probs[1 * S + 2] = 1.f;
  Tensor<float> betas({R, 4}, {0.25f, 0.25f, 0.5f, 0.5f, 0.1f, 0.2f, 0.3f, 0.4f});
  std::vector<RegressionTarget> reg(2);
  reg[0].valid = true;
  reg[0].box = {0.25, 0.25, 0.5, 0.5};
  reg[1].valid = false;
  LossWeights w;
  w.calibrate(1.0, 1.0, 1.0);
  auto out = joint_loss(Var<float>(probs), targets, Var<float>(class_probs), {1, 2}, Var<float>(betas), reg,
                        w);
  EXPECT_NEAR(out.total.value()[0], 0.f, 1e-6);
}

TEST(JointLoss, DefaultComponentStrengths) {
  LossWeights w;
  EXPECT_DOUBLE_EQ(w.lambda_class, 1.0);
  EXPECT_DOUBLE_EQ(w.lambda_corner, 100.0);
  EXPECT_DOUBLE_EQ(w.lambda_box, 1.0);
}

TEST(JointLoss, RejectsUncalibratedWeights) {
  Tensor<float> probs = Tensor<float>::full({1, 4, 2, 2, 2}, 0.5f);
  Tensor<float> targets({1, 4, 2, 2});
  Tensor<float> class_probs = Tensor<float>::full({1, 3}, 1.f / 3);
  Tensor<float> betas = Tensor<float>::full({1, 4}, 0.5f);
  LossWeights w;
  EXPECT_THROW(joint_loss(Var<float>(probs), targets, Var<float>(class_probs), {0}, Var<float>(betas),
                          {RegressionTarget{}}, w),
               std::logic_error);
}

// Independent scalar re-evaluation of the whole cost in double loops.
TEST(JointLoss, MatchesScalarReferenceEvaluation) {
  Rng rng(17);
  const int B = 2, H = 3, W = 3, R = 5, S = 4;
  Tensor<float> targets({B, 4, H, W});
  for (int64_t i = 0; i < targets.numel(); ++i) targets[i] = rng.uniform() < 0.2 ? 1.f : 0.f;
  Tensor<float> probs({B, 4, 2, H, W});
  const int cells = H * W;
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < 4; ++k) {
      for (int i = 0; i < cells; ++i) {
        const float p = static_cast<float>(rng.uniform(0.02, 0.98));
        probs[((b * 4 + k) * 2 + 0) * cells + i] = 1.f - p;
        probs[((b * 4 + k) * 2 + 1) * cells + i] = p;
      }
    }
  }
  Tensor<float> class_probs({R, S});
  for (int r = 0; r < R; ++r) {
    double sum = 0;
    std::vector<double> raw(S);
    for (int s = 0; s < S; ++s) {
      raw[static_cast<size_t>(s)] = rng.uniform(0.05, 1.0);
      sum += raw[static_cast<size_t>(s)];
    }
    for (int s = 0; s < S; ++s) class_probs[r * S + s] = static_cast<float>(raw[static_cast<size_t>(s)] / sum);
  }
  Tensor<float> betas({R, 4});
  for (int64_t i = 0; i < betas.numel(); ++i) betas[i] = static_cast<float>(rng.uniform(0.05, 0.95));
  std::vector<int> class_targets;
  std::vector<RegressionTarget> reg(R);
  for (int r = 0; r < R; ++r) {
    class_targets.push_back(rng.uniform_int(S));
    if (rng.uniform() < 0.6) {
      reg[static_cast<size_t>(r)].valid = true;
      for (int i = 0; i < 4; ++i) reg[static_cast<size_t>(r)].box[static_cast<size_t>(i)] = rng.uniform();
    }
  }
  LossWeights w;
  w.lambda_corner = 100;
  w.lambda_class = 1;
  w.lambda_box = 1;
  w.calibrate(37.0, 4.5, 0.8);

  auto out = joint_loss(Var<float>(probs), targets, Var<float>(class_probs), class_targets, Var<float>(betas),
                        reg, w);

  // Reference: plain double loops, no shared code with the ops.
  double corner = 0;
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < 4; ++k)
      for (int i = 0; i < cells; ++i) {
        const bool present = targets[(b * 4 + k) * cells + i] > 0.5f;
        const double p = probs[((b * 4 + k) * 2 + (present ? 1 : 0)) * cells + i];
        corner -= std::log(std::max(p, 1e-12));
      }
  double cls = 0;
  for (int r = 0; r < R; ++r) {
    cls -= std::log(std::max(static_cast<double>(class_probs[r * S + class_targets[static_cast<size_t>(r)]]), 1e-12));
  }
  double box = 0;
  for (int r = 0; r < R; ++r) {
    if (!reg[static_cast<size_t>(r)].valid) continue;
    for (int i = 0; i < 4; ++i) {
      const double d = reg[static_cast<size_t>(r)].box[static_cast<size_t>(i)] - betas[r * 4 + i];
      box += std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5;
    }
  }
  const double expected = 100.0 / 37.0 * corner + 1.0 / 4.5 * cls + 1.0 / 0.8 * box;
  EXPECT_NEAR(out.total.value()[0], expected, 1e-10 * std::max(1.0, expected) + 1e-4);
  EXPECT_NEAR(out.raw_corner, corner, 1e-4);
  EXPECT_NEAR(out.raw_cls, cls, 1e-5);
  EXPECT_NEAR(out.raw_box, box, 1e-5);
}

TEST(JointLoss, InvalidRegressionRowsGetNoGradient) {
  Tensor<float> probs = Tensor<float>::full({1, 4, 2, 2, 2}, 0.5f);
  Tensor<float> targets({1, 4, 2, 2});
  Tensor<float> class_probs = Tensor<float>::full({2, 3}, 1.f / 3);
  Tensor<float> betas = Tensor<float>::full({2, 4}, 0.4f);
  std::vector<RegressionTarget> reg(2);
  reg[0].valid = true;
  reg[0].box = {0.9, 0.9, 0.9, 0.9};
  LossWeights w;
  w.calibrate(1, 1, 1);
  Var<float> beta_var(betas, /*requires_grad=*/true);
  auto out = joint_loss(Var<float>(probs), targets, Var<float>(class_probs), {0, 1}, beta_var, reg, w);
  backward(out.total);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NE(beta_var.grad()[0 * 4 + i], 0.f);
    EXPECT_EQ(beta_var.grad()[1 * 4 + i], 0.f);
  }
}

TEST(Calibration, NormalizedComponentsAreOneOnCalibrationValues) {
  LossWeights w;
  w.calibrate(12.5, 3.25, 0.75);
  EXPECT_NEAR(12.5 / w.norm_corner, 1.0, 1e-12);
  EXPECT_NEAR(3.25 / w.norm_class, 1.0, 1e-12);
  EXPECT_NEAR(0.75 / w.norm_box, 1.0, 1e-12);
}

TEST(Calibration, ZeroRegressionFallsBackToOne) {
  LossWeights w;
  w.calibrate(5.0, 2.0, 0.0);
  EXPECT_DOUBLE_EQ(w.norm_box, 1.0);
}

TEST(Calibration, RecalibrationRejected) {
  LossWeights w;
  w.calibrate(1, 1, 1);
  EXPECT_THROW(w.calibrate(2, 2, 2), std::logic_error);
}

}  // namespace
}  // namespace cornerdet
