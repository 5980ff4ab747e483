#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "cornerdet/sampler.hpp"

namespace cornerdet {
namespace {

Tensor<float> random_corner_map(int h, int w, Rng& rng) {
  Tensor<float> m({4, h, w});
  for (int64_t i = 0; i < m.numel(); ++i) m[i] = static_cast<float>(rng.uniform());
  return m;
}

// Independent reference for the box search: enumerate every ordered cell
// pair, keep a box iff one of its diagonal corner pairs clears the
// threshold (the only boxes either matching pass can emit when the per-type
// cap is the whole map), score by the same four-factor product, sort by
// (score desc, y1, x1, y2, x2) and truncate. No code shared with the
// implementation beyond the probability lookup.
std::vector<RoI> brute_force_rois(const Tensor<float>& map, double lambda, int grid_n) {
  const int H = map.dim(1), W = map.dim(2);
  const int64_t cells = static_cast<int64_t>(H) * W;
  auto p = [&](int k, int y, int x) {
    return static_cast<double>(map[k * cells + static_cast<int64_t>(y) * W + x]);
  };
  std::vector<RoI> all;
  for (int y1 = 0; y1 < H; ++y1)
    for (int y2 = y1 + 1; y2 < H; ++y2)
      for (int x1 = 0; x1 < W; ++x1)
        for (int x2 = x1 + 1; x2 < W; ++x2) {
          const double tl = p(0, y1, x1), tr = p(1, y1, x2), bl = p(2, y2, x1), br = p(3, y2, x2);
          const bool reachable = (tl > lambda && br > lambda) || (tr > lambda && bl > lambda);
          if (!reachable) continue;
          const double score = ((tl * tr) * bl) * br;
          all.push_back({{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2),
                          static_cast<double>(y2)},
                         score,
                         RoiSource::kCornerSearch});
        }
  std::sort(all.begin(), all.end(), [](const RoI& a, const RoI& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    if (a.box.y2 != b.box.y2) return a.box.y2 < b.box.y2;
    return a.box.x2 < b.box.x2;
  });
  const size_t limit = static_cast<size_t>(grid_n) * static_cast<size_t>(grid_n);
  if (all.size() > limit) all.resize(limit);
  return all;
}

TEST(ScoreBox, IdentityAndHalfProducts) {
  Tensor<float> m = Tensor<float>::full({4, 8, 8}, 1.f);
  EXPECT_DOUBLE_EQ(score_box(m, {1, 1, 5, 4}), 1.0);
  m.fill(0.5f);
  EXPECT_DOUBLE_EQ(score_box(m, {1, 1, 5, 4}), 0.0625);
}

TEST(ScoreBox, MatchesDirectFourFactorProduct) {
  Tensor<float> m({4, 8, 8});
  const int64_t cells = 64;
  // box (1,1)-(5,4): TL(1,1)=0.9 TR(1,5)... corner probabilities 0.9,0.5,0.5,0.8
  m[0 * cells + 1 * 8 + 1] = 0.9f;
  m[1 * cells + 1 * 8 + 5] = 0.5f;
  m[2 * cells + 4 * 8 + 1] = 0.5f;
  m[3 * cells + 4 * 8 + 5] = 0.8f;
  const double direct = ((0.9f * 0.5f) * 0.5f) * static_cast<double>(0.8f);
  EXPECT_NEAR(score_box(m, {1, 1, 5, 4}), direct, 1e-12);
  EXPECT_NEAR(score_box(m, {1, 1, 5, 4}), 0.18, 1e-7);
}

TEST(ScoreBox, SelfConsistencyOnRandomPairs) {
  Rng rng(99);
  int checked = 0;
  while (checked < 10000) {
    const int h = 4 + rng.uniform_int(9);
    const int w = 4 + rng.uniform_int(9);
    Tensor<float> m = random_corner_map(h, w, rng);
    for (int i = 0; i < 50 && checked < 10000; ++i, ++checked) {
      const int x1 = rng.uniform_int(w - 1);
      const int x2 = x1 + 1 + rng.uniform_int(w - 1 - x1);
      const int y1 = rng.uniform_int(h - 1);
      const int y2 = y1 + 1 + rng.uniform_int(h - 1 - y1);
      const int64_t cells = static_cast<int64_t>(h) * w;
      const double direct = ((static_cast<double>(m[0 * cells + y1 * w + x1]) *
                              static_cast<double>(m[1 * cells + y1 * w + x2])) *
                             static_cast<double>(m[2 * cells + y2 * w + x1])) *
                            static_cast<double>(m[3 * cells + y2 * w + x2]);
      const BBox b{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2),
                   static_cast<double>(y2)};
      ASSERT_NEAR(score_box(m, b), direct, 1e-12);
    }
  }
}

TEST(ScoreBox, RejectsOutOfBoundsCorner) {
  Tensor<float> m = Tensor<float>::full({4, 8, 8}, 0.5f);
  EXPECT_THROW(score_box(m, {1, 1, 8, 4}), std::invalid_argument);
  EXPECT_THROW(score_box(m, {-1, 1, 5, 4}), std::invalid_argument);
}

TEST(GenerateRois, SinglePairTrace) {
  Tensor<float> m = Tensor<float>::full({4, 8, 8}, 0.01f);
  const int64_t cells = 64;
  m[0 * cells + 1 * 8 + 1] = 0.9f;  // top-left at (x=1,y=1)
  m[3 * cells + 4 * 8 + 5] = 0.8f;  // bottom-right at (x=5,y=4)
  m[1 * cells + 1 * 8 + 5] = 0.5f;  // remaining corners of that box
  m[2 * cells + 4 * 8 + 1] = 0.5f;
  auto rois = generate_rois(m, 0.05, 16, 8);
  ASSERT_EQ(rois.size(), 1u);
  EXPECT_EQ(rois[0].box, (BBox{1, 1, 5, 4}));
  EXPECT_NEAR(rois[0].score, 0.18, 1e-7);
  EXPECT_EQ(rois[0].source, RoiSource::kCornerSearch);
}

TEST(GenerateRois, AllBelowThresholdYieldsEmpty) {
  Tensor<float> m = Tensor<float>::full({4, 6, 6}, 0.04f);
  EXPECT_TRUE(generate_rois(m, 0.05, 16, 8).empty());
}

TEST(GenerateRois, MatchesBruteForceOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 4 + rng.uniform_int(9);
    const int w = 4 + rng.uniform_int(9);
    Tensor<float> m = random_corner_map(h, w, rng);
    for (double lambda : {0.0, 0.1}) {
      for (int n : {2, 4, 8}) {
        auto got = generate_rois(m, lambda, h * w, n);
        auto want = brute_force_rois(m, lambda, n);
        ASSERT_EQ(got.size(), want.size()) << "trial " << trial << " lambda " << lambda << " n " << n;
        for (size_t i = 0; i < got.size(); ++i) {
          ASSERT_EQ(got[i].box, want[i].box) << "trial " << trial << " index " << i;
          ASSERT_EQ(got[i].score, want[i].score) << "trial " << trial << " index " << i;
        }
      }
    }
  }
}

TEST(GenerateRois, SortedUniqueAndSelfConsistent) {
  Rng rng(31337);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> m = random_corner_map(10, 10, rng);
    auto rois = generate_rois(m, 0.1, 12, 6);
    std::set<std::array<double, 4>> seen;
    for (size_t i = 0; i < rois.size(); ++i) {
      if (i) EXPECT_GE(rois[i - 1].score, rois[i].score);
      EXPECT_TRUE(seen.insert({rois[i].box.x1, rois[i].box.y1, rois[i].box.x2, rois[i].box.y2}).second);
      EXPECT_EQ(rois[i].score, score_box(m, rois[i].box));
    }
  }
}

// Raising the threshold can only remove boxes (with an uncapped per-type M).
TEST(GenerateRois, ThresholdCullingIsMonotone) {
  Rng rng(555);
  Tensor<float> m = random_corner_map(9, 9, rng);
  auto at = [&](double lambda) {
    auto rois = generate_rois(m, lambda, 81, 9);
    std::set<std::array<double, 4>> s;
    for (const auto& r : rois) s.insert({r.box.x1, r.box.y1, r.box.x2, r.box.y2});
    return s;
  };
  auto low = at(0.0);
  for (double lambda : {0.1, 0.3, 0.5}) {
    for (const auto& b : at(lambda)) EXPECT_TRUE(low.count(b)) << "box appeared only at higher threshold";
    low = at(lambda);
  }
}

// Larger grids keep supersets, so coverage against any reference never drops.
TEST(GenerateRois, GridGrowthIsNested) {
  Rng rng(777);
  Tensor<float> m = random_corner_map(12, 12, rng);
  auto small = generate_rois(m, 0.05, 16, 4);
  auto large = generate_rois(m, 0.05, 16, 8);
  ASSERT_LE(small.size(), large.size());
  for (size_t i = 0; i < small.size(); ++i) EXPECT_EQ(small[i].box, large[i].box);
}

TEST(ExtractFeature, ConstantMapGivesConstantSamples) {
  Tensor<float> m = Tensor<float>::full({5, 16, 16}, 3.5f);
  auto f = extract_feature(m, {2, 3, 9, 11});
  ASSERT_EQ(f.values.size(), static_cast<size_t>(49 * 5 + 2));
  for (int i = 0; i < 49 * 5; ++i) EXPECT_FLOAT_EQ(f.values[static_cast<size_t>(i)], 3.5f);
  EXPECT_FLOAT_EQ(f.values[49 * 5], 7.f / 16.f);
  EXPECT_FLOAT_EQ(f.values[49 * 5 + 1], 8.f / 16.f);
}

TEST(ExtractFeature, PaperScaleLengthIs4706) {
  Tensor<float> m = Tensor<float>::full({96, 64, 64}, 1.f);
  auto f = extract_feature(m, {0, 0, 10, 10});
  EXPECT_EQ(f.values.size(), 4706u);
}

TEST(ExtractFeature, OneCellWideBoxCollapsesColumns) {
  Tensor<float> m({1, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) m[y * 16 + x] = static_cast<float>(x);
  auto f = extract_feature(m, {4, 2, 5, 10});
  // Lattice x positions 4, 4.17, ..., 5 round to cells {4,4,4,5,5,5,5}.
  for (int gy = 0; gy < 7; ++gy) {
    for (int gx = 0; gx < 7; ++gx) {
      const float v = f.values[static_cast<size_t>(gy * 7 + gx)];
      EXPECT_TRUE(v == 4.f || v == 5.f);
    }
  }
}

TEST(ExtractFeature, RejectsOutOfBoundsBox) {
  Tensor<float> m = Tensor<float>::full({2, 8, 8}, 1.f);
  EXPECT_THROW(extract_feature(m, {-1, 0, 4, 4}), std::invalid_argument);
  EXPECT_THROW(extract_feature(m, {0, 0, 9, 4}), std::invalid_argument);
}

TEST(ExtractRoiFeatures, GradientScattersIntoMap) {
  Rng rng(8);
  Tensor<float> maps({1, 2, 8, 8});
  for (int64_t i = 0; i < maps.numel(); ++i) maps[i] = static_cast<float>(rng.uniform());
  Var<float> v(maps, /*requires_grad=*/true);
  std::vector<RoiRef> rois{{0, {1, 1, 4, 4}}, {0, {0, 0, 7, 7}}};
  Var<float> f = extract_roi_features(v, rois);
  ASSERT_EQ(f.value().dim(0), 2);
  ASSERT_EQ(f.value().dim(1), 49 * 2 + 2);
  Var<float> s = sum_all(f);
  backward(s);
  // 2 rois x 49 samples x 2 channels contribute; total gradient mass 196.
  double total = 0;
  for (int64_t i = 0; i < v.grad().numel(); ++i) total += v.grad()[i];
  EXPECT_NEAR(total, 196.0, 1e-4);
}

TEST(AugmentRois, EmptySearchListKeepsGroundTruthOnly) {
  Rng rng(1);
  auto out = augment_rois_training({}, {{1, 1, 4, 4}, {2, 2, 6, 6}}, 0.1, rng, 16, 16);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].source, RoiSource::kGroundTruth);
  EXPECT_EQ(out[1].source, RoiSource::kGroundTruth);
}

TEST(AugmentRois, TenPercentRandomAppended) {
  Rng rng(2);
  std::vector<RoI> rois;
  for (int i = 0; i < 100; ++i) {
    rois.push_back({{static_cast<double>(i % 10), 0, static_cast<double>(i % 10 + 1), static_cast<double>(i / 10 + 1)},
                    0.5,
                    RoiSource::kCornerSearch});
  }
  auto out = augment_rois_training(rois, {}, 0.1, rng, 16, 16);
  ASSERT_EQ(out.size(), 110u);
  int randoms = 0;
  for (const auto& r : out) randoms += r.source == RoiSource::kRandom ? 1 : 0;
  EXPECT_EQ(randoms, 10);
}

TEST(AugmentRois, GroundTruthAlreadyPresentIsNotDuplicated) {
  Rng rng(3);
  std::vector<RoI> rois{{{1, 1, 4, 4}, 0.9, RoiSource::kCornerSearch}};
  auto out = augment_rois_training(rois, {{1, 1, 4, 4}}, 0.0, rng, 16, 16);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].source, RoiSource::kCornerSearch);
}

}  // namespace
}  // namespace cornerdet
