#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cornerdet/metrics.hpp"
#include "cornerdet/rng.hpp"

namespace cornerdet {
namespace {

DetectionHit hit(double conf, int cls, BBox box) {
  DetectionHit h;
  h.box = box;
  h.class_id = cls;
  h.confidence = conf;
  return h;
}

TEST(Iou, Examples) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {5, 5, 7, 7}), 0.0);
  EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 0, 3, 2}), 2.0 / 6.0, 1e-12);
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    BBox a{rng.uniform(0, 10), rng.uniform(0, 10), 0, 0};
    a.x2 = a.x1 + rng.uniform(0.1, 10);
    a.y2 = a.y1 + rng.uniform(0.1, 10);
    BBox b{rng.uniform(0, 10), rng.uniform(0, 10), 0, 0};
    b.x2 = b.x1 + rng.uniform(0.1, 10);
    b.y2 = b.y1 + rng.uniform(0.1, 10);
    const double ab = iou(a, b);
    EXPECT_DOUBLE_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  }
}

TEST(Nms, DuplicateSuppression) {
  auto kept = nms({hit(0.9, 0, {0, 0, 4, 4}), hit(0.8, 0, {0, 0, 4, 4})}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].confidence, 0.9);
}

TEST(Nms, DisjointBoxesAllSurvive) {
  auto kept = nms({hit(0.9, 0, {0, 0, 4, 4}), hit(0.8, 0, {10, 10, 14, 14}), hit(0.7, 0, {20, 0, 24, 4})},
                  0.5);
  EXPECT_EQ(kept.size(), 3u);
}

TEST(Nms, DifferentClassesDoNotInteract) {
  auto kept = nms({hit(0.9, 0, {0, 0, 4, 4}), hit(0.8, 1, {0, 0, 4, 4})}, 0.5);
  EXPECT_EQ(kept.size(), 2u);
}

// Selection-based reference: repeatedly take the strongest unsuppressed hit
// and erase everything of the same class overlapping it.
std::vector<DetectionHit> nms_reference(std::vector<DetectionHit> hits, double thresh) {
  std::vector<DetectionHit> kept;
  std::vector<char> dead(hits.size(), 0);
  while (true) {
    int best = -1;
    for (size_t i = 0; i < hits.size(); ++i) {
      if (dead[i]) continue;
      if (best < 0) {
        best = static_cast<int>(i);
        continue;
      }
      const DetectionHit& a = hits[i];
      const DetectionHit& b = hits[static_cast<size_t>(best)];
      const bool better = a.confidence > b.confidence ||
                          (a.confidence == b.confidence &&
                           (a.class_id < b.class_id ||
                            (a.class_id == b.class_id && bbox_less(a.box, b.box))));
      if (better) best = static_cast<int>(i);
    }
    if (best < 0) break;
    dead[static_cast<size_t>(best)] = 1;
    kept.push_back(hits[static_cast<size_t>(best)]);
    for (size_t i = 0; i < hits.size(); ++i) {
      if (dead[i] || hits[i].class_id != hits[static_cast<size_t>(best)].class_id) continue;
      if (iou(hits[i].box, hits[static_cast<size_t>(best)].box) >= thresh) dead[i] = 1;
    }
  }
  return kept;
}

TEST(Nms, MatchesQuadraticReferenceOnRandomSets) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<DetectionHit> hits;
    const int n = 20 + rng.uniform_int(180);
    for (int i = 0; i < n; ++i) {
      BBox b{rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
      b.x2 = b.x1 + rng.uniform(1, 20);
      b.y2 = b.y1 + rng.uniform(1, 20);
      hits.push_back(hit(rng.uniform(), rng.uniform_int(5), b));
    }
    auto got = nms(hits, 0.5);
    auto want = nms_reference(hits, 0.5);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (size_t i = 0; i < got.size(); ++i) {
      ASSERT_EQ(got[i].box, want[i].box);
      ASSERT_EQ(got[i].class_id, want[i].class_id);
    }
  }
}

TEST(Coverage, Examples) {
  std::vector<BBox> gt{{0, 0, 4, 4}, {10, 10, 14, 14}};
  EXPECT_DOUBLE_EQ(coverage(gt, gt, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(coverage({}, gt, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(coverage({}, {}, 0.5), 1.0);
  // one gt matched at 0.6, one whose best match is 0.4
  std::vector<BBox> rois{{0, 0.5, 4, 4.5}, {10, 11.7, 14, 15.7}};
  EXPECT_NEAR(iou(rois[0], gt[0]), 14.0 / (32 - 14), 1e-9);
  EXPECT_DOUBLE_EQ(coverage(rois, gt, 0.5), 0.5);
}

TEST(Coverage, StrictInequalityAtThreshold) {
  // IoU exactly 0.5 does not count.
  std::vector<BBox> gt{{0, 0, 2, 2}};
  std::vector<BBox> rois{{0, 1, 2, 3}};
  EXPECT_NEAR(iou(rois[0], gt[0]), 1.0 / 3.0, 1e-12);
  std::vector<BBox> exact{{0, 0, 2, 4}};  // iou = 4/8 = 0.5
  EXPECT_DOUBLE_EQ(iou(exact[0], {0, 0, 2, 8}), 0.5);
  EXPECT_DOUBLE_EQ(coverage(exact, {{0, 0, 2, 8}}, 0.5), 0.0);
}

TEST(Coverage, MonotoneUnderInclusion) {
  Rng rng(9);
  std::vector<BBox> gt;
  for (int i = 0; i < 10; ++i) {
    BBox b{rng.uniform(0, 40), rng.uniform(0, 40), 0, 0};
    b.x2 = b.x1 + rng.uniform(2, 10);
    b.y2 = b.y1 + rng.uniform(2, 10);
    gt.push_back(b);
  }
  std::vector<BBox> rois;
  double prev = 0;
  for (int i = 0; i < 40; ++i) {
    BBox b{rng.uniform(0, 40), rng.uniform(0, 40), 0, 0};
    b.x2 = b.x1 + rng.uniform(2, 10);
    b.y2 = b.y1 + rng.uniform(2, 10);
    rois.push_back(b);
    const double c = coverage(rois, gt, 0.5);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

std::vector<ImageEval> perfect_case() {
  std::vector<ImageEval> images(2);
  images[0].gt = {{0, {0, 0, 4, 4}}, {1, {10, 10, 14, 14}}};
  images[1].gt = {{0, {2, 2, 8, 8}}};
  for (auto& img : images) {
    for (const auto& g : img.gt) img.hits.push_back(hit(1.0, g.class_id, g.box));
  }
  return images;
}

TEST(AveragePrecision, PerfectDetector) {
  auto images = perfect_case();
  for (double t : {0.5, 0.75, 0.95}) {
    EXPECT_DOUBLE_EQ(mean_average_precision(images, 2, t), 1.0);
  }
  EXPECT_DOUBLE_EQ(map_range(images, 2), 1.0);
}

TEST(AveragePrecision, AllMissesScoreZero) {
  std::vector<ImageEval> images(1);
  images[0].gt = {{0, {0, 0, 4, 4}}};
  images[0].hits = {hit(0.9, 0, {20, 20, 24, 24})};
  EXPECT_DOUBLE_EQ(average_precision(images, 0, 0.5), 0.0);
}

// Three ranked hits against two ground truths; the PR curve is enumerated by
// hand: (p=1, r=.5), (p=.5, r=.5), (p=2/3, r=1) giving AP = .5 + .5*(2/3).
TEST(AveragePrecision, HandEnumeratedCurve) {
  std::vector<ImageEval> images(1);
  images[0].gt = {{0, {0, 0, 4, 4}}, {0, {10, 10, 14, 14}}};
  images[0].hits = {hit(0.9, 0, {0, 0, 4, 4}), hit(0.8, 0, {30, 30, 34, 34}),
                    hit(0.7, 0, {10, 10, 14, 14})};
  EXPECT_NEAR(average_precision(images, 0, 0.5), 0.5 + 0.5 * (2.0 / 3.0), 1e-12);
}

TEST(AveragePrecision, InvariantToMonotoneConfidenceTransform) {
  Rng rng(21);
  std::vector<ImageEval> images(4);
  for (auto& img : images) {
    const int n_gt = 1 + rng.uniform_int(3);
    for (int g = 0; g < n_gt; ++g) {
      BBox b{rng.uniform(0, 40), rng.uniform(0, 40), 0, 0};
      b.x2 = b.x1 + rng.uniform(4, 10);
      b.y2 = b.y1 + rng.uniform(4, 10);
      img.gt.push_back({rng.uniform_int(2), b});
    }
    for (int h = 0; h < 6; ++h) {
      BBox b{rng.uniform(0, 40), rng.uniform(0, 40), 0, 0};
      b.x2 = b.x1 + rng.uniform(4, 10);
      b.y2 = b.y1 + rng.uniform(4, 10);
      img.hits.push_back(hit(rng.uniform(0.01, 0.99), rng.uniform_int(2), b));
    }
  }
  const double before = mean_average_precision(images, 2, 0.5);
  for (auto& img : images) {
    for (auto& h : img.hits) h.confidence = std::sqrt(h.confidence);  // strictly monotone
  }
  EXPECT_NEAR(mean_average_precision(images, 2, 0.5), before, 1e-12);
}

TEST(AveragePrecision, ClassWithoutGroundTruthExcluded) {
  std::vector<ImageEval> images(1);
  images[0].gt = {{0, {0, 0, 4, 4}}};
  images[0].hits = {hit(0.9, 0, {0, 0, 4, 4}), hit(0.8, 1, {10, 10, 14, 14})};
  EXPECT_TRUE(std::isnan(average_precision(images, 1, 0.5)));
  EXPECT_DOUBLE_EQ(mean_average_precision(images, 2, 0.5), 1.0);
}

TEST(MapRange, NeverExceedsMap50) {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<ImageEval> images(3);
    for (auto& img : images) {
      const int n_gt = 1 + rng.uniform_int(3);
      for (int g = 0; g < n_gt; ++g) {
        BBox b{rng.uniform(0, 40), rng.uniform(0, 40), 0, 0};
        b.x2 = b.x1 + rng.uniform(4, 12);
        b.y2 = b.y1 + rng.uniform(4, 12);
        img.gt.push_back({rng.uniform_int(3), b});
        // jittered detection near the box
        BBox d{b.x1 + rng.uniform(-2, 2), b.y1 + rng.uniform(-2, 2), 0, 0};
        d.x2 = b.x2 + rng.uniform(-2, 2);
        d.y2 = b.y2 + rng.uniform(-2, 2);
        if (d.valid()) img.hits.push_back(hit(rng.uniform(), img.gt.back().class_id, d));
      }
    }
    EXPECT_LE(map_range(images, 3), mean_average_precision(images, 3, 0.5) + 1e-12);
  }
}

TEST(EvalReport, AssemblesAllFields) {
  auto images = perfect_case();
  std::vector<std::vector<BBox>> rois(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    for (const auto& g : images[i].gt) rois[i].push_back(g.box);
  }
  EvalReport r = compute_eval_report(images, rois, 2);
  EXPECT_DOUBLE_EQ(r.map_50, 1.0);
  EXPECT_DOUBLE_EQ(r.map_range, 1.0);
  EXPECT_EQ(r.per_class_ap.size(), 2u);
  EXPECT_DOUBLE_EQ(r.coverage_at.at(0.5), 1.0);
  EXPECT_DOUBLE_EQ(r.recall_at.at(10), 1.0);
  const std::string csv = eval_report_csv(r);
  EXPECT_NE(csv.find("map_50,1"), std::string::npos);
  EXPECT_NE(csv.find("coverage.0.5,1"), std::string::npos);
}

}  // namespace
}  // namespace cornerdet
