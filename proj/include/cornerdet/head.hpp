#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "cornerdet/bbox.hpp"
#include "cornerdet/sampler.hpp"

namespace cornerdet {

// Final classified detection: regressed box in image pixels, the class
// distribution over |C|+1 entries with the null class last, and the ranking
// confidence (max probability over the non-null classes).
struct DetectionHit {
  BBox box;
  std::vector<float> class_probs;
  int class_id = -1;
  double confidence = 0;
};

// Box regression target in normalized (cx, cy, w, h) form; invalid for RoIs
// assigned to the null class.
struct RegressionTarget {
  std::array<double, 4> box{0, 0, 0, 0};
  bool valid = false;
};

struct TargetAssignment {
  std::vector<int> class_targets;             // class id, or null_class
  std::vector<RegressionTarget> regression;
};

// Assigns each RoI the ground-truth instance with the largest IoU (ties by
// lowest instance index). Overlaps at or above iou_pos adopt that instance's
// class and box; everything else becomes the null class with no regression
// target. Boxes are in corner-map cell coordinates; targets are normalized
// by the map extents.
inline TargetAssignment assign_targets(const std::vector<RoI>& rois, const std::vector<BBox>& gt_boxes,
                                       const std::vector<int>& gt_classes, double iou_pos, int null_class,
                                       int map_w, int map_h) {
  if (iou_pos <= 0.0 || iou_pos >= 1.0) throw std::invalid_argument("assign_targets: iou_pos in (0,1)");
  if (gt_boxes.size() != gt_classes.size()) {
    throw std::invalid_argument("assign_targets: box/class count mismatch");
  }
  TargetAssignment out;
  out.class_targets.reserve(rois.size());
  out.regression.reserve(rois.size());
  for (const RoI& roi : rois) {
    int best = -1;
    double best_iou = 0;
    for (size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(roi.box, gt_boxes[g]);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_pos) {
      const BBox& b = gt_boxes[static_cast<size_t>(best)];
      RegressionTarget t;
      t.box = {(b.x1 + b.x2) / 2.0 / map_w, (b.y1 + b.y2) / 2.0 / map_h, b.width() / map_w,
               b.height() / map_h};
      t.valid = true;
      out.class_targets.push_back(gt_classes[static_cast<size_t>(best)]);
      out.regression.push_back(t);
    } else {
      out.class_targets.push_back(null_class);
      out.regression.push_back({});
    }
  }
  return out;
}

}  // namespace cornerdet
