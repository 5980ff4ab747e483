#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cornerdet/bbox.hpp"
#include "cornerdet/head.hpp"

namespace cornerdet {

// Greedy per-class suppression: hits are visited in confidence order (ties
// broken by coordinates) and kept iff they overlap every already-kept hit of
// the same class below the threshold.
inline std::vector<DetectionHit> nms(std::vector<DetectionHit> hits, double iou_thresh) {
  if (iou_thresh <= 0.0 || iou_thresh >= 1.0) throw std::invalid_argument("nms: threshold in (0,1)");
  std::sort(hits.begin(), hits.end(), [](const DetectionHit& a, const DetectionHit& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return bbox_less(a.box, b.box);
  });
  std::vector<DetectionHit> kept;
  for (const DetectionHit& h : hits) {
    bool suppressed = false;
    for (const DetectionHit& k : kept) {
      if (k.class_id == h.class_id && iou(k.box, h.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(h);
  }
  return kept;
}

// Fraction of ground-truth boxes having at least one candidate with IoU
// strictly above the threshold. Vacuously 1 with no ground truth.
inline double coverage(const std::vector<BBox>& candidates, const std::vector<BBox>& gt_boxes,
                       double iou_thresh) {
  if (gt_boxes.empty()) return 1.0;
  int covered = 0;
  for (const BBox& gt : gt_boxes) {
    double best = 0;
    for (const BBox& c : candidates) best = std::max(best, iou(c, gt));
    if (best > iou_thresh) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(gt_boxes.size());
}

struct GroundTruthBox {
  int class_id = 0;
  BBox box;
};

// Detections and annotations of one evaluated image.
struct ImageEval {
  std::vector<DetectionHit> hits;
  std::vector<GroundTruthBox> gt;
};

namespace detail {

struct RankedHit {
  double confidence;
  int image;
  const DetectionHit* hit;
};

// Returns NaN when the class has no ground-truth instances.
inline double ap_single_class(const std::vector<ImageEval>& images, int class_id, double iou_thresh,
                              bool eleven_point, int max_dets_per_image = -1) {
  int npos = 0;
  for (const auto& img : images) {
    for (const auto& g : img.gt) npos += g.class_id == class_id ? 1 : 0;
  }
  if (npos == 0) return std::nan("");

  std::vector<RankedHit> ranked;
  for (size_t i = 0; i < images.size(); ++i) {
    std::vector<const DetectionHit*> hits;
    for (const auto& h : images[i].hits) hits.push_back(&h);
    if (max_dets_per_image >= 0 && static_cast<int>(hits.size()) > max_dets_per_image) {
      std::sort(hits.begin(), hits.end(), [](const DetectionHit* a, const DetectionHit* b) {
        if (a->confidence != b->confidence) return a->confidence > b->confidence;
        return bbox_less(a->box, b->box);
      });
      hits.resize(static_cast<size_t>(max_dets_per_image));
    }
    for (const DetectionHit* h : hits) {
      if (h->class_id == class_id) ranked.push_back({h->confidence, static_cast<int>(i), h});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedHit& a, const RankedHit& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.image != b.image) return a.image < b.image;
    return bbox_less(a.hit->box, b.hit->box);
  });

  std::vector<std::vector<char>> taken(images.size());
  for (size_t i = 0; i < images.size(); ++i) taken[i].assign(images[i].gt.size(), 0);

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const RankedHit& r : ranked) {
    const auto& gt = images[static_cast<size_t>(r.image)].gt;
    int best = -1;
    double best_iou = 0;
    for (size_t g = 0; g < gt.size(); ++g) {
      if (gt[g].class_id != class_id || taken[static_cast<size_t>(r.image)][g]) continue;
      const double v = iou(r.hit->box, gt[g].box);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[static_cast<size_t>(r.image)][static_cast<size_t>(best)] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / npos);
  }

  if (eleven_point) {
    double acc = 0;
    for (int i = 0; i <= 10; ++i) {
      const double r = i / 10.0;
      double p = 0;
      for (size_t j = 0; j < recall.size(); ++j) {
        if (recall[j] >= r) p = std::max(p, precision[j]);
      }
      acc += p;
    }
    return acc / 11.0;
  }

  // Area under the precision-recall curve with the running-max envelope.
  double ap = 0;
  double prev_recall = 0;
  for (size_t j = 0; j < recall.size(); ++j) {
    double p_env = 0;
    for (size_t k = j; k < precision.size(); ++k) p_env = std::max(p_env, precision[k]);
    ap += (recall[j] - prev_recall) * p_env;
    prev_recall = recall[j];
  }
  return ap;
}

}  // namespace detail

// Per-class AP at one matching threshold; classes without ground truth are
// excluded from the mean.
inline double average_precision(const std::vector<ImageEval>& images, int class_id, double iou_thresh,
                                bool eleven_point = false) {
  return detail::ap_single_class(images, class_id, iou_thresh, eleven_point);
}

inline double mean_average_precision(const std::vector<ImageEval>& images, int class_count, double iou_thresh,
                                     bool eleven_point = false) {
  double acc = 0;
  int classes = 0;
  for (int c = 0; c < class_count; ++c) {
    const double ap = detail::ap_single_class(images, c, iou_thresh, eleven_point);
    if (!std::isnan(ap)) {
      acc += ap;
      ++classes;
    }
  }
  return classes ? acc / classes : 0.0;
}

// Mean of the MAP over matching thresholds 0.50, 0.55, ..., 0.95.
inline double map_range(const std::vector<ImageEval>& images, int class_count) {
  double acc = 0;
  int n = 0;
  for (int i = 0; i < 10; ++i) {
    acc += mean_average_precision(images, class_count, 0.50 + 0.05 * i);
    ++n;
  }
  return acc / n;
}

// Class-averaged recall with at most `max_dets` detections per image, itself
// averaged over the 0.50:0.95 threshold range.
inline double recall_at_dets(const std::vector<ImageEval>& images, int class_count, int max_dets) {
  double acc = 0;
  int n = 0;
  for (int ti = 0; ti < 10; ++ti) {
    const double t = 0.50 + 0.05 * ti;
    double class_acc = 0;
    int classes = 0;
    for (int c = 0; c < class_count; ++c) {
      int npos = 0;
      for (const auto& img : images) {
        for (const auto& g : img.gt) npos += g.class_id == c ? 1 : 0;
      }
      if (npos == 0) continue;
      int matched = 0;
      for (const auto& img : images) {
        std::vector<const DetectionHit*> hits;
        for (const auto& h : img.hits) hits.push_back(&h);
        std::sort(hits.begin(), hits.end(), [](const DetectionHit* a, const DetectionHit* b) {
          if (a->confidence != b->confidence) return a->confidence > b->confidence;
          return bbox_less(a->box, b->box);
        });
        if (static_cast<int>(hits.size()) > max_dets) hits.resize(static_cast<size_t>(max_dets));
        std::vector<char> taken(img.gt.size(), 0);
        for (const DetectionHit* h : hits) {
          if (h->class_id != c) continue;
          int best = -1;
          double best_iou = 0;
          for (size_t g = 0; g < img.gt.size(); ++g) {
            if (img.gt[g].class_id != c || taken[g]) continue;
            const double v = iou(h->box, img.gt[g].box);
            if (v >= t && v > best_iou) {
              best_iou = v;
              best = static_cast<int>(g);
            }
          }
          if (best >= 0) {
            taken[static_cast<size_t>(best)] = 1;
            ++matched;
          }
        }
      }
      class_acc += static_cast<double>(matched) / npos;
      ++classes;
    }
    if (classes) {
      acc += class_acc / classes;
      ++n;
    }
  }
  return n ? acc / n : 0.0;
}

struct EvalReport {
  double map_50 = 0;
  double map_range = 0;
  std::map<int, double> per_class_ap;       // at IoU 0.5
  std::map<double, double> coverage_at;     // candidate coverage by threshold
  std::map<int, double> recall_at;          // by detections-per-image budget
};

// Assembles the full report. roi_boxes carries the per-image candidate boxes
// (in the same pixel frame as the ground truth) for the coverage rows.
inline EvalReport compute_eval_report(const std::vector<ImageEval>& images,
                                      const std::vector<std::vector<BBox>>& roi_boxes, int class_count,
                                      bool eleven_point = false) {
  if (roi_boxes.size() != images.size()) {
    throw std::invalid_argument("compute_eval_report: roi/image count mismatch");
  }
  EvalReport report;
  report.map_50 = mean_average_precision(images, class_count, 0.5, eleven_point);
  report.map_range = map_range(images, class_count);
  for (int c = 0; c < class_count; ++c) {
    const double ap = average_precision(images, c, 0.5, eleven_point);
    if (!std::isnan(ap)) report.per_class_ap[c] = ap;
  }
  for (double t : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    double acc = 0;
    int n = 0;
    for (size_t i = 0; i < images.size(); ++i) {
      if (images[i].gt.empty()) continue;
      std::vector<BBox> gt;
      for (const auto& g : images[i].gt) gt.push_back(g.box);
      acc += coverage(roi_boxes[i], gt, t) * static_cast<double>(gt.size());
      n += static_cast<int>(gt.size());
    }
    report.coverage_at[t] = n ? acc / n : 1.0;
  }
  for (int k : {1, 10, 100}) report.recall_at[k] = recall_at_dets(images, class_count, k);
  return report;
}

inline std::string eval_report_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "metric,value\n";
  os << "map_50," << r.map_50 << "\n";
  os << "map_range," << r.map_range << "\n";
  for (const auto& [c, ap] : r.per_class_ap) os << "ap_50.class_" << c << "," << ap << "\n";
  for (const auto& [t, v] : r.coverage_at) os << "coverage." << t << "," << v << "\n";
  for (const auto& [k, v] : r.recall_at) os << "recall.dets_" << k << "," << v << "\n";
  return os.str();
}

inline std::string eval_report_table(const EvalReport& r) {
  std::ostringstream os;
  os.precision(4);
  os << "MAP@0.5            " << r.map_50 << "\n";
  os << "MAP@[0.5:0.95]     " << r.map_range << "\n";
  for (const auto& [c, ap] : r.per_class_ap) os << "AP@0.5 class " << c << "     " << ap << "\n";
  for (const auto& [t, v] : r.coverage_at) os << "coverage@" << t << "       " << v << "\n";
  for (const auto& [k, v] : r.recall_at) os << "AR@" << k << " dets        " << v << "\n";
  return os.str();
}

}  // namespace cornerdet
