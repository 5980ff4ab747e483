#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cornerdet/bbox.hpp"
#include "cornerdet/model.hpp"
#include "cornerdet/ops.hpp"
#include "cornerdet/rng.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

enum class RoiSource { kCornerSearch, kGroundTruth, kRandom };

// Candidate region: a box in corner-map cell coordinates plus its corner
// probability product. The score is meaningful only for corner-search boxes.
struct RoI {
  BBox box;
  double score = 0;
  RoiSource source = RoiSource::kCornerSearch;
};

// Probability that a box bounds an instance: the product of the four corner
// presence probabilities at the box corners, multiplied in fixed order
// (top-left, top-right, bottom-left, bottom-right) in double precision.
template <typename T>
double score_box(const Tensor<T>& corner_map, const BBox& box) {
  const int H = corner_map.dim(1), W = corner_map.dim(2);
  const int x1 = static_cast<int>(std::llround(box.x1));
  const int y1 = static_cast<int>(std::llround(box.y1));
  const int x2 = static_cast<int>(std::llround(box.x2));
  const int y2 = static_cast<int>(std::llround(box.y2));
  if (x1 < 0 || y1 < 0 || x2 >= W || y2 >= H || x2 < x1 || y2 < y1) {
    throw std::invalid_argument("score_box: corner cell out of map bounds");
  }
  const int64_t cells = static_cast<int64_t>(H) * W;
  auto p = [&](int type, int y, int x) {
    return static_cast<double>(corner_map[type * cells + static_cast<int64_t>(y) * W + x]);
  };
  return ((p(kTopLeft, y1, x1) * p(kTopRight, y1, x2)) * p(kBottomLeft, y2, x1)) * p(kBottomRight, y2, x2);
}

namespace detail {

struct CornerCell {
  double p;
  int y, x;
};

// Strongest-first with coordinate tie-break, so top-M selection is unique.
inline bool corner_cell_greater(const CornerCell& a, const CornerCell& b) {
  if (a.p != b.p) return a.p > b.p;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

inline bool roi_order(const RoI& a, const RoI& b) {
  if (a.score != b.score) return a.score > b.score;
  return bbox_less(a.box, b.box);
}

}  // namespace detail

// Box search over a [4,Hc,Wc] corner presence map:
//   1. collect corners with probability above `threshold`
//   2. keep the strongest `top_m` per type
//   3. pair every kept top-left with every kept bottom-right (strict order)
//   4. score each candidate by its four-corner probability product
//   5. repeat the pairing with top-right x bottom-left
//   6. deduplicate, sort by score (ties by coordinates), keep grid_n^2
template <typename T>
std::vector<RoI> generate_rois(const Tensor<T>& corner_map, double threshold, int top_m, int grid_n) {
  if (corner_map.rank() != 3 || corner_map.dim(0) != 4) {
    throw std::invalid_argument("generate_rois: corner map must be [4,H,W], got " + corner_map.shape_str());
  }
  if (threshold < 0.0 || threshold >= 1.0) throw std::invalid_argument("generate_rois: threshold in [0,1)");
  if (top_m < 1 || grid_n < 1) throw std::invalid_argument("generate_rois: top_m and grid_n must be >= 1");

  const int H = corner_map.dim(1), W = corner_map.dim(2);
  const int64_t cells = static_cast<int64_t>(H) * W;

  std::array<std::vector<detail::CornerCell>, 4> kept;
  for (int k = 0; k < 4; ++k) {
    std::vector<detail::CornerCell>& list = kept[static_cast<size_t>(k)];
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double p = static_cast<double>(corner_map[k * cells + static_cast<int64_t>(y) * W + x]);
        if (p > threshold) list.push_back({p, y, x});
      }
    }
    std::sort(list.begin(), list.end(), detail::corner_cell_greater);
    if (static_cast<int>(list.size()) > top_m) list.resize(static_cast<size_t>(top_m));
  }

  std::vector<RoI> candidates;
  for (const auto& tl : kept[kTopLeft]) {
    for (const auto& br : kept[kBottomRight]) {
      if (br.x > tl.x && br.y > tl.y) {
        BBox box{static_cast<double>(tl.x), static_cast<double>(tl.y), static_cast<double>(br.x),
                 static_cast<double>(br.y)};
        candidates.push_back({box, score_box(corner_map, box), RoiSource::kCornerSearch});
      }
    }
  }
  for (const auto& tr : kept[kTopRight]) {
    for (const auto& bl : kept[kBottomLeft]) {
      if (tr.x > bl.x && bl.y > tr.y) {
        BBox box{static_cast<double>(bl.x), static_cast<double>(tr.y), static_cast<double>(tr.x),
                 static_cast<double>(bl.y)};
        candidates.push_back({box, score_box(corner_map, box), RoiSource::kCornerSearch});
      }
    }
  }

  std::sort(candidates.begin(), candidates.end(),
            [](const RoI& a, const RoI& b) { return bbox_less(a.box, b.box); });
  candidates.erase(std::unique(candidates.begin(), candidates.end(),
                               [](const RoI& a, const RoI& b) { return a.box == b.box; }),
                   candidates.end());
  std::sort(candidates.begin(), candidates.end(), detail::roi_order);
  const size_t limit = static_cast<size_t>(grid_n) * static_cast<size_t>(grid_n);
  if (candidates.size() > limit) candidates.resize(limit);
  return candidates;
}

// Fixed-length descriptor of one RoI: a 7x7 lattice of nearest-cell feature
// samples spanning the box, then the normalized box width and height.
template <typename T>
struct RoIFeature {
  std::vector<T> values;
};

namespace detail {

inline void check_box_in_map(const BBox& box, int map_h, int map_w, const char* who) {
  if (!(box.x1 >= 0 && box.y1 >= 0 && box.x2 <= map_w && box.y2 <= map_h && box.valid())) {
    throw std::invalid_argument(std::string(who) + ": box outside map bounds");
  }
}

inline std::array<int, 7> lattice_cells(double lo, double hi, int extent) {
  std::array<int, 7> cells;
  const double step = (hi - lo) / 6.0;
  for (int g = 0; g < 7; ++g) {
    const int c = static_cast<int>(std::llround(lo + g * step));
    cells[static_cast<size_t>(g)] = std::clamp(c, 0, extent - 1);
  }
  return cells;
}

}  // namespace detail

template <typename T>
RoIFeature<T> extract_feature(const Tensor<T>& sampling_map, const BBox& box) {
  if (sampling_map.rank() != 3) {
    throw std::invalid_argument("extract_feature: sampling map must be [F,H,W]");
  }
  const int F = sampling_map.dim(0), H = sampling_map.dim(1), W = sampling_map.dim(2);
  detail::check_box_in_map(box, H, W, "extract_feature");
  const auto xs = detail::lattice_cells(box.x1, box.x2, W);
  const auto ys = detail::lattice_cells(box.y1, box.y2, H);
  RoIFeature<T> out;
  out.values.resize(static_cast<size_t>(49 * F + 2));
  const int64_t plane = static_cast<int64_t>(H) * W;
  size_t at = 0;
  for (int gy = 0; gy < 7; ++gy) {
    for (int gx = 0; gx < 7; ++gx) {
      const int64_t cell = static_cast<int64_t>(ys[static_cast<size_t>(gy)]) * W + xs[static_cast<size_t>(gx)];
      for (int f = 0; f < F; ++f) out.values[at++] = sampling_map[f * plane + cell];
    }
  }
  out.values[at++] = static_cast<T>(box.width() / W);
  out.values[at++] = static_cast<T>(box.height() / H);
  return out;
}

// Batched, differentiable variant over a [B,Fs,H,W] feature map. The boxes
// are plain constants; gradients flow only into the sampled map cells (the
// width/height entries have no upstream).
struct RoiRef {
  int sample = 0;
  BBox box;
};

template <typename T>
Var<T> extract_roi_features(const Var<T>& maps, const std::vector<RoiRef>& rois) {
  const Tensor<T>& m = maps.value();
  detail::op_check(m.rank() == 4, "extract_roi_features: maps must be [B,F,H,W]");
  const int B = m.dim(0), F = m.dim(1), H = m.dim(2), W = m.dim(3);
  const int R = static_cast<int>(rois.size());
  detail::op_check(R > 0, "extract_roi_features: empty roi list");
  const int D = 49 * F + 2;
  const int64_t plane = static_cast<int64_t>(H) * W;

  // Pre-resolve lattice cells once; forward and backward share them.
  auto cells = std::make_shared<std::vector<int64_t>>();
  cells->reserve(static_cast<size_t>(R) * 49);
  for (const RoiRef& r : rois) {
    detail::op_check(r.sample >= 0 && r.sample < B, "extract_roi_features: sample index out of range");
    detail::check_box_in_map(r.box, H, W, "extract_roi_features");
    const auto xs = detail::lattice_cells(r.box.x1, r.box.x2, W);
    const auto ys = detail::lattice_cells(r.box.y1, r.box.y2, H);
    for (int gy = 0; gy < 7; ++gy) {
      for (int gx = 0; gx < 7; ++gx) {
        cells->push_back(static_cast<int64_t>(r.sample) * F * plane +
                         static_cast<int64_t>(ys[static_cast<size_t>(gy)]) * W + xs[static_cast<size_t>(gx)]);
      }
    }
  }

  Tensor<T> out({R, D});
  const T* md = m.data();
  T* od = out.data();
  for (int r = 0; r < R; ++r) {
    T* row = od + static_cast<int64_t>(r) * D;
    const int64_t* rc = cells->data() + static_cast<int64_t>(r) * 49;
    for (int g = 0; g < 49; ++g) {
      const int64_t base = rc[g];
      for (int f = 0; f < F; ++f) row[g * F + f] = md[base + f * plane];
    }
    row[49 * F] = static_cast<T>(rois[static_cast<size_t>(r)].box.width() / W);
    row[49 * F + 1] = static_cast<T>(rois[static_cast<size_t>(r)].box.height() / H);
  }

  auto mn = maps.node();
  auto fn = [mn, cells, R, F, D, plane](Node<T>& self) {
    if (!mn->requires_grad) return;
    mn->ensure_grad();
    const T* gd = self.grad.data();
    T* dm = mn->grad.data();
    for (int r = 0; r < R; ++r) {
      const T* grow = gd + static_cast<int64_t>(r) * D;
      const int64_t* rc = cells->data() + static_cast<int64_t>(r) * 49;
      for (int g = 0; g < 49; ++g) {
        const int64_t base = rc[g];
        for (int f = 0; f < F; ++f) dm[base + f * plane] += grow[g * F + f];
      }
    }
  };
  return Var<T>::result(std::move(out), {mn}, std::move(fn));
}

// Training-time augmentation of the search boxes: append every ground-truth
// box, then a fixed fraction of uniformly drawn valid integer-cell boxes.
// Boxes already present are not repeated; random draws that collide are
// re-drawn a bounded number of times.
inline std::vector<RoI> augment_rois_training(std::vector<RoI> rois, const std::vector<BBox>& gt_boxes,
                                              double random_fraction, Rng& rng, int map_h, int map_w) {
  if (random_fraction < 0.0 || random_fraction >= 1.0) {
    throw std::invalid_argument("augment_rois_training: fraction must lie in [0, 1)");
  }
  auto contains = [&](const BBox& b) {
    for (const RoI& r : rois) {
      if (r.box == b) return true;
    }
    return false;
  };
  const int n_random = static_cast<int>(std::ceil(random_fraction * static_cast<double>(rois.size())));
  for (const BBox& gt : gt_boxes) {
    if (!contains(gt)) rois.push_back({gt, 0.0, RoiSource::kGroundTruth});
  }
  for (int i = 0; i < n_random; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int x1 = rng.uniform_int(map_w - 1);
      const int x2 = x1 + 1 + rng.uniform_int(map_w - 1 - x1);
      const int y1 = rng.uniform_int(map_h - 1);
      const int y2 = y1 + 1 + rng.uniform_int(map_h - 1 - y1);
      const BBox b{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2),
                   static_cast<double>(y2)};
      if (!contains(b)) {
        rois.push_back({b, 0.0, RoiSource::kRandom});
        break;
      }
    }
  }
  return rois;
}

}  // namespace cornerdet
