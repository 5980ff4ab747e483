#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cornerdet/bbox.hpp"
#include "cornerdet/rng.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

// One synthetic scene: image in [0,1] plus tight instance boxes in pixels.
struct SceneSample {
  std::string id;
  Tensor<float> image;  // [3,S,S]
  std::vector<Annotation> annotations;
};

// Shape classes: 0 rectangle, 1 ellipse, 2 triangle.
struct GenConfig {
  int image_size = 64;
  int class_count = 3;
  int min_instances = 1;
  int max_instances = 3;
  double min_size_frac = 0.25;   // instance extent relative to the image side
  double max_size_frac = 0.65;
  double noise_level = 0.08;
  double max_overlap_iou = 0.3;  // between placed instances
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(hh);
  const double f = hh - sector;
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

// Pixel-center membership tests against the continuous instance box.
inline bool inside_shape(int class_id, double px, double py, const BBox& b, double tri_apex_x) {
  switch (class_id) {
    case 0:
      return px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2;
    case 1: {
      const double cx = (b.x1 + b.x2) / 2, cy = (b.y1 + b.y2) / 2;
      const double rx = b.width() / 2, ry = b.height() / 2;
      const double dx = (px - cx) / rx, dy = (py - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    default: {
      // Vertices: apex on the top edge, bottom corners of the box.
      const double ax = tri_apex_x, ay = b.y1;
      const double bx = b.x1, by = b.y2;
      const double cx = b.x2, cy = b.y2;
      auto side = [&](double x1, double y1, double x2, double y2) {
        return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
      };
      const double d1 = side(ax, ay, bx, by);
      const double d2 = side(bx, by, cx, cy);
      const double d3 = side(cx, cy, ax, ay);
      const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
      const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(has_neg && has_pos);
    }
  }
}

}  // namespace detail

// Deterministic scene synthesis: a noisy gray background with 1..max
// hue-separated filled shapes, annotated by their tight boxes. Instances
// overlap at most max_overlap_iou.
inline SceneSample gen_scene(uint64_t seed, const GenConfig& cfg) {
  Rng rng(derive_seed(seed, {0x5C3AE3ull}));
  const int S = cfg.image_size;
  SceneSample sample;
  sample.image = Tensor<float>({3, S, S});
  const int64_t plane = static_cast<int64_t>(S) * S;

  const double base = rng.uniform(0.12, 0.3);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-0.03, 0.03);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double n = rng.uniform(-cfg.noise_level, cfg.noise_level);
      for (int c = 0; c < 3; ++c) {
        sample.image[c * plane + static_cast<int64_t>(y) * S + x] =
            static_cast<float>(std::clamp(base + tint[c] + n, 0.0, 1.0));
      }
    }
  }

  const int count = cfg.min_instances + rng.uniform_int(cfg.max_instances - cfg.min_instances + 1);
  std::vector<double> used_hues;
  const double margin = 2.0;
  for (int inst = 0; inst < count; ++inst) {
    BBox box;
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      const double w = rng.uniform(cfg.min_size_frac, cfg.max_size_frac) * S;
      const double h = rng.uniform(cfg.min_size_frac, cfg.max_size_frac) * S;
      if (w + 2 * margin > S || h + 2 * margin > S) continue;
      const double x1 = rng.uniform(margin, S - margin - w);
      const double y1 = rng.uniform(margin, S - margin - h);
      box = {x1, y1, x1 + w, y1 + h};
      placed = true;
      for (const Annotation& a : sample.annotations) {
        if (iou(box, a.box) > cfg.max_overlap_iou) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) continue;

    double hue = rng.uniform();
    for (int attempt = 0; attempt < 20; ++attempt) {
      bool distinct = true;
      for (double u : used_hues) {
        double d = std::abs(hue - u);
        d = std::min(d, 1.0 - d);
        if (d < 0.12) {
          distinct = false;
          break;
        }
      }
      if (distinct) break;
      hue = rng.uniform();
    }
    used_hues.push_back(hue);

    const int class_id = rng.uniform_int(cfg.class_count);
    const double apex_x = rng.uniform(box.x1 + 0.15 * box.width(), box.x2 - 0.15 * box.width());
    double rgb[3];
    detail::hsv_to_rgb(hue, rng.uniform(0.65, 1.0), rng.uniform(0.7, 1.0), rgb);

    const int px1 = static_cast<int>(std::floor(box.x1));
    const int py1 = static_cast<int>(std::floor(box.y1));
    const int px2 = static_cast<int>(std::ceil(box.x2));
    const int py2 = static_cast<int>(std::ceil(box.y2));
    for (int y = std::max(0, py1); y < std::min(S, py2); ++y) {
      for (int x = std::max(0, px1); x < std::min(S, px2); ++x) {
        if (!detail::inside_shape(class_id, x + 0.5, y + 0.5, box, apex_x)) continue;
        for (int c = 0; c < 3; ++c) {
          sample.image[c * plane + static_cast<int64_t>(y) * S + x] = static_cast<float>(rgb[c]);
        }
      }
    }
    sample.annotations.push_back({class_id, box});
  }
  return sample;
}

}  // namespace cornerdet
