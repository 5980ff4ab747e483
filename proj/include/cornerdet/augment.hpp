#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cornerdet/autograd.hpp"
#include "cornerdet/bbox.hpp"
#include "cornerdet/rng.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

struct AugmentConfig {
  int input_size = 64;
  bool crop = true;
  bool mirror = true;
  bool photometric = true;
  double area_min = 0.08;        // crop area relative to the bordered image
  double area_max = 1.0;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  double min_gt_overlap = 0.5;   // fraction of a box the crop must retain
  int crop_attempts = 10;
  double jitter = 0.2;           // photometric strength
};

struct AugmentedSample {
  Tensor<float> image;            // [3,S,S]
  std::vector<Annotation> boxes;  // pixel coordinates in the output frame
};

namespace aug_detail {

// Pads the smaller dimension with black so the image is square. Content
// keeps its origin; boxes are unchanged.
inline Tensor<float> pad_to_square(const Tensor<float>& image) {
  const int H = image.dim(1), W = image.dim(2);
  const int L = std::max(H, W);
  if (H == W) return image;
  Tensor<float> out({3, L, L});
  const int64_t in_plane = static_cast<int64_t>(H) * W;
  const int64_t out_plane = static_cast<int64_t>(L) * L;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        out[c * out_plane + static_cast<int64_t>(y) * L + x] = image[c * in_plane + static_cast<int64_t>(y) * W + x];
      }
    }
  }
  return out;
}

// Bilinear resample of a window [x0,x0+w) x [y0,y0+h) to out_size^2, using
// the half-pixel convention so a full-window same-size resample is exact.
inline Tensor<float> resample_window(const Tensor<float>& image, double x0, double y0, double w, double h,
                                     int out_size) {
  const int H = image.dim(1), W = image.dim(2);
  if (w == W && h == H && x0 == 0 && y0 == 0 && out_size == W && out_size == H) return image;
  Tensor<float> out({3, out_size, out_size});
  const int64_t in_plane = static_cast<int64_t>(H) * W;
  const int64_t out_plane = static_cast<int64_t>(out_size) * out_size;
  const double sx = w / out_size;
  const double sy = h / out_size;
  for (int oy = 0; oy < out_size; ++oy) {
    const double fy = y0 + (oy + 0.5) * sy - 0.5;
    const int iy0 = static_cast<int>(std::floor(fy));
    const double wy = fy - iy0;
    const int ya = std::clamp(iy0, 0, H - 1);
    const int yb = std::clamp(iy0 + 1, 0, H - 1);
    for (int ox = 0; ox < out_size; ++ox) {
      const double fx = x0 + (ox + 0.5) * sx - 0.5;
      const int ix0 = static_cast<int>(std::floor(fx));
      const double wx = fx - ix0;
      const int xa = std::clamp(ix0, 0, W - 1);
      const int xb = std::clamp(ix0 + 1, 0, W - 1);
      for (int c = 0; c < 3; ++c) {
        const float* p = image.data() + c * in_plane;
        const double top = p[static_cast<int64_t>(ya) * W + xa] * (1 - wx) + p[static_cast<int64_t>(ya) * W + xb] * wx;
        const double bot = p[static_cast<int64_t>(yb) * W + xa] * (1 - wx) + p[static_cast<int64_t>(yb) * W + xb] * wx;
        out[c * out_plane + static_cast<int64_t>(oy) * out_size + ox] =
            static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

inline void mirror_horizontal(Tensor<float>& image, std::vector<Annotation>& boxes) {
  const int H = image.dim(1), W = image.dim(2);
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < H; ++y) {
      float* row = image.data() + c * plane + static_cast<int64_t>(y) * W;
      std::reverse(row, row + W);
    }
  }
  for (Annotation& a : boxes) {
    const double x1 = a.box.x1, x2 = a.box.x2;
    a.box.x1 = W - x2;
    a.box.x2 = W - x1;
  }
}

// Contrast, saturation and brightness, each scaled by a factor in
// [1-jitter, 1+jitter].
inline void photometric_jitter(Tensor<float>& image, Rng& rng, double jitter) {
  const double fc = rng.uniform(1.0 - jitter, 1.0 + jitter);
  const double fs = rng.uniform(1.0 - jitter, 1.0 + jitter);
  const double fb = rng.uniform(1.0 - jitter, 1.0 + jitter);
  const int64_t plane = image.numel() / 3;
  double mean = 0;
  for (int64_t i = 0; i < image.numel(); ++i) mean += image[i];
  mean /= static_cast<double>(image.numel());
  for (int64_t i = 0; i < plane; ++i) {
    double rgb[3];
    for (int c = 0; c < 3; ++c) rgb[c] = image[c * plane + i];
    for (double& v : rgb) v = mean + (v - mean) * fc;
    const double gray = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
    for (double& v : rgb) v = gray + (v - gray) * fs;
    for (double& v : rgb) v *= fb;
    for (int c = 0; c < 3; ++c) image[c * plane + i] = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
  }
}

}  // namespace aug_detail

// Border to square, optional accepted random crop, rescale to the model
// input size, optional mirror and photometric jitter. Eval mode performs the
// border and rescale only. Boxes follow every transform, are clipped to the
// output frame, and instances left mostly outside the crop are dropped.
inline AugmentedSample augment_sample(const Tensor<float>& image, const std::vector<Annotation>& boxes,
                                      Rng& rng, Mode mode, const AugmentConfig& cfg) {
  Tensor<float> square = aug_detail::pad_to_square(image);
  const int L = square.dim(1);
  const int S = cfg.input_size;

  double cx0 = 0, cy0 = 0, cw = L, ch = L;
  if (mode == Mode::kTrain && cfg.crop) {
    for (int attempt = 0; attempt < cfg.crop_attempts; ++attempt) {
      const double area = rng.uniform(cfg.area_min, cfg.area_max) * L * L;
      const double aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
      const double w = std::min(std::sqrt(area * aspect), static_cast<double>(L));
      const double h = std::min(std::sqrt(area / aspect), static_cast<double>(L));
      const double x0 = rng.uniform(0.0, L - w);
      const double y0 = rng.uniform(0.0, L - h);
      const BBox crop{x0, y0, x0 + w, y0 + h};
      bool ok = false;
      for (const Annotation& a : boxes) {
        if (intersection_area(a.box, crop) / a.box.area() >= cfg.min_gt_overlap) {
          ok = true;
          break;
        }
      }
      if (ok) {
        cx0 = x0;
        cy0 = y0;
        cw = w;
        ch = h;
        break;
      }
      // all attempts exhausted: fall back to the full bordered image
    }
  }

  AugmentedSample out;
  out.image = aug_detail::resample_window(square, cx0, cy0, cw, ch, S);
  const BBox crop{cx0, cy0, cx0 + cw, cy0 + ch};
  const double sx = S / cw, sy = S / ch;
  for (const Annotation& a : boxes) {
    const double visible = intersection_area(a.box, crop) / a.box.area();
    if (visible < cfg.min_gt_overlap) continue;
    BBox b{(a.box.x1 - cx0) * sx, (a.box.y1 - cy0) * sy, (a.box.x2 - cx0) * sx, (a.box.y2 - cy0) * sy};
    b = b.clipped(0, 0, S, S);
    if (!b.valid()) continue;
    out.boxes.push_back({a.class_id, b});
  }

  if (mode == Mode::kTrain) {
    if (cfg.mirror && rng.bernoulli(0.5)) aug_detail::mirror_horizontal(out.image, out.boxes);
    if (cfg.photometric) aug_detail::photometric_jitter(out.image, rng, cfg.jitter);
  }
  return out;
}

}  // namespace cornerdet
