#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "cornerdet/augment.hpp"
#include "cornerdet/datagen.hpp"
#include "cornerdet/metrics.hpp"
#include "cornerdet/model.hpp"
#include "cornerdet/sampler.hpp"

namespace cornerdet {

struct DetectOptions {
  double nms_iou = 0.5;
  double min_conf = 0.05;
};

// Per-image outcome: the candidate boxes from the corner search (cell
// coordinates) and the final classified hits (model-frame pixels).
struct ImageDetections {
  std::vector<RoI> rois;
  std::vector<DetectionHit> hits;
};

// Accumulated wall-clock per pipeline stage, in seconds.
struct StageTimes {
  double estimate_corners = 0;
  double generate_roi = 0;
  double classify_roi = 0;
  double estimate_instances = 0;
  int images = 0;
};

// Runs the four-stage detection pipeline on an image batch in eval mode:
// corner/feature estimation, box search, feature classification, and
// instance estimation (decode + per-class suppression).
inline std::vector<ImageDetections> detect_batch(Network<float>& net, const Tensor<float>& images,
                                                 const DetectOptions& opts, StageTimes* times = nullptr) {
  using clock = std::chrono::steady_clock;
  const ModelConfig& cfg = net.config();
  const int B = images.dim(0);
  const int E = cfg.corner_map_extent();
  const double S = static_cast<double>(cfg.input_size);

  const auto t0 = clock::now();
  BaseOutputs<float> base = net.forward_base(images, Mode::kEval);
  const auto t1 = clock::now();

  std::vector<ImageDetections> out(static_cast<size_t>(B));
  std::vector<RoiRef> refs;
  for (int b = 0; b < B; ++b) {
    Tensor<float> presence = net.corner_presence(base, b);
    out[static_cast<size_t>(b)].rois =
        generate_rois(presence, cfg.corner_threshold, cfg.corner_top_m, cfg.roi_grid);
    for (const RoI& r : out[static_cast<size_t>(b)].rois) refs.push_back({b, r.box});
  }
  const auto t2 = clock::now();

  Tensor<float> class_probs, box_params;
  if (!refs.empty()) {
    Var<float> features = extract_roi_features(base.features, refs);
    auto [cp, bp] = net.run_head(features, Mode::kEval);
    class_probs = cp.value();
    box_params = bp.value();
  }
  const auto t3 = clock::now();

  const int classes = cfg.class_count;
  int row = 0;
  for (int b = 0; b < B; ++b) {
    std::vector<DetectionHit> hits;
    for (size_t i = 0; i < out[static_cast<size_t>(b)].rois.size(); ++i, ++row) {
      DetectionHit h;
      h.class_probs.resize(static_cast<size_t>(classes) + 1);
      for (int c = 0; c <= classes; ++c) {
        h.class_probs[static_cast<size_t>(c)] = class_probs[static_cast<int64_t>(row) * (classes + 1) + c];
      }
      h.class_id = 0;
      for (int c = 1; c < classes; ++c) {
        if (h.class_probs[static_cast<size_t>(c)] > h.class_probs[static_cast<size_t>(h.class_id)]) h.class_id = c;
      }
      h.confidence = h.class_probs[static_cast<size_t>(h.class_id)];
      if (h.confidence < opts.min_conf) continue;
      const double cx = box_params[static_cast<int64_t>(row) * 4 + 0];
      const double cy = box_params[static_cast<int64_t>(row) * 4 + 1];
      const double w = box_params[static_cast<int64_t>(row) * 4 + 2];
      const double hh = box_params[static_cast<int64_t>(row) * 4 + 3];
      BBox box{(cx - w / 2) * S, (cy - hh / 2) * S, (cx + w / 2) * S, (cy + hh / 2) * S};
      box = box.clipped(0, 0, S, S);
      if (!box.valid()) continue;
      h.box = box;
      hits.push_back(std::move(h));
    }
    out[static_cast<size_t>(b)].hits = nms(std::move(hits), opts.nms_iou);
  }
  const auto t4 = clock::now();

  if (times) {
    auto sec = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
    times->estimate_corners += sec(t0, t1);
    times->generate_roi += sec(t1, t2);
    times->classify_roi += sec(t2, t3);
    times->estimate_instances += sec(t3, t4);
    times->images += B;
  }
  (void)E;
  return out;
}

// Evaluates a model over labelled scenes: eval-mode preprocessing, batched
// detection, and the metric suite. Boxes are compared in the original image
// frame.
inline EvalReport evaluate_model(Network<float>& net, const std::vector<SceneSample>& data, int batch_size,
                                 const DetectOptions& opts, bool eleven_point = false) {
  const ModelConfig& cfg = net.config();
  const int S = cfg.input_size;
  AugmentConfig aug;
  aug.input_size = S;

  std::vector<ImageEval> images;
  std::vector<std::vector<BBox>> roi_boxes;
  images.reserve(data.size());
  roi_boxes.reserve(data.size());

  Rng dummy(0);
  const int n = static_cast<int>(data.size());
  for (int start = 0; start < n; start += batch_size) {
    const int bsz = std::min(batch_size, n - start);
    Tensor<float> batch({bsz, 3, S, S});
    std::vector<double> inv_scale(static_cast<size_t>(bsz));
    std::vector<std::vector<Annotation>> gt(static_cast<size_t>(bsz));
    const int64_t per_image = static_cast<int64_t>(3) * S * S;
    for (int i = 0; i < bsz; ++i) {
      const SceneSample& sample = data[static_cast<size_t>(start + i)];
      AugmentedSample prepared = augment_sample(sample.image, sample.annotations, dummy, Mode::kEval, aug);
      for (int64_t j = 0; j < per_image; ++j) batch[static_cast<int64_t>(i) * per_image + j] = prepared.image[j];
      const int side = std::max(sample.image.dim(1), sample.image.dim(2));
      inv_scale[static_cast<size_t>(i)] = static_cast<double>(side) / S;
      gt[static_cast<size_t>(i)] = sample.annotations;  // original frame
    }
    auto detections = detect_batch(net, batch, opts);
    for (int i = 0; i < bsz; ++i) {
      const double inv = inv_scale[static_cast<size_t>(i)];
      ImageEval ev;
      for (const Annotation& a : gt[static_cast<size_t>(i)]) ev.gt.push_back({a.class_id, a.box});
      for (DetectionHit h : detections[static_cast<size_t>(i)].hits) {
        h.box = h.box.scaled(inv);
        ev.hits.push_back(std::move(h));
      }
      std::vector<BBox> rois_px;
      for (const RoI& r : detections[static_cast<size_t>(i)].rois) {
        rois_px.push_back(r.box.scaled(static_cast<double>(cfg.corner_stride)).scaled(inv));
      }
      images.push_back(std::move(ev));
      roi_boxes.push_back(std::move(rois_px));
    }
  }
  return compute_eval_report(images, roi_boxes, cfg.class_count, eleven_point);
}

}  // namespace cornerdet
