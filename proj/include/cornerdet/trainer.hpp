#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cornerdet/augment.hpp"
#include "cornerdet/checkpoint.hpp"
#include "cornerdet/datagen.hpp"
#include "cornerdet/head.hpp"
#include "cornerdet/loss.hpp"
#include "cornerdet/metrics.hpp"
#include "cornerdet/model.hpp"
#include "cornerdet/sampler.hpp"

namespace cornerdet {

// Momentum update with the gradient applied at the look-ahead point:
//   g <- g + wd * p        (weights only)
//   v <- momentum * v + g
//   p <- p - lr * (g + momentum * v)
// With momentum 0 this is plain SGD.
template <typename T>
class NesterovSgd {
 public:
  void step(ParamStore<T>& params, double lr, double momentum, double weight_decay) {
    for (const auto& name : params.names()) {
      Var<T>& var = params.get(name);
      Tensor<T>& p = var.value();
      Tensor<T>& g = var.grad();
      auto [it, inserted] = velocities_.try_emplace(name, Tensor<T>(p.shape()));
      Tensor<T>& v = it->second;
      const T mu = static_cast<T>(momentum);
      const T wd = params.is_weight(name) ? static_cast<T>(weight_decay) : T(0);
      const T step_size = static_cast<T>(lr);
      for (int64_t i = 0; i < p.numel(); ++i) {
        const T grad = g[i] + wd * p[i];
        v[i] = mu * v[i] + grad;
        p[i] -= step_size * (grad + mu * v[i]);
      }
    }
  }

  std::map<std::string, Tensor<T>>& velocities() { return velocities_; }

 private:
  std::map<std::string, Tensor<T>> velocities_;
};

struct TrainConfig {
  int epochs = 30;
  std::vector<int> lr_drop_epochs = {10, 20};
  double lr_initial = 0.1;
  double lr_drop_factor = 10.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 8;
  uint64_t seed = 1;
  AugmentConfig augment;
  bool augment_enabled = true;    // off: border+rescale only, as at eval time
  double random_roi_fraction = 0.10;
  double iou_pos = 0.5;
  LossWeights loss;
  int log_every = 25;
  int checkpoint_every_epochs = 10;
  std::string out_dir;            // empty: no metrics/checkpoint files

  void validate() const {
    if (epochs <= 0) throw std::invalid_argument("train: epochs must be positive");
    for (size_t i = 1; i < lr_drop_epochs.size(); ++i) {
      if (lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
        throw std::invalid_argument("train: lr drop epochs must be strictly increasing");
      }
    }
    if (batch_size <= 0) throw std::invalid_argument("train: batch size must be positive");
    if (lr_initial <= 0 || lr_drop_factor <= 0) throw std::invalid_argument("train: bad learning rate");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train: momentum in [0,1)");
  }
};

// One assembled training batch in the model input frame.
struct Batch {
  Tensor<float> images;                          // [B,3,S,S]
  std::vector<std::vector<Annotation>> boxes;    // per sample, pixel coords
};

// Everything the joint cost needs from one forward pass, with the candidate
// boxes already frozen.
struct PipelineOutputs {
  BaseOutputs<float> base;
  Tensor<float> corner_targets;   // [B,4,E,E]
  Var<float> class_probs;         // [R,|C|+1]
  Var<float> box_params;          // [R,4]
  std::vector<int> class_targets;
  std::vector<RegressionTarget> reg_targets;
  double coverage = 0;            // search-box coverage@0.5 on this batch
  int roi_count = 0;
};

// Forward pass of the full training pipeline: base network, box search per
// sample, ground-truth/random box augmentation, feature sampling and the
// classifier head. Boxes are constants from here on; the search never runs
// inside the backward pass.
inline PipelineOutputs run_training_pipeline(Network<float>& net, const Batch& batch,
                                             const TrainConfig& cfg, uint64_t roi_seed, Mode mode) {
  const ModelConfig& mc = net.config();
  const int B = batch.images.dim(0);
  const int E = mc.corner_map_extent();
  const double stride = static_cast<double>(mc.corner_stride);

  PipelineOutputs out;
  out.base = net.forward_base(batch.images, mode);

  out.corner_targets = Tensor<float>({B, 4, E, E});
  std::vector<RoiRef> roi_refs;
  double coverage_acc = 0;
  int coverage_images = 0;
  for (int b = 0; b < B; ++b) {
    const auto& annotations = batch.boxes[static_cast<size_t>(b)];
    std::vector<BBox> gt_px, gt_cells;
    std::vector<int> gt_classes;
    for (const Annotation& a : annotations) {
      gt_px.push_back(a.box);
      gt_cells.push_back(a.box.scaled(1.0 / stride));
      gt_classes.push_back(a.class_id);
    }

    Tensor<float> target = build_corner_target<float>(gt_px, mc.corner_stride, E, E);
    const int64_t per = target.numel();
    for (int64_t i = 0; i < per; ++i) out.corner_targets[static_cast<int64_t>(b) * per + i] = target[i];

    Tensor<float> presence = net.corner_presence(out.base, b);
    std::vector<RoI> rois = generate_rois(presence, mc.corner_threshold, mc.corner_top_m, mc.roi_grid);
    if (!gt_cells.empty()) {
      std::vector<BBox> search_boxes;
      for (const RoI& r : rois) search_boxes.push_back(r.box);
      coverage_acc += coverage(search_boxes, gt_cells, 0.5);
      ++coverage_images;
    }
    Rng roi_rng(derive_seed(roi_seed, {static_cast<uint64_t>(b)}));
    rois = augment_rois_training(std::move(rois), gt_cells, cfg.random_roi_fraction, roi_rng, E, E);

    auto assignment = assign_targets(rois, gt_cells, gt_classes, cfg.iou_pos, mc.class_count, E, E);
    for (size_t i = 0; i < rois.size(); ++i) {
      roi_refs.push_back({b, rois[i].box});
      out.class_targets.push_back(assignment.class_targets[i]);
      out.reg_targets.push_back(assignment.regression[i]);
    }
  }
  out.coverage = coverage_images ? coverage_acc / coverage_images : 1.0;
  out.roi_count = static_cast<int>(roi_refs.size());

  Var<float> features = extract_roi_features(out.base.features, roi_refs);
  auto [class_probs, box_params] = net.run_head(features, mode);
  out.class_probs = class_probs;
  out.box_params = box_params;
  return out;
}

// Measures the raw cost components on one batch of a freshly initialized
// model and freezes the normalizers so each component starts at 1.
inline LossWeights calibrate_lambdas(Network<float>& net, const Batch& batch, const TrainConfig& cfg,
                                     uint64_t roi_seed) {
  PipelineOutputs p = run_training_pipeline(net, batch, cfg, roi_seed, Mode::kTrain);
  RawLossTerms<float> raw = raw_loss_terms(p.base.corner_probs, p.corner_targets, p.class_probs,
                                           p.class_targets, p.box_params, p.reg_targets);
  LossWeights weights = cfg.loss;
  weights.calibrate(raw.corner.value()[0], raw.cls.value()[0], raw.box.value()[0]);
  return weights;
}

struct TrainResult {
  LossWeights weights;
  uint64_t final_step = 0;
  double final_loss = 0;
  std::string final_checkpoint;
  std::string metrics_path;
};

namespace train_detail {

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr_initial;
  for (int drop : cfg.lr_drop_epochs) {
    if (epoch >= drop) lr /= cfg.lr_drop_factor;
  }
  return lr;
}

inline std::string format_row(uint64_t step, int epoch, double lr, double total, double corner, double cls,
                              double box, double cover) {
  std::ostringstream os;
  os << step << ',' << epoch << ',' << std::setprecision(10) << lr << ',' << total << ',' << corner << ','
     << cls << ',' << box << ',' << cover;
  return os.str();
}

}  // namespace train_detail

// Full optimization loop. Every random stream is derived from (seed, epoch,
// index), so runs are reproducible and a resume from an epoch-boundary
// checkpoint replays exactly the rows an uninterrupted run would produce.
inline TrainResult train(Network<float>& net, const std::vector<SceneSample>& data, TrainConfig cfg,
                         uint64_t start_step = 0, std::map<std::string, Tensor<float>> velocities = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  cfg.augment.input_size = net.config().input_size;

  const int n = static_cast<int>(data.size());
  const uint64_t steps_per_epoch = static_cast<uint64_t>((n + cfg.batch_size - 1) / cfg.batch_size);
  if (start_step % steps_per_epoch != 0) {
    throw std::invalid_argument("train: resume step must sit on an epoch boundary");
  }
  const int start_epoch = static_cast<int>(start_step / steps_per_epoch);
  if (start_step > 0 && !cfg.loss.calibrated) {
    throw std::invalid_argument("train: resuming requires calibrated loss weights");
  }

  NesterovSgd<float> opt;
  opt.velocities() = std::move(velocities);

  namespace fs = std::filesystem;
  std::ofstream metrics;
  TrainResult result;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    const fs::path mpath = fs::path(cfg.out_dir) / "metrics.csv";
    result.metrics_path = mpath.string();
    const bool fresh = !fs::exists(mpath) || start_step == 0;
    metrics.open(mpath, fresh ? std::ios::trunc : std::ios::app);
    if (!metrics) throw std::runtime_error("train: cannot open metrics file " + mpath.string());
    if (fresh) metrics << "step,epoch,lr,loss_total,loss_corner,loss_class,loss_bbox,coverage_train\n";
  }

  LossWeights weights = cfg.loss;
  uint64_t step = start_step;
  const Mode aug_mode = cfg.augment_enabled ? Mode::kTrain : Mode::kEval;
  const int S = net.config().input_size;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = train_detail::lr_at_epoch(cfg, epoch);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, {0x5u, static_cast<uint64_t>(epoch)}));
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

    for (int batch_start = 0; batch_start < n; batch_start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n - batch_start);
      Batch batch;
      batch.images = Tensor<float>({bsz, 3, S, S});
      batch.boxes.resize(static_cast<size_t>(bsz));
      const int64_t per_image = static_cast<int64_t>(3) * S * S;
      for (int i = 0; i < bsz; ++i) {
        const SceneSample& sample = data[static_cast<size_t>(order[static_cast<size_t>(batch_start + i)])];
        Rng aug_rng(derive_seed(cfg.seed, {0xAu, static_cast<uint64_t>(epoch),
                                           static_cast<uint64_t>(batch_start + i)}));
        AugmentedSample aug = augment_sample(sample.image, sample.annotations, aug_rng, aug_mode, cfg.augment);
        for (int64_t j = 0; j < per_image; ++j) batch.images[static_cast<int64_t>(i) * per_image + j] = aug.image[j];
        batch.boxes[static_cast<size_t>(i)] = std::move(aug.boxes);
      }

      const uint64_t roi_seed = derive_seed(cfg.seed, {0xBu, static_cast<uint64_t>(epoch),
                                                       static_cast<uint64_t>(batch_start)});
      PipelineOutputs p = run_training_pipeline(net, batch, cfg, roi_seed, Mode::kTrain);
      if (!weights.calibrated) {
        RawLossTerms<float> raw = raw_loss_terms(p.base.corner_probs, p.corner_targets, p.class_probs,
                                                 p.class_targets, p.box_params, p.reg_targets);
        weights.calibrate(raw.corner.value()[0], raw.cls.value()[0], raw.box.value()[0]);
      }
      LossBreakdown<float> loss = joint_loss(p.base.corner_probs, p.corner_targets, p.class_probs,
                                             p.class_targets, p.box_params, p.reg_targets, weights);
      const double total = static_cast<double>(loss.total.value()[0]);
      if (!std::isfinite(loss.corner)) throw std::runtime_error("train: non-finite corner loss at step " + std::to_string(step));
      if (!std::isfinite(loss.cls)) throw std::runtime_error("train: non-finite classification loss at step " + std::to_string(step));
      if (!std::isfinite(loss.box)) throw std::runtime_error("train: non-finite box regression loss at step " + std::to_string(step));

      net.params().zero_grads();
      backward(loss.total);
      opt.step(net.params(), lr, cfg.momentum, cfg.weight_decay);

      if (metrics.is_open() && step % static_cast<uint64_t>(cfg.log_every) == 0) {
        metrics << train_detail::format_row(step, epoch, lr, total, loss.corner, loss.cls, loss.box,
                                            p.coverage)
                << '\n';
      }
      result.final_loss = total;
      ++step;
    }

    if (!cfg.out_dir.empty()) {
      const bool last = epoch + 1 == cfg.epochs;
      if (last || (cfg.checkpoint_every_epochs > 0 && (epoch + 1) % cfg.checkpoint_every_epochs == 0)) {
        std::ostringstream name;
        name << "checkpoint-e" << std::setw(3) << std::setfill('0') << (epoch + 1) << ".ckpt";
        const std::string path = (fs::path(cfg.out_dir) / name.str()).string();
        save_checkpoint(path, make_checkpoint(net, opt.velocities(), weights, step));
        if (last) {
          result.final_checkpoint = (fs::path(cfg.out_dir) / "checkpoint-final.ckpt").string();
          save_checkpoint(result.final_checkpoint, make_checkpoint(net, opt.velocities(), weights, step));
        }
      }
    }
  }

  if (metrics.is_open()) {
    metrics.flush();
    if (!metrics) throw std::runtime_error("train: short write to metrics file");
  }
  result.weights = weights;
  result.final_step = step;
  return result;
}

}  // namespace cornerdet
