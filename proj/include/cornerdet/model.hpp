#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cornerdet/bbox.hpp"
#include "cornerdet/config.hpp"
#include "cornerdet/ops.hpp"
#include "cornerdet/params.hpp"
#include "cornerdet/rng.hpp"

namespace cornerdet {

// Corner type indices, fixed everywhere: the second axis of the corner map
// and the order of the probability product.
enum CornerType { kTopLeft = 0, kTopRight = 1, kBottomLeft = 2, kBottomRight = 3 };

template <typename T>
struct BaseOutputs {
  Var<T> corner_probs;  // [B,4,2,Hc,Wc]; index 1 on axis 2 is "corner present"
  Var<T> features;      // [B,Fs,Hc,Wc] sampling-feature map
};

// The detector network: configurable conv backbone, two or three
// deconvolution layers raising the corner-map resolution (optionally with
// skip projections from the equal-resolution backbone block), a corner head
// emitting per-type presence probabilities plus a linear feature projection,
// and a fully connected classifier head applied per RoI feature vector.
template <typename T>
class Network {
 public:
  explicit Network(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Running batchnorm moments, in a stable order for checkpointing.
  std::vector<std::pair<std::string, Tensor<T>*>> state_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& [name, state] : bn_states_) {
      out.emplace_back(name + ".running_mean", &state.running_mean);
      out.emplace_back(name + ".running_var", &state.running_var);
    }
    return out;
  }

  void reset_bn_stats() {
    for (auto& [name, state] : bn_states_) {
      state.running_mean.fill(T(0));
      state.running_var.fill(T(1));
    }
  }

  // Draws every filter from N(0, sigma) with sigma^2 = 2/(filters * kernel
  // area), zeroes biases, sets gamma=1 beta=0. Same seed, same parameters.
  void init_params(uint64_t seed) {
    Rng rng(seed);
    for (const auto& name : params_.names()) {
      Tensor<T>& v = params_.get(name).value();
      const InitInfo& info = init_info_.at(name);
      switch (info.kind) {
        case InitInfo::kFilter:
          fill_normal_filter_init(v, info.filters, info.kernel_area, rng);
          break;
        case InitInfo::kZero:
          v.fill(T(0));
          break;
        case InitInfo::kOne:
          v.fill(T(1));
          break;
      }
    }
    reset_bn_stats();
  }

  BaseOutputs<T> forward_base(const Tensor<T>& images, Mode mode) {
    detail::op_check(images.rank() == 4 && images.dim(1) == 3, "forward_base: expected [B,3,S,S] images, got " +
                                                                   images.shape_str());
    detail::op_check(images.dim(2) == cfg_.input_size && images.dim(3) == cfg_.input_size,
                     "forward_base: image extent " + images.shape_str() + " does not match input size " +
                         std::to_string(cfg_.input_size));
    Var<T> x(images);
    std::vector<Var<T>> block_outputs;
    block_outputs.reserve(cfg_.backbone.size());
    for (size_t i = 0; i < cfg_.backbone.size(); ++i) {
      const LayerSpec& l = cfg_.backbone[i];
      const std::string base = "backbone." + std::to_string(i);
      Var<T> pre = conv2d(x, params_.get(base + ".weight"), Var<T>(), l.stride_h, l.stride_w, l.kernel_h / 2,
                          l.kernel_w / 2);
      pre = batchnorm(pre, params_.get(base + ".bn.gamma"), params_.get(base + ".bn.beta"),
                      bn_state(base + ".bn"), mode);
      x = relu(pre);
      block_outputs.push_back(x);
    }
    for (int j = 0; j < cfg_.deconv_count(); ++j) {
      const std::string base = "deconv." + std::to_string(j);
      Var<T> pre = deconv2d(x, params_.get(base + ".weight"), Var<T>(), 2, 1, 1);
      pre = batchnorm(pre, params_.get(base + ".bn.gamma"), params_.get(base + ".bn.beta"),
                      bn_state(base + ".bn"), mode);
      if (cfg_.skip_enabled) {
        // Linear projection of the matching-resolution backbone output, added
        // before the activation.
        Var<T> proj = conv2d(block_outputs[static_cast<size_t>(skip_sources_[static_cast<size_t>(j)])],
                             params_.get("skip." + std::to_string(j) + ".weight"), Var<T>(), 1, 0);
        pre = add(pre, proj);
      }
      x = relu(pre);
    }
    Var<T> logits = conv2d(x, params_.get("corner.logits.weight"), params_.get("corner.logits.bias"), 1, 0);
    const int B = images.dim(0);
    const int E = cfg_.corner_map_extent();
    Var<T> probs = softmax(reshape(logits, {B, 4, 2, E, E}), 2);
    Var<T> feats = conv2d(x, params_.get("corner.features.weight"), params_.get("corner.features.bias"), 1, 0);
    return {probs, feats};
  }

  // Classifier head over RoI feature vectors [R, 49*Fs+2]. Returns the class
  // distribution over |C|+1 entries (null last) and 4 box parameters in (0,1).
  std::pair<Var<T>, Var<T>> run_head(const Var<T>& features, Mode mode) {
    detail::op_check(features.value().rank() == 2 && features.value().dim(1) == cfg_.feature_length(),
                     "run_head: feature length " + features.value().shape_str() + " does not match config " +
                         std::to_string(cfg_.feature_length()));
    Var<T> x = features;
    for (size_t i = 0; i < cfg_.head_widths.size(); ++i) {
      const std::string base = "head." + std::to_string(i);
      Var<T> pre = linear(x, params_.get(base + ".weight"), Var<T>());
      pre = batchnorm(pre, params_.get(base + ".bn.gamma"), params_.get(base + ".bn.beta"),
                      bn_state(base + ".bn"), mode);
      x = relu(pre);
    }
    Var<T> out = linear(x, params_.get("head.out.weight"), params_.get("head.out.bias"));
    const int classes = cfg_.class_count + 1;
    Var<T> class_probs = softmax(slice_cols(out, 0, classes), 1);
    Var<T> box_params = sigmoid(slice_cols(out, classes, 4));
    return {class_probs, box_params};
  }

  // Presence probabilities for one sample as a plain [4,Hc,Wc] tensor.
  Tensor<T> corner_presence(const BaseOutputs<T>& outputs, int sample) const {
    const Tensor<T>& p = outputs.corner_probs.value();
    const int E = cfg_.corner_map_extent();
    Tensor<T> map({4, E, E});
    const int64_t cells = static_cast<int64_t>(E) * E;
    for (int k = 0; k < 4; ++k) {
      const int64_t src = ((static_cast<int64_t>(sample) * 4 + k) * 2 + 1) * cells;
      for (int64_t i = 0; i < cells; ++i) map[k * cells + i] = p[src + i];
    }
    return map;
  }

  BatchNormState<T>& bn_state(const std::string& name) {
    for (auto& [n, s] : bn_states_) {
      if (n == name) return s;
    }
    throw std::invalid_argument("unknown batchnorm state '" + name + "'");
  }

 private:
  struct InitInfo {
    enum Kind { kFilter, kZero, kOne } kind = kZero;
    int filters = 0;
    int kernel_area = 1;
  };

  void add_filter(const std::string& name, std::vector<int> shape, int filters, int kernel_area) {
    params_.add(name, Tensor<T>(std::move(shape)), /*is_weight=*/true);
    init_info_[name] = {InitInfo::kFilter, filters, kernel_area};
  }

  void add_bias(const std::string& name, int n) {
    params_.add(name, Tensor<T>({n}), /*is_weight=*/false);
    init_info_[name] = {InitInfo::kZero, 0, 1};
  }

  void add_bn(const std::string& base, int channels) {
    params_.add(base + ".gamma", Tensor<T>::full({channels}, T(1)), /*is_weight=*/false);
    init_info_[base + ".gamma"] = {InitInfo::kOne, 0, 1};
    params_.add(base + ".beta", Tensor<T>({channels}), /*is_weight=*/false);
    init_info_[base + ".beta"] = {InitInfo::kZero, 0, 1};
    bn_states_.emplace_back(base, BatchNormState<T>(channels));
  }

  void build() {
    int channels = 3;
    int spatial = cfg_.input_size;
    std::vector<int> block_spatial;
    std::vector<int> block_channels;
    for (size_t i = 0; i < cfg_.backbone.size(); ++i) {
      const LayerSpec& l = cfg_.backbone[i];
      const std::string base = "backbone." + std::to_string(i);
      add_filter(base + ".weight", {l.filters, channels, l.kernel_h, l.kernel_w}, l.filters,
                 l.kernel_h * l.kernel_w);
      add_bn(base + ".bn", l.filters);
      channels = l.filters;
      spatial /= l.stride_h;
      block_spatial.push_back(spatial);
      block_channels.push_back(channels);
    }
    for (int j = 0; j < cfg_.deconv_count(); ++j) {
      const int f = cfg_.deconv_filters[static_cast<size_t>(j)];
      const std::string base = "deconv." + std::to_string(j);
      add_filter(base + ".weight", {channels, f, 3, 3}, f, 9);
      add_bn(base + ".bn", f);
      channels = f;
      spatial *= 2;
      if (cfg_.skip_enabled) {
        int src = -1;
        for (int i = static_cast<int>(block_spatial.size()) - 1; i >= 0; --i) {
          if (block_spatial[static_cast<size_t>(i)] == spatial) {
            src = i;
            break;
          }
        }
        if (src < 0) {
          throw std::invalid_argument("config: no backbone block matches skip resolution " +
                                      std::to_string(spatial));
        }
        skip_sources_.push_back(src);
        add_filter("skip." + std::to_string(j) + ".weight",
                   {f, block_channels[static_cast<size_t>(src)], 1, 1}, f, 1);
      }
    }
    add_filter("corner.logits.weight", {8, channels, 1, 1}, 8, 1);
    add_bias("corner.logits.bias", 8);
    add_filter("corner.features.weight", {cfg_.feature_channels, channels, 1, 1}, cfg_.feature_channels, 1);
    add_bias("corner.features.bias", cfg_.feature_channels);

    int d = cfg_.feature_length();
    for (size_t i = 0; i < cfg_.head_widths.size(); ++i) {
      const int w = cfg_.head_widths[i];
      const std::string base = "head." + std::to_string(i);
      add_filter(base + ".weight", {w, d}, w, 1);
      add_bn(base + ".bn", w);
      d = w;
    }
    const int out_units = cfg_.class_count + 1 + 4;
    add_filter("head.out.weight", {out_units, d}, out_units, 1);
    add_bias("head.out.bias", out_units);
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
  std::vector<std::pair<std::string, BatchNormState<T>>> bn_states_;
  std::unordered_map<std::string, InitInfo> init_info_;
  std::vector<int> skip_sources_;
};

// Ground-truth corner map: each box corner lands in the cell floor(px /
// stride) of its type's plane; corners falling outside the map are dropped;
// coincident corners from different instances merge into a single 1.
template <typename T>
Tensor<T> build_corner_target(const std::vector<BBox>& gt_boxes, int corner_stride, int map_h, int map_w) {
  Tensor<T> target({4, map_h, map_w});
  const int64_t cells = static_cast<int64_t>(map_h) * map_w;
  for (const BBox& b : gt_boxes) {
    const double xs[4] = {b.x1, b.x2, b.x1, b.x2};
    const double ys[4] = {b.y1, b.y1, b.y2, b.y2};
    for (int k = 0; k < 4; ++k) {
      const int cx = static_cast<int>(std::floor(xs[k] / corner_stride));
      const int cy = static_cast<int>(std::floor(ys[k] / corner_stride));
      if (cx < 0 || cx >= map_w || cy < 0 || cy >= map_h) continue;
      target[k * cells + static_cast<int64_t>(cy) * map_w + cx] = T(1);
    }
  }
  return target;
}

}  // namespace cornerdet
