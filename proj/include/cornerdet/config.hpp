#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cornerdet {

enum class LayerKind { kConv, kDeconv, kBatchNorm, kRelu, kSoftmax, kLinear, kSkipAdd };

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  int filters = 0;
  int kernel_h = 3, kernel_w = 3;
  int stride_h = 1, stride_w = 1;

  static LayerSpec conv(int filters, int kernel = 3, int stride = 1) {
    LayerSpec s;
    s.kind = LayerKind::kConv;
    s.filters = filters;
    s.kernel_h = s.kernel_w = kernel;
    s.stride_h = s.stride_w = stride;
    return s;
  }

  void validate() const {
    if (kernel_h <= 0 || kernel_w <= 0) throw std::invalid_argument("layer: kernel extents must be positive");
    if (stride_h <= 0 || stride_w <= 0) throw std::invalid_argument("layer: stride extents must be positive");
    const bool parameterized = kind == LayerKind::kConv || kind == LayerKind::kDeconv || kind == LayerKind::kLinear;
    if (parameterized && filters <= 0) throw std::invalid_argument("layer: filters must be positive");
  }
};

enum class Variant { kPlain, kSkip, kWide };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kPlain: return "plain";
    case Variant::kSkip: return "skip";
    default: return "wide";
  }
}

// Full description of a detector instance: backbone stack, upsampling path,
// corner head and classifier head, plus the box-search knobs.
struct ModelConfig {
  int input_size = 64;
  int class_count = 3;                       // object classes, null excluded
  std::vector<LayerSpec> backbone;           // conv blocks, each conv+batchnorm+relu
  std::vector<int> deconv_filters = {64, 32};
  bool skip_enabled = false;
  int feature_channels = 32;                 // sampling-feature channels per cell
  int corner_stride = 4;                     // input pixels per corner-map cell
  int roi_grid = 8;                          // keeps roi_grid^2 boxes
  int corner_top_m = 16;                     // strongest corners kept per type
  double corner_threshold = 0.05;            // min corner probability considered
  std::vector<int> head_widths = {64, 64, 48, 48};

  int deconv_count() const { return static_cast<int>(deconv_filters.size()); }
  int corner_map_extent() const { return input_size / corner_stride; }
  int feature_length() const { return 49 * feature_channels + 2; }

  int backbone_downsample() const {
    int ds = 1;
    for (const auto& l : backbone) ds *= l.stride_h;
    return ds;
  }

  void validate() const {
    if (input_size <= 0) throw std::invalid_argument("config: input_size must be positive");
    if (class_count < 1) throw std::invalid_argument("config: class_count must be >= 1");
    if (backbone.empty()) throw std::invalid_argument("config: backbone is empty");
    for (const auto& l : backbone) {
      l.validate();
      if (l.kind != LayerKind::kConv) throw std::invalid_argument("config: backbone blocks must be conv");
      if (l.stride_h != l.stride_w) throw std::invalid_argument("config: backbone strides must be square");
    }
    if (deconv_count() != 2 && deconv_count() != 3) {
      throw std::invalid_argument("config: deconv count must be 2 or 3");
    }
    for (int f : deconv_filters) {
      if (f <= 0) throw std::invalid_argument("config: deconv filters must be positive");
    }
    if (feature_channels <= 0) throw std::invalid_argument("config: feature_channels must be positive");
    if (corner_stride <= 0 || input_size % corner_stride != 0) {
      throw std::invalid_argument("config: input_size must be divisible by corner_stride");
    }
    const int ds = backbone_downsample();
    if (input_size % ds != 0 || input_size / ds < 1) {
      throw std::invalid_argument("config: backbone downsample does not divide input size");
    }
    int expected_extent = input_size / ds;
    for (int i = 0; i < deconv_count(); ++i) expected_extent *= 2;
    if (expected_extent != corner_map_extent()) {
      throw std::invalid_argument("config: corner_stride " + std::to_string(corner_stride) +
                                  " inconsistent with backbone/deconv path (map extent would be " +
                                  std::to_string(expected_extent) + ")");
    }
    if (roi_grid < 1) throw std::invalid_argument("config: roi_grid must be >= 1");
    if (corner_top_m < 1) throw std::invalid_argument("config: corner_top_m must be >= 1");
    if (corner_threshold < 0.0 || corner_threshold >= 1.0) {
      throw std::invalid_argument("config: corner_threshold must lie in [0, 1)");
    }
    if (head_widths.empty()) throw std::invalid_argument("config: head_widths is empty");
    for (int w : head_widths) {
      if (w <= 0) throw std::invalid_argument("config: head widths must be positive");
    }
  }
};

// Small configuration trained on 64x64 synthetic scenes.
inline ModelConfig desk_config(Variant variant = Variant::kPlain) {
  ModelConfig cfg;
  cfg.input_size = 64;
  cfg.class_count = 3;
  cfg.backbone = {LayerSpec::conv(16, 3, 2), LayerSpec::conv(32, 3, 2), LayerSpec::conv(64, 3, 2),
                  LayerSpec::conv(128, 3, 2)};
  cfg.skip_enabled = variant != Variant::kPlain;
  if (variant == Variant::kWide) {
    cfg.deconv_filters = {64, 32, 16};
    cfg.corner_stride = 2;
  } else {
    cfg.deconv_filters = {64, 32};
    cfg.corner_stride = 4;
  }
  cfg.feature_channels = 32;
  cfg.roi_grid = 8;
  cfg.corner_top_m = 16;
  cfg.corner_threshold = 0.05;
  cfg.head_widths = {64, 64, 48, 48};
  return cfg;
}

// Full-scale configuration: 512x512 input, a deep stride-32 backbone in place
// of a pretrained classification trunk, and the wide classifier head.
inline ModelConfig paper_config(Variant variant = Variant::kPlain) {
  ModelConfig cfg;
  cfg.input_size = 512;
  cfg.class_count = 3;
  cfg.backbone.clear();
  cfg.backbone.push_back(LayerSpec::conv(64, 3, 2));
  cfg.backbone.push_back(LayerSpec::conv(64, 3, 2));
  for (int i = 0; i < 3; ++i) cfg.backbone.push_back(LayerSpec::conv(64, 3, 1));
  cfg.backbone.push_back(LayerSpec::conv(128, 3, 2));
  for (int i = 0; i < 3; ++i) cfg.backbone.push_back(LayerSpec::conv(128, 3, 1));
  cfg.backbone.push_back(LayerSpec::conv(256, 3, 2));
  for (int i = 0; i < 5; ++i) cfg.backbone.push_back(LayerSpec::conv(256, 3, 1));
  cfg.backbone.push_back(LayerSpec::conv(512, 3, 2));
  for (int i = 0; i < 2; ++i) cfg.backbone.push_back(LayerSpec::conv(512, 3, 1));
  cfg.skip_enabled = variant != Variant::kPlain;
  if (variant == Variant::kWide) {
    cfg.deconv_filters = {256, 128, 64};
    cfg.corner_stride = 4;
  } else {
    cfg.deconv_filters = {256, 128};
    cfg.corner_stride = 8;
  }
  cfg.feature_channels = 96;
  cfg.roi_grid = 24;
  cfg.corner_top_m = 64;
  cfg.corner_threshold = 0.05;
  cfg.head_widths = {1536, 1024, 768, 512};
  return cfg;
}

}  // namespace cornerdet
