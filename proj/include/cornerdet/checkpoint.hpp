#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cornerdet/config.hpp"
#include "cornerdet/loss.hpp"
#include "cornerdet/model.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

// Self-contained training snapshot: model description, loss normalizers,
// step counter and every named tensor (parameters, batchnorm moments and
// optimizer velocities).
struct Checkpoint {
  ModelConfig config;
  LossWeights weights;
  uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

namespace detail {

constexpr uint32_t kCheckpointMagic = 0x54454443u;  // "CDET"
constexpr uint32_t kCheckpointVersion = 1;

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  }
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_string(const std::string& s) {
    if (s.size() > 0xFFFF) throw std::runtime_error("checkpoint: name too long");
    put<uint16_t>(static_cast<uint16_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_floats(const float* data, int64_t n) {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint: short write to '" + path_ + "'");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  }
  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in_.gcount() != sizeof(T)) fail("truncated file");
    return v;
  }
  std::string get_string() {
    const uint16_t n = get<uint16_t>();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (in_.gcount() != n) fail("truncated name");
    return s;
  }
  void get_floats(float* data, int64_t n) {
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
    if (in_.gcount() != static_cast<std::streamsize>(n * 4)) fail("truncated tensor data");
  }
  void expect_eof() {
    in_.peek();
    if (!in_.eof()) fail("trailing bytes after checkpoint payload");
  }
  [[noreturn]] void fail(const std::string& why) {
    throw std::runtime_error("checkpoint: " + path_ + ": " + why);
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::BinWriter w(path);
  w.put(detail::kCheckpointMagic);
  w.put(detail::kCheckpointVersion);

  const ModelConfig& c = ckpt.config;
  w.put<int32_t>(c.input_size);
  w.put<int32_t>(c.class_count);
  w.put<uint32_t>(static_cast<uint32_t>(c.backbone.size()));
  for (const LayerSpec& l : c.backbone) {
    w.put<int32_t>(static_cast<int32_t>(l.kind));
    w.put<int32_t>(l.filters);
    w.put<int32_t>(l.kernel_h);
    w.put<int32_t>(l.kernel_w);
    w.put<int32_t>(l.stride_h);
    w.put<int32_t>(l.stride_w);
  }
  w.put<uint32_t>(static_cast<uint32_t>(c.deconv_filters.size()));
  for (int f : c.deconv_filters) w.put<int32_t>(f);
  w.put<uint8_t>(c.skip_enabled ? 1 : 0);
  w.put<int32_t>(c.feature_channels);
  w.put<int32_t>(c.corner_stride);
  w.put<int32_t>(c.roi_grid);
  w.put<int32_t>(c.corner_top_m);
  w.put<double>(c.corner_threshold);
  w.put<uint32_t>(static_cast<uint32_t>(c.head_widths.size()));
  for (int h : c.head_widths) w.put<int32_t>(h);

  const LossWeights& lw = ckpt.weights;
  w.put<double>(lw.lambda_class);
  w.put<double>(lw.lambda_corner);
  w.put<double>(lw.lambda_box);
  w.put<double>(lw.norm_class);
  w.put<double>(lw.norm_corner);
  w.put<double>(lw.norm_box);
  w.put<uint8_t>(lw.calibrated ? 1 : 0);

  w.put<uint64_t>(ckpt.step);

  w.put<uint32_t>(static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.put_string(name);
    w.put<uint8_t>(static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) w.put<uint32_t>(static_cast<uint32_t>(t.dim(i)));
    w.put_floats(t.data(), t.numel());
  }
  w.finish();
}

inline Checkpoint load_checkpoint(const std::string& path) {
  detail::BinReader r(path);
  if (r.get<uint32_t>() != detail::kCheckpointMagic) r.fail("bad magic");
  const uint32_t version = r.get<uint32_t>();
  if (version != detail::kCheckpointVersion) {
    r.fail("unsupported format version " + std::to_string(version));
  }

  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  c.input_size = r.get<int32_t>();
  c.class_count = r.get<int32_t>();
  c.backbone.resize(r.get<uint32_t>());
  for (LayerSpec& l : c.backbone) {
    l.kind = static_cast<LayerKind>(r.get<int32_t>());
    l.filters = r.get<int32_t>();
    l.kernel_h = r.get<int32_t>();
    l.kernel_w = r.get<int32_t>();
    l.stride_h = r.get<int32_t>();
    l.stride_w = r.get<int32_t>();
  }
  c.deconv_filters.resize(r.get<uint32_t>());
  for (int& f : c.deconv_filters) f = r.get<int32_t>();
  c.skip_enabled = r.get<uint8_t>() != 0;
  c.feature_channels = r.get<int32_t>();
  c.corner_stride = r.get<int32_t>();
  c.roi_grid = r.get<int32_t>();
  c.corner_top_m = r.get<int32_t>();
  c.corner_threshold = r.get<double>();
  c.head_widths.resize(r.get<uint32_t>());
  for (int& h : c.head_widths) h = r.get<int32_t>();

  LossWeights& lw = ckpt.weights;
  lw.lambda_class = r.get<double>();
  lw.lambda_corner = r.get<double>();
  lw.lambda_box = r.get<double>();
  lw.norm_class = r.get<double>();
  lw.norm_corner = r.get<double>();
  lw.norm_box = r.get<double>();
  lw.calibrated = r.get<uint8_t>() != 0;

  ckpt.step = r.get<uint64_t>();

  const uint32_t count = r.get<uint32_t>();
  ckpt.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string();
    const uint8_t rank = r.get<uint8_t>();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.get<uint32_t>());
    Tensor<float> t(shape);
    r.get_floats(t.data(), t.numel());
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  r.expect_eof();
  c.validate();
  return ckpt;
}

// Collects the full training state of a network. Optimizer velocities are
// passed by name (empty map before the first step).
inline Checkpoint make_checkpoint(Network<float>& net, const std::map<std::string, Tensor<float>>& velocities,
                                  const LossWeights& weights, uint64_t step) {
  Checkpoint ckpt;
  ckpt.config = net.config();
  ckpt.weights = weights;
  ckpt.step = step;
  for (const auto& name : net.params().names()) {
    ckpt.tensors.emplace_back("param/" + name, net.params().get(name).value());
  }
  for (const auto& [name, tensor] : net.state_tensors()) {
    ckpt.tensors.emplace_back("state/" + name, *tensor);
  }
  for (const auto& [name, tensor] : velocities) {
    ckpt.tensors.emplace_back("opt/" + name, tensor);
  }
  return ckpt;
}

// Rebuilds a network (and optionally the optimizer velocities) from a loaded
// checkpoint. The network is constructed fresh so a failed load cannot leave
// a half-restored model behind.
inline Network<float> restore_network(const Checkpoint& ckpt,
                                      std::map<std::string, Tensor<float>>* velocities = nullptr) {
  Network<float> net(ckpt.config);
  auto states = net.state_tensors();
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (name.rfind("param/", 0) == 0) {
      const std::string key = name.substr(6);
      Tensor<float>& dst = net.params().get(key).value();
      if (!dst.same_shape(tensor)) {
        throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
      }
      dst = tensor;
    } else if (name.rfind("state/", 0) == 0) {
      const std::string key = name.substr(6);
      bool found = false;
      for (auto& [sname, ptr] : states) {
        if (sname == key) {
          if (!ptr->same_shape(tensor)) {
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
          }
          *ptr = tensor;
          found = true;
          break;
        }
      }
      if (!found) throw std::runtime_error("checkpoint: unknown state tensor '" + name + "'");
    } else if (name.rfind("opt/", 0) == 0) {
      if (velocities) velocities->emplace(name.substr(4), tensor);
    } else {
      throw std::runtime_error("checkpoint: unknown tensor namespace in '" + name + "'");
    }
  }
  return net;
}

}  // namespace cornerdet
