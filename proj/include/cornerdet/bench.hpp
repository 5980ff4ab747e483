#pragma once

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cornerdet/detector.hpp"

namespace cornerdet {

// Mean per-image wall clock of the four pipeline stages, in milliseconds.
struct TimingBreakdown {
  double estimate_corners_ms = 0;
  double generate_roi_ms = 0;
  double classify_roi_ms = 0;
  double estimate_instances_ms = 0;
  double total_ms = 0;
  int images = 0;

  double stage_sum_ms() const {
    return estimate_corners_ms + generate_roi_ms + classify_roi_ms + estimate_instances_ms;
  }
};

// Times the detection pipeline over a dataset. The first batch is run and
// discarded as warm-up, then every image is timed.
inline TimingBreakdown timing_run(Network<float>& net, const std::vector<SceneSample>& data, int batch_size,
                                  const DetectOptions& opts = {}) {
  if (data.empty()) throw std::invalid_argument("timing_run: empty dataset");
  const int S = net.config().input_size;
  const int n = static_cast<int>(data.size());
  const int64_t per_image = static_cast<int64_t>(3) * S * S;
  AugmentConfig aug;
  aug.input_size = S;
  Rng dummy(0);

  auto make_batch = [&](int start, int bsz) {
    Tensor<float> batch({bsz, 3, S, S});
    for (int i = 0; i < bsz; ++i) {
      AugmentedSample prepared = augment_sample(data[static_cast<size_t>(start + i)].image,
                                                data[static_cast<size_t>(start + i)].annotations, dummy,
                                                Mode::kEval, aug);
      for (int64_t j = 0; j < per_image; ++j) batch[static_cast<int64_t>(i) * per_image + j] = prepared.image[j];
    }
    return batch;
  };

  {
    const int warm = std::min(batch_size, n);
    Tensor<float> batch = make_batch(0, warm);
    detect_batch(net, batch, opts);
  }

  StageTimes times;
  double total_seconds = 0;  // measured independently around each batch
  for (int start = 0; start < n; start += batch_size) {
    const int bsz = std::min(batch_size, n - start);
    Tensor<float> batch = make_batch(start, bsz);
    const auto t0 = std::chrono::steady_clock::now();
    detect_batch(net, batch, opts, &times);
    const auto t1 = std::chrono::steady_clock::now();
    total_seconds += std::chrono::duration<double>(t1 - t0).count();
  }

  TimingBreakdown out;
  out.images = times.images;
  const double to_ms = 1000.0 / times.images;
  out.estimate_corners_ms = times.estimate_corners * to_ms;
  out.generate_roi_ms = times.generate_roi * to_ms;
  out.classify_roi_ms = times.classify_roi * to_ms;
  out.estimate_instances_ms = times.estimate_instances * to_ms;
  out.total_ms = total_seconds * to_ms;
  return out;
}

inline std::string timing_csv(const TimingBreakdown& t) {
  std::ostringstream os;
  os.precision(6);
  os << "stage,ms_per_image,share\n";
  const double total = t.total_ms > 0 ? t.total_ms : 1;
  os << "estimate_corners," << t.estimate_corners_ms << ',' << t.estimate_corners_ms / total << "\n";
  os << "generate_roi," << t.generate_roi_ms << ',' << t.generate_roi_ms / total << "\n";
  os << "classify_roi," << t.classify_roi_ms << ',' << t.classify_roi_ms / total << "\n";
  os << "estimate_instances," << t.estimate_instances_ms << ',' << t.estimate_instances_ms / total << "\n";
  os << "total," << t.total_ms << ",1\n";
  return os.str();
}

}  // namespace cornerdet
