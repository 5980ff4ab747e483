#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cornerdet/annotations.hpp"
#include "cornerdet/datagen.hpp"
#include "cornerdet/image_io.hpp"

namespace cornerdet {

// On-disk layout: <dir>/annotations.txt plus <dir>/images/<id>.ppm.
inline void write_dataset(const std::string& dir, const std::vector<SceneSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::vector<SceneRecord> records;
  records.reserve(samples.size());
  for (const SceneSample& s : samples) {
    write_ppm((fs::path(dir) / "images" / (s.id + ".ppm")).string(), s.image);
    records.push_back({s.id, s.annotations});
  }
  write_annotations((fs::path(dir) / "annotations.txt").string(), records);
}

inline std::vector<SceneSample> load_dataset(const std::string& dir, int class_count) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::exists(root / "annotations.txt")) {
    throw std::runtime_error("load_dataset: no annotations.txt under '" + dir + "'");
  }
  auto records = read_annotations((root / "annotations.txt").string(), class_count);
  std::vector<SceneSample> samples;
  samples.reserve(records.size());
  for (const SceneRecord& r : records) {
    SceneSample s;
    s.id = r.image_id;
    s.image = read_ppm((root / "images" / (r.image_id + ".ppm")).string());
    s.annotations = r.annotations;
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace cornerdet
