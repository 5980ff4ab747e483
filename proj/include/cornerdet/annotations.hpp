#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cornerdet/bbox.hpp"

namespace cornerdet {

// Annotations of one image in the text dataset format.
struct SceneRecord {
  std::string image_id;
  std::vector<Annotation> annotations;
};

// Text format, one instance per line: `image_id class_id x1 y1 x2 y2`.
// Lines starting with '#' are comments.
inline void write_annotations(const std::string& path, const std::vector<SceneRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_annotations: cannot open '" + path + "'");
  out << "# image_id class_id x1 y1 x2 y2\n";
  out << std::setprecision(17);
  for (const SceneRecord& r : records) {
    for (const Annotation& a : r.annotations) {
      out << r.image_id << ' ' << a.class_id << ' ' << a.box.x1 << ' ' << a.box.y1 << ' ' << a.box.x2 << ' '
          << a.box.y2 << '\n';
    }
  }
  if (!out) throw std::runtime_error("write_annotations: short write to '" + path + "'");
}

inline std::vector<SceneRecord> read_annotations(const std::string& path, int class_count) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_annotations: cannot open '" + path + "'");
  std::vector<SceneRecord> records;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error("read_annotations: " + path + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string id;
    Annotation a;
    if (!(ls >> id >> a.class_id >> a.box.x1 >> a.box.y1 >> a.box.x2 >> a.box.y2)) {
      fail("malformed line '" + line + "'");
    }
    std::string extra;
    if (ls >> extra) fail("trailing tokens '" + extra + "'");
    if (a.class_id < 0 || a.class_id >= class_count) {
      fail("unknown class id " + std::to_string(a.class_id));
    }
    if (!(a.box.x2 > a.box.x1)) fail("box has x2 <= x1");
    if (!(a.box.y2 > a.box.y1)) fail("box has y2 <= y1");
    if (records.empty() || records.back().image_id != id) {
      bool seen = false;
      for (auto& r : records) {
        if (r.image_id == id) {
          r.annotations.push_back(a);
          seen = true;
          break;
        }
      }
      if (!seen) records.push_back({id, {a}});
    } else {
      records.back().annotations.push_back(a);
    }
  }
  return records;
}

}  // namespace cornerdet
