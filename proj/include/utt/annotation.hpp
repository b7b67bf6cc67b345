// Per-frame labelled boxes shared by the data, tracking and metric code.
#pragma once

#include <algorithm>
#include <vector>

#include "utt/geometry.hpp"

namespace utt {

/// Corner box (x1, y1, x2, y2) in image pixels.
using Box = Eigen::Matrix<double, 1, 4>;

struct Annotation {
  int id = 0;
  Box box = Box::Zero();
  double score = 1.0;
  int category = 1;
  double visibility = 1.0;
};

using FrameAnnotations = std::vector<Annotation>;
/// Indexed by 0-based frame.
using SequenceAnnotations = std::vector<FrameAnnotations>;

inline Box make_box(double x1, double y1, double x2, double y2) {
  Box b;
  b << x1, y1, x2, y2;
  return b;
}

inline Box clip_box(const Box& b, double width, double height) {
  Box c;
  c(0) = std::clamp(b(0), 0.0, width);
  c(1) = std::clamp(b(1), 0.0, height);
  c(2) = std::clamp(b(2), c(0), width);
  c(3) = std::clamp(b(3), c(1), height);
  return c;
}

}  // namespace utt
