#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace upt {

// Axis-aligned box in normalized image coordinates, center-size form.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

// Width/height floor applied before any ratio so degenerate boxes cannot
// overflow aspect ratios or center-offset normalization.
inline constexpr double kMinBoxExtent = 1e-6;

inline bool box_valid(const Box& b) {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  return in01(b.cx) && in01(b.cy) && in01(b.w) && in01(b.h) && b.w > 0.0 && b.h > 0.0;
}

// (xmin, ymin, xmax, ymax)
inline std::array<double, 4> to_corners(const Box& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

inline Box from_corners(double xmin, double ymin, double xmax, double ymax) {
  return {(xmin + xmax) / 2.0, (ymin + ymax) / 2.0, xmax - xmin, ymax - ymin};
}

inline double box_area(const Box& b) { return b.w * b.h; }

inline double iou(const Box& a, const Box& b) {
  auto ca = to_corners(a);
  auto cb = to_corners(b);
  double iw = std::min(ca[2], cb[2]) - std::max(ca[0], cb[0]);
  double ih = std::min(ca[3], cb[3]) - std::max(ca[1], cb[1]);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  double inter = iw * ih;
  double uni = box_area(a) + box_area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Unary spatial terms for an ordered box pair:
//   b1 ++ b2 ++ [w1*h1, w2*h2, w1/h1, w2/h2]
inline std::array<double, 12> unary_terms(const Box& b1, const Box& b2) {
  double w1 = std::max(b1.w, kMinBoxExtent), h1 = std::max(b1.h, kMinBoxExtent);
  double w2 = std::max(b2.w, kMinBoxExtent), h2 = std::max(b2.h, kMinBoxExtent);
  return {b1.cx, b1.cy, b1.w, b1.h, b2.cx, b2.cy, b2.w, b2.h,
          w1 * h1, w2 * h2, w1 / h1, w2 / h2};
}

// Pairwise spatial terms; b1 is the human box and its dimensions normalize
// the center offsets:
//   [area1/area2, IoU, relu(dx), relu(-dx), relu(dy), relu(-dy)]
// with dx = (x1-x2)/w1, dy = (y1-y2)/h1.
inline std::array<double, 6> pairwise_terms(const Box& b1, const Box& b2) {
  double w1 = std::max(b1.w, kMinBoxExtent), h1 = std::max(b1.h, kMinBoxExtent);
  double w2 = std::max(b2.w, kMinBoxExtent), h2 = std::max(b2.h, kMinBoxExtent);
  double dx = (b1.cx - b2.cx) / w1;
  double dy = (b1.cy - b2.cy) / h1;
  auto pos = [](double v) { return v > 0.0 ? v : 0.0; };
  return {(w1 * h1) / (w2 * h2), iou(b1, b2), pos(dx), pos(-dx), pos(dy), pos(-dy)};
}

}  // namespace upt
