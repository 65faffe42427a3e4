#pragma once

#include <span>
#include <vector>

#include "partdisc/feature_map.hpp"

namespace partdisc {

// Pixel-space box, x1 < x2 and y1 < y2.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double area() const { return (x2 - x1) * (y2 - y1); }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  int channel = 0;
  double x = 0;  // peak center in pixels
  double y = 0;
  double score = 0;
  Box box;

  friend bool operator==(const Detection&, const Detection&) = default;
};

// Strict 8-neighbour local maxima of every non-background channel (the last
// channel is skipped) scoring at least score_threshold. Cell centers are
// scaled to pixels; the box is a box_side square around the center, clipped
// to the image. Sorted by descending score, ties by (channel, cell order).
std::vector<Detection> extract_peaks(const FeatureMap& part_map, int image_h, int image_w,
                                     double score_threshold, double box_side);

// Throws on boxes with non-positive width or height.
double iou(const Box& a, const Box& b);

// Greedy per-channel suppression: within a channel, visit by descending
// score (ties keep input order) and drop anything overlapping a kept box with
// IoU >= iou_threshold. Output keeps the input's relative order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

}  // namespace partdisc
