#include "partdisc/detect.hpp"

#include <algorithm>
#include <numeric>

#include "partdisc/errors.hpp"

namespace partdisc {

std::vector<Detection> extract_peaks(const FeatureMap& part_map, int image_h, int image_w,
                                     double score_threshold, double box_side) {
  if (part_map.channels() < 2) throw DataError("extract_peaks: need a background channel");
  if (image_h < 1 || image_w < 1) throw UsageError("extract_peaks: empty image size");
  if (box_side <= 0) throw UsageError("extract_peaks: box_side must be positive");
  const int h = part_map.height(), w = part_map.width();
  const double sy = static_cast<double>(image_h) / h;
  const double sx = static_cast<double>(image_w) / w;
  std::vector<Detection> out;
  for (int ch = 0; ch + 1 < part_map.channels(); ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float v = part_map.at(y, x, ch);
        if (v < score_threshold) continue;
        bool peak = true;
        for (int dy = -1; dy <= 1 && peak; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
            if (part_map.at(ny, nx, ch) >= v) {
              peak = false;
              break;
            }
          }
        }
        if (!peak) continue;
        Detection d;
        d.channel = ch;
        d.x = (x + 0.5) * sx;
        d.y = (y + 0.5) * sy;
        d.score = v;
        const double half = box_side / 2;
        d.box = {std::max(0.0, d.x - half), std::max(0.0, d.y - half),
                 std::min<double>(image_w, d.x + half), std::min<double>(image_h, d.y + half)};
        out.push_back(d);
      }
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

double iou(const Box& a, const Box& b) {
  if (!(a.x2 > a.x1 && a.y2 > a.y1 && b.x2 > b.x1 && b.y2 > b.y1)) {
    throw DataError("iou: degenerate box");
  }
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
  std::vector<char> kept(dets.size(), 0);
  std::vector<int> kept_list;
  for (int i : order) {
    bool keep = true;
    for (int j : kept_list) {
      if (dets[j].channel == dets[i].channel && iou(dets[j].box, dets[i].box) >= iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) {
      kept[i] = 1;
      kept_list.push_back(i);
    }
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (kept[i]) out.push_back(dets[i]);
  }
  return out;
}

}  // namespace partdisc
