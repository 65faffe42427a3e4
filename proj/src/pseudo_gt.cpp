#include "partdisc/pseudo_gt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "partdisc/errors.hpp"

namespace partdisc {

FeatureMap average_aligned(std::span<const FeatureMap> maps, std::span<const CellMask> masks) {
  if (maps.empty()) throw UsageError("average_aligned: empty map list");
  if (masks.size() != maps.size()) throw UsageError("average_aligned: one mask per map required");
  const FeatureMap& first = maps[0];
  for (std::size_t m = 0; m < maps.size(); ++m) {
    if (!maps[m].same_shape(first)) throw DataError("average_aligned: map shape mismatch");
    if (masks[m].height != first.height() || masks[m].width != first.width()) {
      throw DataError("average_aligned: mask shape mismatch");
    }
  }
  const int c = first.channels();
  FeatureMap out(first.height(), first.width(), c);
  std::vector<double> acc(c);
  for (int k = 0; k < first.cells(); ++k) {
    std::fill(acc.begin(), acc.end(), 0.0);
    int count = 0;
    for (std::size_t m = 0; m < maps.size(); ++m) {
      if (!masks[m].valid[k]) continue;
      auto v = maps[m].cell(k);
      for (int ch = 0; ch < c; ++ch) acc[ch] += v[ch];
      ++count;
    }
    float* dst = out.data().data() + static_cast<std::size_t>(k) * c;
    if (count == 0) {
      auto v = first.cell(k);
      std::copy(v.begin(), v.end(), dst);
    } else {
      for (int ch = 0; ch < c; ++ch) dst[ch] = static_cast<float>(acc[ch] / count);
    }
  }
  return out;
}

PseudoGT generate_pseudo_gt(const FeatureMap& mean_map, int max_per_channel, int suppress_radius) {
  const int h = mean_map.height(), w = mean_map.width(), c = mean_map.channels();
  if (c < 2) throw DataError("generate_pseudo_gt: need at least 2 channels");
  if (max_per_channel < 1) throw UsageError("generate_pseudo_gt: max_per_channel must be >= 1");
  if (suppress_radius < 0) throw UsageError("generate_pseudo_gt: negative suppress_radius");
  for (float v : mean_map.data()) {
    if (!(v >= 0.0f) || !std::isfinite(v)) {
      throw DataError("generate_pseudo_gt: mean map values must be finite and non-negative");
    }
  }
  const int background = c - 1;
  const int cells = h * w;
  constexpr float kRetired = -1.0f;

  std::vector<float> work = mean_map.data();
  std::vector<unsigned char> alive(cells, 1);
  std::vector<float> best_val(cells);
  std::vector<int> best_ch(cells);
  auto refresh = [&](int k) {
    const float* v = work.data() + static_cast<std::size_t>(k) * c;
    const float* top = std::max_element(v, v + c);
    best_val[k] = *top;
    best_ch[k] = static_cast<int>(top - v);
  };
  for (int k = 0; k < cells; ++k) refresh(k);

  PseudoGT gt{h, w, std::vector<int>(cells, -1)};
  std::vector<int> count(c, 0);
  for (int step = 0; step < cells; ++step) {
    int pick = -1;
    for (int k = 0; k < cells; ++k) {
      if (alive[k] && (pick < 0 || best_val[k] > best_val[pick])) pick = k;
    }
    const int ch = best_ch[pick];
    gt.labels[pick] = ch;
    alive[pick] = 0;
    std::fill_n(work.begin() + static_cast<std::ptrdiff_t>(pick) * c, c, kRetired);

    if (ch == background) {
      ++count[ch];
      continue;
    }
    if (suppress_radius > 0) {
      const int py = pick / w, px = pick % w;
      for (int y = std::max(0, py - suppress_radius); y <= std::min(h - 1, py + suppress_radius);
           ++y) {
        for (int x = std::max(0, px - suppress_radius);
             x <= std::min(w - 1, px + suppress_radius); ++x) {
          const int k = y * w + x;
          work[static_cast<std::size_t>(k) * c + ch] = kRetired;
          if (alive[k] && best_ch[k] == ch) refresh(k);
        }
      }
    }
    if (++count[ch] == max_per_channel) {
      for (int k = 0; k < cells; ++k) {
        work[static_cast<std::size_t>(k) * c + ch] = kRetired;
        if (alive[k] && best_ch[k] == ch) refresh(k);
      }
    }
  }
  return gt;
}

void write_pseudo_gt_pgm(const std::filesystem::path& path, const PseudoGT& gt, int channels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << gt.width << " " << gt.height << "\n255\n";
  const double scale = channels > 1 ? 255.0 / (channels - 1) : 0.0;
  for (int label : gt.labels) {
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::max(label, 0) * scale))));
  }
}

}  // namespace partdisc
