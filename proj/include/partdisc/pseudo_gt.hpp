#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "partdisc/feature_map.hpp"

namespace partdisc {

// Per-cell channel labels, row-major.
struct PseudoGT {
  int height = 0;
  int width = 0;
  std::vector<int> labels;

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const PseudoGT&, const PseudoGT&) = default;
};

// Per-cell mean over the maps whose mask is set at that cell. A cell with no
// valid contributor copies maps[0] (the training image's own map).
FeatureMap average_aligned(std::span<const FeatureMap> maps, std::span<const CellMask> masks);

// Greedy label assignment on the averaged map: repeatedly take the global
// maximum of the working tensor, label its cell with its channel, retire the
// cell, and retire a non-background channel once it has been used
// max_per_channel times. With suppress_radius > 0 the chosen non-background
// channel is also retired in the surrounding (2r+1)^2 square. The last
// channel is background and is never retired. Ties resolve to the smallest
// row-major (h, w, c) index.
PseudoGT generate_pseudo_gt(const FeatureMap& mean_map, int max_per_channel, int suppress_radius);

// Debug dump: binary PGM, gray value = channel index scaled to 0..255.
void write_pseudo_gt_pgm(const std::filesystem::path& path, const PseudoGT& gt, int channels);

}  // namespace partdisc
