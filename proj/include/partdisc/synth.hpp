#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "partdisc/alignment.hpp"
#include "partdisc/feature_map.hpp"
#include "partdisc/manifest.hpp"
#include "partdisc/pseudo_gt.hpp"

namespace partdisc {

// Channel layout of a synthetic backbone vector, in order: one prototype
// direction per part, one distractor direction per part, `regions` region
// directions, and texture dimensions for the rest.
struct SynthParams {
  int n_images = 40;
  int n_parts = 5;
  int channels = 128;
  int grid = 16;
  double noise = 0.05;  // L2 norm of the additive noise per cell, at most 0.1
  std::uint64_t seed = 0;

  int image_size = 224;  // pixels, square
  double box_side = 56;  // GT part box side in pixels

  double scale_min = 0.9;
  double scale_max = 1.1;
  double max_rotation_deg = 10;
  double max_translation = 2;  // cells

  // Parts sit on a ring of this radius (in grid widths) around the center.
  // Transformed parts that leave the grid are clamped onto its border.
  double part_radius = 0.45;
  int regions = 3;
  double texture_strength = 0.1;
  // Each distractor is a * e_p + sqrt(1 - a^2) * u_p with a = distractor_similarity.
  // Placement: "fixed" puts a distractor on the same image cell in every image
  // (it does not follow the object), "near" puts it 2-3 cells from its own
  // part, "random" anywhere free.
  int distractors_per_part = 1;
  double distractor_similarity = 0.8;
  std::string distractor_placement = "near";
};

struct GridCell {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

struct SyntheticScene {
  std::string id;
  FeatureMap backbone;
  std::vector<GridCell> true_parts;  // index = part id
  SpatialTransform applied_transform;  // canonical grid -> this image's grid
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  FeatureMap canonical;  // the template seen through the identity transform
  std::vector<GridCell> canonical_parts;
  std::vector<SyntheticScene> scenes;
};

SyntheticDataset generate_dataset(const SynthParams& params);

// Writes features/<id>.npy and manifest.json under out_dir. GT landmarks are
// named part_<p> at cell centers; part boxes are box_side squares.
DatasetManifest write_dataset(const SyntheticDataset& dataset, const SynthParams& params,
                              const std::filesystem::path& out_dir);

// Literal, unoptimized greedy labelling used as the reference for
// generate_pseudo_gt.
PseudoGT oracle_pseudo_gt(const FeatureMap& mean_map, int cap, int radius);

// Affine least squares through explicitly formed 3x3 normal equations.
SpatialTransform oracle_affine_fit(std::span<const Match> matches);

}  // namespace partdisc
