#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "partdisc/feature_map.hpp"

namespace partdisc {

// Real-valued grid coordinate; integer values are cell centers.
struct GridPoint {
  double row = 0;
  double col = 0;
};

// A correspondence between a cell of the destination (training image) map and
// a cell of the source (similar image) map.
struct Match {
  GridPoint dst;
  GridPoint src;
  float score = 0;
};

enum class TransformFamily { kAffine, kTranslation, kHomography, kNone };

TransformFamily parse_transform_family(const std::string& name);
std::string to_string(TransformFamily family);

// Planar transform acting on homogeneous (row, col, 1) source coordinates and
// producing destination coordinates. Affine and translation transforms keep
// the bottom row at (0, 0, 1).
class SpatialTransform {
 public:
  SpatialTransform() : m_(Eigen::Matrix3d::Identity()) {}
  explicit SpatialTransform(const Eigen::Matrix3d& m) : m_(m) {}

  static SpatialTransform identity() { return {}; }
  // theta is the 2x3 block [[a, b, t_row], [c, d, t_col]] in row-major order.
  static SpatialTransform affine(const std::array<double, 6>& theta);
  static SpatialTransform translation(double d_row, double d_col);

  const Eigen::Matrix3d& matrix() const { return m_; }
  std::array<double, 6> theta() const;
  bool is_affine() const;

  GridPoint apply(const GridPoint& p) const;
  // |det| of the linear block (affine) or of the full matrix (projective)
  // must exceed 1e-9.
  bool is_degenerate() const;
  SpatialTransform inverse() const;

 private:
  Eigen::Matrix3d m_;
};

// Every (dst cell, src cell) pair whose cosine similarity is strictly above
// `threshold`. A zero vector has cosine 0 with everything.
std::vector<Match> match_features(const FeatureMap& dst_map, const FeatureMap& src_map,
                                  double threshold);

struct RansacResult {
  SpatialTransform transform;
  std::vector<int> inliers;  // indices into the match list, ascending
};

struct RansacOptions {
  TransformFamily family = TransformFamily::kAffine;
  int iterations = 100;
  double inlier_tol = 1.0;
  std::uint64_t seed = 0;
};

// Minimal-sample RANSAC: each iteration draws the family's minimal sample
// without replacement, solves it exactly and counts matches within
// inlier_tol. The hypothesis with the most inliers (first found on ties) is
// re-fit by least squares on its inlier set. Deterministic for a given seed.
RansacResult ransac_estimate(std::span<const Match> matches, const RansacOptions& options);

RansacResult ransac_affine(std::span<const Match> matches, int iterations, double inlier_tol,
                           std::uint64_t seed);

// Least-squares fits over all given matches (no sampling).
SpatialTransform fit_affine_least_squares(std::span<const Match> matches);
SpatialTransform fit_translation_least_squares(std::span<const Match> matches);
SpatialTransform fit_homography_dlt(std::span<const Match> matches);

// Inverse-warp sampling plan: for every destination cell, four bilinear taps
// into the source grid plus a validity flag. The same plan drives the forward
// warp and its transpose during backpropagation.
struct WarpPlan {
  int src_h = 0, src_w = 0, dst_h = 0, dst_w = 0;
  std::vector<std::array<int, 4>> taps;        // linear source cell indices
  std::vector<std::array<double, 4>> weights;  // zero for invalid cells
  CellMask validity;
};

WarpPlan make_warp_plan(const SpatialTransform& transform, int src_h, int src_w, int dst_h,
                        int dst_w);
FeatureMap apply_warp(const WarpPlan& plan, const FeatureMap& src);

struct WarpedMap {
  FeatureMap warped;
  CellMask validity;
};

// Out-of-bounds destination cells get value 0 and validity false.
WarpedMap warp_to_canvas(const FeatureMap& src_map, const SpatialTransform& transform, int dst_h,
                         int dst_w);

struct AlignmentOptions {
  TransformFamily family = TransformFamily::kAffine;
  double cosine_threshold = 0.6;
  int iterations = 100;
  double inlier_tol = 1.0;
  int min_inliers = 6;
  std::uint64_t seed = 0;
};

struct AlignmentEstimate {
  SpatialTransform transform;
  int match_count = 0;
  int inlier_count = 0;
  bool fallback = false;  // true when the identity was substituted
};

// Matches two max-normalized maps and runs RANSAC. Too few matches or
// inliers, or a degenerate fit, falls back to the identity transform.
AlignmentEstimate estimate_alignment(const FeatureMap& dst_normalized,
                                     const FeatureMap& src_normalized,
                                     const AlignmentOptions& options);

}  // namespace partdisc
