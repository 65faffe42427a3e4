#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "partdisc/detect.hpp"

namespace partdisc {

enum class MatchRule { kIoU, kL2 };

// kIoU: a detection matches a GT box when IoU >= threshold.
// kL2: a detection center matches a GT point when the distance divided by
// max(image_h, image_w) is < threshold.
struct MatchCriterion {
  MatchRule rule = MatchRule::kIoU;
  double threshold = 0.5;
};

struct GtInstance {
  Box box;
  double x = 0;
  double y = 0;
};

struct ScoredDetection {
  double score = 0;
  Box box;
  double x = 0;
  double y = 0;
};

struct EvalImage {
  int image_h = 1;
  int image_w = 1;
  std::vector<ScoredDetection> dets;
  std::vector<GtInstance> gts;
};

// VOC all-point interpolated AP. Detections are visited by descending score
// across all images (ties by image then input order); each takes the
// best-matching unclaimed GT of its image. Empty when there is no GT at all.
std::optional<double> average_precision(std::span<const EvalImage> images,
                                        const MatchCriterion& criterion);

struct ChannelPartAssignment {
  std::vector<int> part_to_channel;
  std::vector<std::vector<double>> ap_table;  // [channel][part]
};

// Each part takes its argmax-AP channel, ties to the lower channel index.
ChannelPartAssignment assign_channels(const std::vector<std::vector<double>>& ap_table);

// Affine map from peak features to landmark coordinates. Row 0..n_features-1
// of `coefficients` weighs the features; the last row is the bias.
struct LandmarkRegressor {
  Eigen::MatrixXd coefficients;  // (n_features + 1) x n_outputs

  Eigen::VectorXd predict(const Eigen::VectorXd& features) const;
};

// Ridge least squares; the bias is not damped.
LandmarkRegressor fit_landmark_regressor(const Eigen::MatrixXd& features,
                                         const Eigen::MatrixXd& targets, double ridge);

struct Point2 {
  double x = 0;
  double y = 0;
};

// Mean of |pred - gt| / normalizer over landmarks, in percent.
double normalized_error(std::span<const Point2> pred, std::span<const Point2> gt,
                        double normalizer);

}  // namespace partdisc
