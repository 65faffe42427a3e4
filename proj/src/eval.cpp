#include "partdisc/eval.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "partdisc/errors.hpp"

namespace partdisc {

std::optional<double> average_precision(std::span<const EvalImage> images,
                                        const MatchCriterion& criterion) {
  struct Ref {
    double score;
    int image;
    int det;
  };
  std::vector<Ref> order;
  std::size_t n_gt = 0;
  for (int i = 0; i < static_cast<int>(images.size()); ++i) {
    n_gt += images[i].gts.size();
    for (int d = 0; d < static_cast<int>(images[i].dets.size()); ++d) {
      order.push_back({images[i].dets[d].score, i, d});
    }
  }
  if (n_gt == 0) return std::nullopt;
  std::stable_sort(order.begin(), order.end(),
                   [](const Ref& a, const Ref& b) { return a.score > b.score; });

  std::vector<std::vector<char>> claimed(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) claimed[i].assign(images[i].gts.size(), 0);

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const Ref& r : order) {
    const EvalImage& im = images[r.image];
    const ScoredDetection& det = im.dets[r.det];
    int best = -1;
    double best_quality = 0;
    for (int g = 0; g < static_cast<int>(im.gts.size()); ++g) {
      if (claimed[r.image][g]) continue;
      if (criterion.rule == MatchRule::kIoU) {
        const double q = iou(det.box, im.gts[g].box);
        if (q >= criterion.threshold && (best < 0 || q > best_quality)) {
          best = g;
          best_quality = q;
        }
      } else {
        const double dist = std::hypot(det.x - im.gts[g].x, det.y - im.gts[g].y) /
                            std::max(im.image_h, im.image_w);
        if (dist < criterion.threshold && (best < 0 || -dist > best_quality)) {
          best = g;
          best_quality = -dist;
        }
      }
    }
    if (best >= 0) {
      claimed[r.image][best] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / n_gt);
  }

  // All-point interpolation: precision envelope integrated over recall steps.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

ChannelPartAssignment assign_channels(const std::vector<std::vector<double>>& ap_table) {
  if (ap_table.empty() || ap_table[0].empty()) throw DataError("assign_channels: empty table");
  const std::size_t parts = ap_table[0].size();
  for (const auto& row : ap_table) {
    if (row.size() != parts) throw DataError("assign_channels: ragged table");
  }
  ChannelPartAssignment out;
  out.ap_table = ap_table;
  for (std::size_t p = 0; p < parts; ++p) {
    int best = 0;
    for (std::size_t c = 1; c < ap_table.size(); ++c) {
      if (ap_table[c][p] > ap_table[best][p]) best = static_cast<int>(c);
    }
    out.part_to_channel.push_back(best);
  }
  return out;
}

Eigen::VectorXd LandmarkRegressor::predict(const Eigen::VectorXd& features) const {
  const Eigen::Index n = coefficients.rows() - 1;
  if (features.size() != n) throw DataError("LandmarkRegressor: feature length mismatch");
  return coefficients.topRows(n).transpose() * features + coefficients.row(n).transpose();
}

LandmarkRegressor fit_landmark_regressor(const Eigen::MatrixXd& features,
                                         const Eigen::MatrixXd& targets, double ridge) {
  if (features.rows() != targets.rows() || features.rows() == 0) {
    throw DataError("fit_landmark_regressor: feature and target rows differ or are empty");
  }
  if (ridge < 0) throw UsageError("fit_landmark_regressor: negative ridge");
  const Eigen::Index n = features.rows(), f = features.cols();
  Eigen::MatrixXd x(n, f + 1);
  x.leftCols(f) = features;
  x.col(f).setOnes();
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().head(f).array() += ridge;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-14 * std::max(1.0, gram.diagonal().maxCoeff())) {
    throw DataError("fit_landmark_regressor: degenerate design matrix");
  }
  LandmarkRegressor r;
  r.coefficients = ldlt.solve(x.transpose() * targets);
  if (!r.coefficients.allFinite()) throw DataError("fit_landmark_regressor: degenerate design matrix");
  return r;
}

double normalized_error(std::span<const Point2> pred, std::span<const Point2> gt,
                        double normalizer) {
  if (pred.size() != gt.size()) throw DataError("normalized_error: landmark count mismatch");
  if (!(normalizer > 0)) throw DataError("normalized_error: zero normalizer");
  if (pred.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sum += std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
  }
  return sum / pred.size() / normalizer * 100.0;
}

}  // namespace partdisc
