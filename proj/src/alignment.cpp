#include "partdisc/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include <Eigen/Dense>

#include "partdisc/errors.hpp"

namespace partdisc {
namespace {

constexpr double kDegenerateDet = 1e-9;
constexpr double kBoundsSlack = 1e-9;

int minimal_sample_size(TransformFamily family) {
  switch (family) {
    case TransformFamily::kTranslation:
      return 1;
    case TransformFamily::kAffine:
      return 3;
    case TransformFamily::kHomography:
      return 4;
    case TransformFamily::kNone:
      return 0;
  }
  return 3;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows are L2-normalized cell vectors; zero vectors stay zero.
RowMatrix normalized_rows(const FeatureMap& fm) {
  RowMatrix m(fm.cells(), fm.channels());
  for (int i = 0; i < fm.cells(); ++i) {
    auto v = fm.cell(i);
    double norm = 0.0;
    for (float x : v) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    for (int c = 0; c < fm.channels(); ++c) m(i, c) = norm > 0.0 ? v[c] / norm : 0.0;
  }
  return m;
}

bool collinear(const GridPoint& a, const GridPoint& b, const GridPoint& c) {
  const double cross = (b.row - a.row) * (c.col - a.col) - (b.col - a.col) * (c.row - a.row);
  return std::abs(cross) < kDegenerateDet;
}

// Hartley normalization for the DLT: centroid at origin, mean distance sqrt 2.
Eigen::Matrix3d normalizing_transform(const std::vector<GridPoint>& pts) {
  double mr = 0, mc = 0;
  for (const auto& p : pts) {
    mr += p.row;
    mc += p.col;
  }
  mr /= pts.size();
  mc /= pts.size();
  double dist = 0;
  for (const auto& p : pts) dist += std::hypot(p.row - mr, p.col - mc);
  dist /= pts.size();
  const double s = dist > 0 ? std::sqrt(2.0) / dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * mr, 0, s, -s * mc, 0, 0, 1;
  return t;
}

std::optional<SpatialTransform> solve_minimal(std::span<const Match> matches,
                                              std::span<const int> idx, TransformFamily family) {
  switch (family) {
    case TransformFamily::kTranslation: {
      const Match& m = matches[idx[0]];
      return SpatialTransform::translation(m.dst.row - m.src.row, m.dst.col - m.src.col);
    }
    case TransformFamily::kAffine: {
      const Match &a = matches[idx[0]], &b = matches[idx[1]], &c = matches[idx[2]];
      if (collinear(a.src, b.src, c.src) || collinear(a.dst, b.dst, c.dst)) return std::nullopt;
      Eigen::Matrix3d design;
      design << a.src.row, a.src.col, 1, b.src.row, b.src.col, 1, c.src.row, c.src.col, 1;
      Eigen::Vector3d rows(a.dst.row, b.dst.row, c.dst.row);
      Eigen::Vector3d cols(a.dst.col, b.dst.col, c.dst.col);
      const auto lu = design.fullPivLu();
      const Eigen::Vector3d r = lu.solve(rows);
      const Eigen::Vector3d q = lu.solve(cols);
      SpatialTransform t = SpatialTransform::affine({r(0), r(1), r(2), q(0), q(1), q(2)});
      if (t.is_degenerate()) return std::nullopt;
      return t;
    }
    case TransformFamily::kHomography: {
      std::vector<Match> sample;
      for (int i : idx) sample.push_back(matches[i]);
      for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
          for (int k = j + 1; k < 4; ++k) {
            if (collinear(sample[i].src, sample[j].src, sample[k].src) ||
                collinear(sample[i].dst, sample[j].dst, sample[k].dst)) {
              return std::nullopt;
            }
          }
        }
      }
      SpatialTransform t = fit_homography_dlt(sample);
      if (t.is_degenerate() || !t.matrix().allFinite()) return std::nullopt;
      return t;
    }
    case TransformFamily::kNone:
      return SpatialTransform::identity();
  }
  return std::nullopt;
}

std::vector<int> count_inliers(std::span<const Match> matches, const SpatialTransform& t,
                               double tol) {
  std::vector<int> inliers;
  for (int i = 0; i < static_cast<int>(matches.size()); ++i) {
    const GridPoint p = t.apply(matches[i].src);
    const double d = std::hypot(p.row - matches[i].dst.row, p.col - matches[i].dst.col);
    if (d <= tol) inliers.push_back(i);
  }
  return inliers;
}

SpatialTransform refit(std::span<const Match> matches, const std::vector<int>& inliers,
                       TransformFamily family) {
  std::vector<Match> subset;
  subset.reserve(inliers.size());
  for (int i : inliers) subset.push_back(matches[i]);
  switch (family) {
    case TransformFamily::kTranslation:
      return fit_translation_least_squares(subset);
    case TransformFamily::kAffine:
      return fit_affine_least_squares(subset);
    case TransformFamily::kHomography:
      return fit_homography_dlt(subset);
    case TransformFamily::kNone:
      return SpatialTransform::identity();
  }
  return SpatialTransform::identity();
}

}  // namespace

TransformFamily parse_transform_family(const std::string& name) {
  if (name == "affine") return TransformFamily::kAffine;
  if (name == "translation") return TransformFamily::kTranslation;
  if (name == "homography") return TransformFamily::kHomography;
  if (name == "none") return TransformFamily::kNone;
  throw UsageError("unknown transform family '" + name +
                   "' (expected affine, translation, homography or none)");
}

std::string to_string(TransformFamily family) {
  switch (family) {
    case TransformFamily::kAffine:
      return "affine";
    case TransformFamily::kTranslation:
      return "translation";
    case TransformFamily::kHomography:
      return "homography";
    case TransformFamily::kNone:
      return "none";
  }
  return "affine";
}

SpatialTransform SpatialTransform::affine(const std::array<double, 6>& theta) {
  Eigen::Matrix3d m;
  m << theta[0], theta[1], theta[2], theta[3], theta[4], theta[5], 0, 0, 1;
  return SpatialTransform(m);
}

SpatialTransform SpatialTransform::translation(double d_row, double d_col) {
  return affine({1, 0, d_row, 0, 1, d_col});
}

std::array<double, 6> SpatialTransform::theta() const {
  return {m_(0, 0), m_(0, 1), m_(0, 2), m_(1, 0), m_(1, 1), m_(1, 2)};
}

bool SpatialTransform::is_affine() const {
  return m_(2, 0) == 0.0 && m_(2, 1) == 0.0 && m_(2, 2) == 1.0;
}

GridPoint SpatialTransform::apply(const GridPoint& p) const {
  const Eigen::Vector3d h = m_ * Eigen::Vector3d(p.row, p.col, 1.0);
  if (is_affine()) return {h(0), h(1)};
  return {h(0) / h(2), h(1) / h(2)};
}

bool SpatialTransform::is_degenerate() const {
  if (!m_.allFinite()) return true;
  const double det = is_affine() ? m_.topLeftCorner<2, 2>().determinant() : m_.determinant();
  return std::abs(det) <= kDegenerateDet;
}

SpatialTransform SpatialTransform::inverse() const {
  if (is_degenerate()) throw DataError("degenerate transform (non-invertible)");
  if (is_affine()) {
    const Eigen::Matrix2d a = m_.topLeftCorner<2, 2>();
    const Eigen::Matrix2d ai = a.inverse();
    const Eigen::Vector2d t = -ai * m_.topRightCorner<2, 1>();
    Eigen::Matrix3d inv = Eigen::Matrix3d::Identity();
    inv.topLeftCorner<2, 2>() = ai;
    inv.topRightCorner<2, 1>() = t;
    return SpatialTransform(inv);
  }
  return SpatialTransform(m_.inverse());
}

std::vector<Match> match_features(const FeatureMap& dst_map, const FeatureMap& src_map,
                                  double threshold) {
  if (dst_map.channels() != src_map.channels()) {
    throw UsageError("match_features: channel mismatch");
  }
  const RowMatrix d = normalized_rows(dst_map);
  const RowMatrix s = normalized_rows(src_map);
  const RowMatrix cos = d * s.transpose();
  std::vector<Match> matches;
  for (int i = 0; i < cos.rows(); ++i) {
    const GridPoint dp{static_cast<double>(i / dst_map.width()),
                       static_cast<double>(i % dst_map.width())};
    for (int j = 0; j < cos.cols(); ++j) {
      if (cos(i, j) > threshold) {
        matches.push_back({dp,
                           {static_cast<double>(j / src_map.width()),
                            static_cast<double>(j % src_map.width())},
                           static_cast<float>(cos(i, j))});
      }
    }
  }
  return matches;
}

SpatialTransform fit_affine_least_squares(std::span<const Match> matches) {
  if (matches.size() < 3) throw DataError("affine fit needs at least 3 matches");
  const int n = static_cast<int>(matches.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::MatrixXd target(n, 2);
  for (int i = 0; i < n; ++i) {
    design.row(i) << matches[i].src.row, matches[i].src.col, 1.0;
    target.row(i) << matches[i].dst.row, matches[i].dst.col;
  }
  const auto qr = design.colPivHouseholderQr();
  if (qr.rank() < 3) throw DataError("affine fit: collinear matches");
  const Eigen::MatrixXd sol = qr.solve(target);
  return SpatialTransform::affine(
      {sol(0, 0), sol(1, 0), sol(2, 0), sol(0, 1), sol(1, 1), sol(2, 1)});
}

SpatialTransform fit_translation_least_squares(std::span<const Match> matches) {
  if (matches.empty()) throw DataError("translation fit needs at least 1 match");
  double dr = 0, dc = 0;
  for (const auto& m : matches) {
    dr += m.dst.row - m.src.row;
    dc += m.dst.col - m.src.col;
  }
  return SpatialTransform::translation(dr / matches.size(), dc / matches.size());
}

SpatialTransform fit_homography_dlt(std::span<const Match> matches) {
  if (matches.size() < 4) throw DataError("homography fit needs at least 4 matches");
  std::vector<GridPoint> src, dst;
  for (const auto& m : matches) {
    src.push_back(m.src);
    dst.push_back(m.dst);
  }
  const Eigen::Matrix3d ts = normalizing_transform(src);
  const Eigen::Matrix3d td = normalizing_transform(dst);
  const int n = static_cast<int>(matches.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d s = ts * Eigen::Vector3d(src[i].row, src[i].col, 1);
    const Eigen::Vector3d d = td * Eigen::Vector3d(dst[i].row, dst[i].col, 1);
    a.row(2 * i) << -s(0), -s(1), -1, 0, 0, 0, d(0) * s(0), d(0) * s(1), d(0);
    a.row(2 * i + 1) << 0, 0, 0, -s(0), -s(1), -1, d(1) * s(0), d(1) * s(1), d(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d full = td.inverse() * hn * ts;
  if (std::abs(full(2, 2)) > 1e-12) full /= full(2, 2);
  return SpatialTransform(full);
}

RansacResult ransac_estimate(std::span<const Match> matches, const RansacOptions& options) {
  if (options.family == TransformFamily::kNone) {
    return {SpatialTransform::identity(), count_inliers(matches, {}, options.inlier_tol)};
  }
  const int sample_size = minimal_sample_size(options.family);
  const int n = static_cast<int>(matches.size());
  if (n < sample_size) {
    throw DataError("RANSAC needs at least " + std::to_string(sample_size) + " matches, got " +
                    std::to_string(n));
  }
  std::mt19937_64 rng(options.seed);
  std::vector<int> sample(sample_size);
  std::optional<SpatialTransform> best;
  std::vector<int> best_inliers;

  for (int it = 0; it < options.iterations; ++it) {
    // Draw without replacement by rejection on the few picks we need.
    for (int k = 0; k < sample_size; ++k) {
      while (true) {
        std::uniform_int_distribution<int> pick(0, n - 1);
        const int v = pick(rng);
        if (std::find(sample.begin(), sample.begin() + k, v) == sample.begin() + k) {
          sample[k] = v;
          break;
        }
      }
    }
    const auto hypothesis = solve_minimal(matches, sample, options.family);
    if (!hypothesis) continue;
    std::vector<int> inliers = count_inliers(matches, *hypothesis, options.inlier_tol);
    if (!best || inliers.size() > best_inliers.size()) {
      best = hypothesis;
      best_inliers = std::move(inliers);
    }
  }
  if (!best) {
    throw DataError("RANSAC: every sampled subset was degenerate after " +
                    std::to_string(options.iterations) + " iterations");
  }
  if (static_cast<int>(best_inliers.size()) >= sample_size) {
    try {
      SpatialTransform refined = refit(matches, best_inliers, options.family);
      if (!refined.is_degenerate()) best = refined;
    } catch (const DataError&) {
      // Rank-deficient inlier set; keep the minimal-sample solution.
    }
  }
  return {*best, std::move(best_inliers)};
}

RansacResult ransac_affine(std::span<const Match> matches, int iterations, double inlier_tol,
                           std::uint64_t seed) {
  return ransac_estimate(matches, {TransformFamily::kAffine, iterations, inlier_tol, seed});
}

WarpPlan make_warp_plan(const SpatialTransform& transform, int src_h, int src_w, int dst_h,
                        int dst_w) {
  const SpatialTransform inv = transform.inverse();
  WarpPlan plan;
  plan.src_h = src_h;
  plan.src_w = src_w;
  plan.dst_h = dst_h;
  plan.dst_w = dst_w;
  const std::size_t cells = static_cast<std::size_t>(dst_h) * dst_w;
  plan.taps.assign(cells, {0, 0, 0, 0});
  plan.weights.assign(cells, {0, 0, 0, 0});
  plan.validity = CellMask(dst_h, dst_w, false);
  for (int y = 0; y < dst_h; ++y) {
    for (int x = 0; x < dst_w; ++x) {
      const GridPoint s = inv.apply({static_cast<double>(y), static_cast<double>(x)});
      if (!std::isfinite(s.row) || !std::isfinite(s.col)) continue;
      if (s.row < -kBoundsSlack || s.row > src_h - 1 + kBoundsSlack || s.col < -kBoundsSlack ||
          s.col > src_w - 1 + kBoundsSlack) {
        continue;
      }
      const double r = std::clamp(s.row, 0.0, static_cast<double>(src_h - 1));
      const double c = std::clamp(s.col, 0.0, static_cast<double>(src_w - 1));
      const int r0 = std::min(static_cast<int>(std::floor(r)), src_h - 1);
      const int c0 = std::min(static_cast<int>(std::floor(c)), src_w - 1);
      const int r1 = std::min(r0 + 1, src_h - 1);
      const int c1 = std::min(c0 + 1, src_w - 1);
      const double fr = r - r0, fc = c - c0;
      const std::size_t k = static_cast<std::size_t>(y) * dst_w + x;
      plan.taps[k] = {r0 * src_w + c0, r0 * src_w + c1, r1 * src_w + c0, r1 * src_w + c1};
      plan.weights[k] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
      plan.validity.valid[k] = 1;
    }
  }
  return plan;
}

FeatureMap apply_warp(const WarpPlan& plan, const FeatureMap& src) {
  if (src.height() != plan.src_h || src.width() != plan.src_w) {
    throw UsageError("apply_warp: source shape does not match plan");
  }
  const int c = src.channels();
  FeatureMap out(plan.dst_h, plan.dst_w, c);
  for (std::size_t k = 0; k < plan.taps.size(); ++k) {
    if (!plan.validity.valid[k]) continue;
    const auto& t = plan.taps[k];
    const auto& w = plan.weights[k];
    float* dst = out.data().data() + k * c;
    for (int ch = 0; ch < c; ++ch) {
      double v = 0;
      for (int j = 0; j < 4; ++j) {
        if (w[j] != 0.0) v += w[j] * src.data()[static_cast<std::size_t>(t[j]) * c + ch];
      }
      dst[ch] = static_cast<float>(v);
    }
  }
  return out;
}

WarpedMap warp_to_canvas(const FeatureMap& src_map, const SpatialTransform& transform, int dst_h,
                         int dst_w) {
  if (transform.is_degenerate()) throw DataError("warp_to_canvas: degenerate transform");
  WarpPlan plan = make_warp_plan(transform, src_map.height(), src_map.width(), dst_h, dst_w);
  FeatureMap warped = apply_warp(plan, src_map);
  return {std::move(warped), std::move(plan.validity)};
}

AlignmentEstimate estimate_alignment(const FeatureMap& dst_normalized,
                                     const FeatureMap& src_normalized,
                                     const AlignmentOptions& options) {
  AlignmentEstimate est;
  est.fallback = true;
  if (options.family == TransformFamily::kNone) return est;

  const std::vector<Match> matches =
      match_features(dst_normalized, src_normalized, options.cosine_threshold);
  est.match_count = static_cast<int>(matches.size());
  const int needed = std::max(options.min_inliers, minimal_sample_size(options.family));
  if (est.match_count < needed) return est;

  RansacResult r;
  try {
    r = ransac_estimate(matches, {options.family, options.iterations, options.inlier_tol,
                                  options.seed});
  } catch (const DataError&) {
    return est;
  }
  est.inlier_count = static_cast<int>(r.inliers.size());
  if (est.inlier_count < options.min_inliers || r.transform.is_degenerate()) return est;
  est.transform = r.transform;
  est.fallback = false;
  return est;
}

}  // namespace partdisc
