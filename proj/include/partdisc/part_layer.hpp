#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "partdisc/feature_map.hpp"
#include "partdisc/pseudo_gt.hpp"

namespace partdisc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// The trainable 1x1 part head. Row j of `weights` is the prototype of part
// channel j; the last row is the background channel.
struct PartLayer {
  RowMatrix weights;  // c_o x c_i

  int in_channels() const { return static_cast<int>(weights.cols()); }
  int out_channels() const { return static_cast<int>(weights.rows()); }
};

// Backbone vectors gathered for clustering, one row per vector.
struct VectorSample {
  int dim = 0;
  std::vector<float> values;  // count x dim, row-major

  int count() const { return dim > 0 ? static_cast<int>(values.size() / dim) : 0; }
};

struct KMeansOptions {
  int max_iterations = 100;
  int restarts = 4;  // best-of-n by total cosine similarity
};

// Spherical k-means with k-means++ seeding on L2-normalized vectors (zero
// vectors are dropped). Rows 0..k-1 of the result are the unit-norm centers;
// row k is a zero background row, so c_o = k + 1.
PartLayer init_from_clusters(const VectorSample& sample, int k_clusters, std::uint64_t seed,
                             const KMeansOptions& options = {});

// L2-normalizes every backbone cell vector (zeros stay zero), takes the dot
// product with each weight row and applies a softmax over the c_o logits.
FeatureMap forward(const FeatureMap& backbone, const PartLayer& layer);

// Clamp applied inside the log of the NLL loss.
inline constexpr double kLogFloor = 1e-8;

struct NllResult {
  double loss = 0;
  std::vector<double> gradient;  // same layout as the mean map
};

// Mean over cells of -log(max(mean[cell][label], kLogFloor)) and its gradient
// with respect to the mean map (zero at clamped entries).
NllResult nll_loss(const FeatureMap& mean_map, const PseudoGT& labels);
NllResult nll_loss(const RowMatrix& mean_cells, const PseudoGT& labels);

struct AdagradState {
  RowMatrix accumulator;  // running sum of squared gradients, weight-shaped
  double base_lr = 5e-3;
  double decay = 0.1;
  std::vector<int> milestones;  // epochs at which the rate is multiplied by decay
  int epoch = 0;

  double effective_lr() const;
};

inline constexpr double kAdagradEps = 1e-10;

AdagradState make_adagrad_state(const PartLayer& layer, double base_lr, double decay,
                                std::vector<int> milestones);

// accumulator += g^2; weights -= lr * g / (sqrt(accumulator) + 1e-10).
void adagrad_step(PartLayer& layer, const RowMatrix& gradient, AdagradState& state);

// Binary checkpoint: uint32 c_i, uint32 c_o, then c_o x c_i little-endian
// float32 weights. The sidecar <path>.json carries the config and epoch.
void save_checkpoint(const std::filesystem::path& path, const PartLayer& layer,
                     const nlohmann::json& sidecar);
PartLayer load_checkpoint(const std::filesystem::path& path);

}  // namespace partdisc
