#include "partdisc/part_layer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "partdisc/errors.hpp"
#include "partdisc/pipeline.hpp"

namespace partdisc {
namespace {

struct KMeansRun {
  RowMatrix centers;
  double objective = -std::numeric_limits<double>::infinity();
};

// Index of the most similar center; ties go to the lower index.
int nearest(const RowMatrix& sims, int row, double* best_sim) {
  int best = 0;
  for (int j = 1; j < sims.cols(); ++j) {
    if (sims(row, j) > sims(row, best)) best = j;
  }
  *best_sim = sims(row, best);
  return best;
}

RowMatrix seed_plus_plus(const RowMatrix& x, int k, std::mt19937_64& rng) {
  const int n = static_cast<int>(x.rows());
  RowMatrix centers(k, x.cols());
  std::uniform_int_distribution<int> first(0, n - 1);
  centers.row(0) = x.row(first(rng));
  // Cosine distance to the nearest chosen center, squared.
  Eigen::VectorXd d2(n);
  for (int i = 0; i < n; ++i) {
    const double d = std::max(0.0, 1.0 - x.row(i).dot(centers.row(0)));
    d2(i) = d * d;
  }
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    int pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        r -= d2(i);
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
      // Never land on an already-covered point through rounding.
      while (d2(pick) <= 0.0 && pick > 0) --pick;
    } else {
      std::uniform_int_distribution<int> any(0, n - 1);
      pick = any(rng);
    }
    centers.row(c) = x.row(pick);
    for (int i = 0; i < n; ++i) {
      const double d = std::max(0.0, 1.0 - x.row(i).dot(centers.row(c)));
      d2(i) = std::min(d2(i), d * d);
    }
  }
  return centers;
}

KMeansRun lloyd(const RowMatrix& x, RowMatrix centers, int max_iterations) {
  const int n = static_cast<int>(x.rows());
  const int k = static_cast<int>(centers.rows());
  std::vector<int> assign(n, -1);
  KMeansRun run;
  for (int it = 0; it < max_iterations; ++it) {
    const RowMatrix sims = x * centers.transpose();
    bool changed = false;
    double objective = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      const int a = nearest(sims, i, &s);
      objective += s;
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    run.objective = objective;
    if (!changed) break;
    RowMatrix sums = RowMatrix::Zero(k, x.cols());
    for (int i = 0; i < n; ++i) sums.row(assign[i]) += x.row(i);
    for (int c = 0; c < k; ++c) {
      const double norm = sums.row(c).norm();
      if (norm > 0.0) centers.row(c) = sums.row(c) / norm;  // empty clusters keep their center
    }
  }
  run.centers = std::move(centers);
  return run;
}

}  // namespace

PartLayer init_from_clusters(const VectorSample& sample, int k_clusters, std::uint64_t seed,
                             const KMeansOptions& options) {
  if (k_clusters < 1) throw UsageError("init_from_clusters: k_clusters must be >= 1");
  if (sample.dim < 1) throw DataError("init_from_clusters: empty sample");

  std::vector<int> keep;
  for (int i = 0; i < sample.count(); ++i) {
    const float* v = sample.values.data() + static_cast<std::size_t>(i) * sample.dim;
    double norm = 0.0;
    for (int d = 0; d < sample.dim; ++d) norm += static_cast<double>(v[d]) * v[d];
    if (norm > 0.0) keep.push_back(i);
  }
  const int n = static_cast<int>(keep.size());
  if (n < k_clusters) {
    throw DataError("init_from_clusters: sample of " + std::to_string(n) +
                    " non-zero vectors is smaller than k_clusters=" + std::to_string(k_clusters));
  }
  RowMatrix x(n, sample.dim);
  for (int r = 0; r < n; ++r) {
    const float* v = sample.values.data() + static_cast<std::size_t>(keep[r]) * sample.dim;
    for (int d = 0; d < sample.dim; ++d) x(r, d) = v[d];
    x.row(r).normalize();
  }
  bool varied = false;
  for (int r = 1; r < n && !varied; ++r) varied = (x.row(r) - x.row(0)).norm() > 1e-12;
  if (!varied && k_clusters > 1) throw DataError("init_from_clusters: zero-variance sample");

  std::mt19937_64 rng(seed);
  KMeansRun best;
  for (int restart = 0; restart < std::max(1, options.restarts); ++restart) {
    KMeansRun run = lloyd(x, seed_plus_plus(x, k_clusters, rng), options.max_iterations);
    if (run.objective > best.objective) best = std::move(run);
  }

  PartLayer layer;
  layer.weights = RowMatrix::Zero(k_clusters + 1, sample.dim);
  layer.weights.topRows(k_clusters) = best.centers;
  return layer;
}

FeatureMap forward(const FeatureMap& backbone, const PartLayer& layer) {
  return to_feature_map(activate(backbone, layer));
}

NllResult nll_loss(const RowMatrix& mean_cells, const PseudoGT& labels) {
  const int cells = static_cast<int>(mean_cells.rows());
  const int c = static_cast<int>(mean_cells.cols());
  if (static_cast<int>(labels.labels.size()) != cells) {
    throw DataError("nll_loss: label grid does not match the map");
  }
  NllResult r;
  r.gradient.assign(static_cast<std::size_t>(cells) * c, 0.0);
  for (int k = 0; k < cells; ++k) {
    const int label = labels.labels[k];
    if (label < 0 || label >= c) throw DataError("nll_loss: label out of range");
    const double v = mean_cells(k, label);
    if (v >= kLogFloor) {
      r.loss -= std::log(v);
      r.gradient[static_cast<std::size_t>(k) * c + label] = -1.0 / (cells * v);
    } else {
      r.loss -= std::log(kLogFloor);
    }
  }
  r.loss /= cells;
  return r;
}

NllResult nll_loss(const FeatureMap& mean_map, const PseudoGT& labels) {
  if (labels.height != mean_map.height() || labels.width != mean_map.width()) {
    throw DataError("nll_loss: label grid does not match the map");
  }
  RowMatrix cells(mean_map.cells(), mean_map.channels());
  for (int k = 0; k < mean_map.cells(); ++k) {
    auto v = mean_map.cell(k);
    for (int ch = 0; ch < mean_map.channels(); ++ch) cells(k, ch) = v[ch];
  }
  return nll_loss(cells, labels);
}

double AdagradState::effective_lr() const {
  double lr = base_lr;
  for (int m : milestones) {
    if (epoch >= m) lr *= decay;
  }
  return lr;
}

AdagradState make_adagrad_state(const PartLayer& layer, double base_lr, double decay,
                                std::vector<int> milestones) {
  AdagradState s;
  s.accumulator = RowMatrix::Zero(layer.weights.rows(), layer.weights.cols());
  s.base_lr = base_lr;
  s.decay = decay;
  s.milestones = std::move(milestones);
  return s;
}

void adagrad_step(PartLayer& layer, const RowMatrix& gradient, AdagradState& state) {
  if (gradient.rows() != layer.weights.rows() || gradient.cols() != layer.weights.cols() ||
      state.accumulator.rows() != layer.weights.rows() ||
      state.accumulator.cols() != layer.weights.cols()) {
    throw UsageError("adagrad_step: shape mismatch");
  }
  if (!gradient.allFinite()) throw InvariantError("adagrad_step: non-finite gradient");
  const double lr = state.effective_lr();
  state.accumulator.array() += gradient.array().square();
  layer.weights.array() -=
      lr * gradient.array() / (state.accumulator.array().sqrt() + kAdagradEps);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PartLayer& layer,
                     const nlohmann::json& sidecar) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  put_u32(out, static_cast<std::uint32_t>(layer.in_channels()));
  put_u32(out, static_cast<std::uint32_t>(layer.out_channels()));
  for (int r = 0; r < layer.weights.rows(); ++r) {
    for (int c = 0; c < layer.weights.cols(); ++c) {
      put_f32(out, static_cast<float>(layer.weights(r, c)));
    }
  }
  if (!out) throw DataError("checkpoint write failed: " + path.string());

  nlohmann::json meta = sidecar;
  meta["c_i"] = layer.in_channels();
  meta["c_o"] = layer.out_channels();
  std::ofstream side(path.string() + ".json");
  if (!side) throw DataError("cannot write checkpoint sidecar: " + path.string() + ".json");
  side << meta.dump(2) << "\n";
}

PartLayer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  const std::uint32_t c_i = get_u32(in);
  const std::uint32_t c_o = get_u32(in);
  if (!in || c_i == 0 || c_o == 0) throw DataError("malformed checkpoint header: " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  if (size != 8 + 4ull * c_i * c_o) {
    throw DataError("checkpoint payload does not match header: " + path.string());
  }
  in.seekg(8);
  PartLayer layer;
  layer.weights.resize(c_o, c_i);
  for (std::uint32_t r = 0; r < c_o; ++r) {
    for (std::uint32_t c = 0; c < c_i; ++c) layer.weights(r, c) = get_f32(in);
  }
  if (!layer.weights.allFinite()) throw DataError("non-finite checkpoint weights: " + path.string());
  return layer;
}

}  // namespace partdisc
