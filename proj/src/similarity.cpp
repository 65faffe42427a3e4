#include "partdisc/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "partdisc/errors.hpp"
#include "partdisc/npy.hpp"
#include "partdisc/parallel.hpp"

namespace partdisc {
namespace {

constexpr double kSumTolerance = 1e-5;
constexpr double kFloor = 1e-12;

double kl_to_mixture(std::span<const double> p, std::span<const double> q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // 0 log 0 = 0
    const double m = 0.5 * (p[i] + q[i]);
    sum += p[i] * std::log(p[i] / m);
  }
  return sum;
}

double js_unchecked(std::span<const double> p, std::span<const double> q) {
  const double js = 0.5 * kl_to_mixture(p, q) + 0.5 * kl_to_mixture(q, p);
  return std::clamp(js, 0.0, std::numbers::ln2);
}

// Floors and renormalizes one cell's channel vector.
void cell_distribution(std::span<const float> cell, std::vector<double>& out) {
  out.resize(cell.size());
  double total = 0.0;
  for (std::size_t i = 0; i < cell.size(); ++i) {
    out[i] = std::max(static_cast<double>(cell[i]), kFloor);
    total += out[i];
  }
  for (double& v : out) v /= total;
}

}  // namespace

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw UsageError("js_divergence: length mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw UsageError("js_divergence: negative probability");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > kSumTolerance || std::abs(sq - 1.0) > kSumTolerance) {
    throw UsageError("js_divergence: input not normalized");
  }
  return js_unchecked(p, q);
}

double map_divergence(const FeatureMap& a, const FeatureMap& b, int common_size) {
  if (a.channels() != b.channels()) throw UsageError("map_divergence: channel mismatch");
  const FeatureMap ra = resize_bilinear(a, common_size, common_size);
  const FeatureMap rb = resize_bilinear(b, common_size, common_size);
  std::vector<double> p, q;
  double total = 0.0;
  for (int i = 0; i < ra.cells(); ++i) {
    cell_distribution(ra.cell(i), p);
    cell_distribution(rb.cell(i), q);
    total += js_unchecked(p, q);
  }
  return total / ra.cells();
}

SimilarityMatrix::SimilarityMatrix(std::vector<std::string> ids, std::vector<float> scores)
    : ids_(std::move(ids)), scores_(std::move(scores)) {
  if (scores_.size() != ids_.size() * ids_.size()) {
    throw DataError("similarity matrix size does not match id count");
  }
}

int SimilarityMatrix::index_of(const std::string& id) const {
  auto it = std::find(ids_.begin(), ids_.end(), id);
  return it == ids_.end() ? -1 : static_cast<int>(it - ids_.begin());
}

SimilarityMatrix build_similarity_matrix(std::span<const FeatureMap> maps,
                                         const std::vector<std::string>& ids, int common_size,
                                         int threads) {
  const int n = static_cast<int>(maps.size());
  if (n < 2) throw UsageError("build_similarity_matrix: need at least 2 maps");
  if (ids.size() != maps.size()) throw UsageError("build_similarity_matrix: id count mismatch");
  for (const auto& m : maps) {
    if (m.channels() != maps[0].channels()) {
      throw DataError("build_similarity_matrix: channel counts differ");
    }
  }
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);

  std::vector<float> scores(static_cast<std::size_t>(n) * n, 0.0f);
  parallel_for(static_cast<int>(pairs.size()), threads, [&](int k) {
    const auto [i, j] = pairs[k];
    const auto s = static_cast<float>(map_divergence(maps[i], maps[j], common_size));
    scores[static_cast<std::size_t>(i) * n + j] = s;
    scores[static_cast<std::size_t>(j) * n + i] = s;
  });
  return SimilarityMatrix(ids, std::move(scores));
}

std::vector<std::string> top_k_pool(const SimilarityMatrix& matrix, const std::string& query,
                                    int k, std::span<const std::string> candidate_subset) {
  const int qi = matrix.index_of(query);
  if (qi < 0) throw DataError("top_k_pool: unknown query id '" + query + "'");
  if (k < 1) throw UsageError("top_k_pool: k must be >= 1");

  struct Candidate {
    float score;
    const std::string* id;
  };
  std::vector<Candidate> cands;
  for (const std::string& id : candidate_subset) {
    if (id == query) continue;
    const int j = matrix.index_of(id);
    if (j < 0) throw DataError("top_k_pool: candidate '" + id + "' not in matrix");
    cands.push_back({matrix.at(qi, j), &id});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return *a.id < *b.id;
  });
  cands.erase(std::unique(cands.begin(), cands.end(),
                          [](const Candidate& a, const Candidate& b) { return *a.id == *b.id; }),
              cands.end());
  std::vector<std::string> out;
  for (int i = 0; i < static_cast<int>(cands.size()) && i < k; ++i) out.push_back(*cands[i].id);
  return out;
}

void save_similarity(const std::filesystem::path& stem, const SimilarityMatrix& matrix) {
  std::ofstream out(stem.string() + ".ids.json");
  if (!out) throw DataError("cannot write similarity ids: " + stem.string() + ".ids.json");
  out << nlohmann::json(matrix.ids()).dump() << "\n";
  write_raw_f32(stem.string() + ".f32", matrix.scores());
}

SimilarityMatrix load_similarity(const std::filesystem::path& stem) {
  std::ifstream in(stem.string() + ".ids.json");
  if (!in) throw DataError("cannot open similarity ids: " + stem.string() + ".ids.json");
  std::vector<std::string> ids;
  try {
    ids = nlohmann::json::parse(in).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("bad similarity id list: " + std::string(ex.what()));
  }
  return SimilarityMatrix(std::move(ids), read_raw_f32(stem.string() + ".f32"));
}

}  // namespace partdisc
