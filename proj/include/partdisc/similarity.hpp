#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "partdisc/feature_map.hpp"

namespace partdisc {

// Jensen-Shannon divergence with natural logarithms. Inputs must be
// non-negative, of equal length, and each sum to 1 within 1e-5.
// Result lies in [0, ln 2].
double js_divergence(std::span<const double> p, std::span<const double> q);

// Resizes both maps to common_size x common_size, renormalizes every cell's
// channel vector, and averages the per-cell JS divergence.
double map_divergence(const FeatureMap& a, const FeatureMap& b, int common_size);

// Pairwise divergences (lower means more similar). Scores are held at float32
// precision so an in-memory matrix and its on-disk cache agree exactly.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  SimilarityMatrix(std::vector<std::string> ids, std::vector<float> scores);

  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& scores() const { return scores_; }
  float at(int i, int j) const { return scores_[static_cast<std::size_t>(i) * size() + j]; }
  // -1 when absent.
  int index_of(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  std::vector<float> scores_;
};

SimilarityMatrix build_similarity_matrix(std::span<const FeatureMap> maps,
                                         const std::vector<std::string>& ids, int common_size,
                                         int threads = 1);

// The k candidates with the smallest divergence to `query`, ascending; ties
// go to the lexicographically smaller id. The query itself is never returned.
std::vector<std::string> top_k_pool(const SimilarityMatrix& matrix, const std::string& query,
                                    int k, std::span<const std::string> candidate_subset);

// Cache layout: <stem>.ids.json holds the id list, <stem>.f32 the n x n
// row-major little-endian float32 matrix.
void save_similarity(const std::filesystem::path& stem, const SimilarityMatrix& matrix);
SimilarityMatrix load_similarity(const std::filesystem::path& stem);

}  // namespace partdisc
