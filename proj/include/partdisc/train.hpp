#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "partdisc/alignment.hpp"
#include "partdisc/config.hpp"
#include "partdisc/feature_map.hpp"
#include "partdisc/part_layer.hpp"
#include "partdisc/similarity.hpp"

namespace partdisc {

struct TrainingImage {
  std::string id;
  FeatureMap backbone;
};

// Seeded shuffle of [0, n) cut into consecutive chunks of subset_size. A
// trailing chunk with a single image is folded into the previous one so that
// every image has at least one candidate.
std::vector<std::vector<int>> make_subsets(int n, int subset_size, std::uint64_t seed);

// One similarity matrix per subset, computed on part-layer outputs.
std::vector<SimilarityMatrix> compute_subset_similarity(const std::vector<TrainingImage>& images,
                                                        const PartLayer& layer,
                                                        const std::vector<std::vector<int>>& subsets,
                                                        int common_size, int threads);

// Up to max_count backbone cell vectors; all of them when there are fewer,
// otherwise a seeded sample without replacement.
VectorSample gather_cluster_sample(const std::vector<TrainingImage>& images, int max_count,
                                   std::uint64_t seed);

AlignmentOptions alignment_options(const TrainConfig& config);

// Deterministic per-pair RANSAC seed.
std::uint64_t pair_seed(std::uint64_t seed, int dst, int src);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0;
  double learning_rate = 0;
  int alignments = 0;  // pool alignments estimated this epoch
  int fallbacks = 0;   // of which fell back to the identity
};

struct TrainResult {
  PartLayer layer;
  std::vector<EpochRecord> log;
};

// Runs the self-training loop. `similarity` holds one matrix per subset (as
// returned by compute_subset_similarity); every image id must occur in
// exactly one of them.
TrainResult train_part_layer(const std::vector<TrainingImage>& images, PartLayer layer,
                             const TrainConfig& config, std::vector<SimilarityMatrix> similarity,
                             int threads,
                             const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace partdisc
