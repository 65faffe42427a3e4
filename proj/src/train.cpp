#include "partdisc/train.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <unordered_map>

#include "partdisc/errors.hpp"
#include "partdisc/parallel.hpp"
#include "partdisc/pipeline.hpp"
#include "partdisc/pseudo_gt.hpp"

namespace partdisc {

std::vector<std::vector<int>> make_subsets(int n, int subset_size, std::uint64_t seed) {
  if (subset_size < 2) throw UsageError("subset_size must be >= 2");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> subsets;
  for (int start = 0; start < n; start += subset_size) {
    const int end = std::min(n, start + subset_size);
    if (end - start == 1 && !subsets.empty()) {
      subsets.back().push_back(order[start]);
    } else {
      subsets.emplace_back(order.begin() + start, order.begin() + end);
    }
  }
  return subsets;
}

std::vector<SimilarityMatrix> compute_subset_similarity(const std::vector<TrainingImage>& images,
                                                        const PartLayer& layer,
                                                        const std::vector<std::vector<int>>& subsets,
                                                        int common_size, int threads) {
  std::vector<FeatureMap> outputs(images.size());
  parallel_for(static_cast<int>(images.size()), threads,
               [&](int i) { outputs[i] = forward(images[i].backbone, layer); });
  std::vector<SimilarityMatrix> out;
  for (const auto& subset : subsets) {
    if (subset.size() < 2) {
      // A lone image has no neighbours; keep it addressable.
      out.emplace_back(std::vector<std::string>{images[subset[0]].id}, std::vector<float>{0.0f});
      continue;
    }
    std::vector<FeatureMap> maps;
    std::vector<std::string> ids;
    for (int i : subset) {
      maps.push_back(outputs[i]);
      ids.push_back(images[i].id);
    }
    out.push_back(build_similarity_matrix(maps, ids, common_size, threads));
  }
  return out;
}

VectorSample gather_cluster_sample(const std::vector<TrainingImage>& images, int max_count,
                                   std::uint64_t seed) {
  if (images.empty()) throw DataError("cluster sample: no images");
  const int dim = images[0].backbone.channels();
  std::vector<std::pair<int, int>> refs;  // (image, cell)
  for (int i = 0; i < static_cast<int>(images.size()); ++i) {
    if (images[i].backbone.channels() != dim) throw DataError("cluster sample: channel mismatch");
    for (int k = 0; k < images[i].backbone.cells(); ++k) refs.emplace_back(i, k);
  }
  if (max_count > 0 && static_cast<int>(refs.size()) > max_count) {
    std::mt19937_64 rng(seed);
    std::shuffle(refs.begin(), refs.end(), rng);
    refs.resize(max_count);
    std::sort(refs.begin(), refs.end());
  }
  VectorSample sample;
  sample.dim = dim;
  sample.values.reserve(refs.size() * dim);
  for (auto [i, k] : refs) {
    auto v = images[i].backbone.cell(k);
    sample.values.insert(sample.values.end(), v.begin(), v.end());
  }
  return sample;
}

AlignmentOptions alignment_options(const TrainConfig& config) {
  AlignmentOptions o;
  o.family = parse_transform_family(config.transform_family);
  o.cosine_threshold = config.cosine_threshold;
  o.iterations = config.ransac_iterations;
  o.inlier_tol = config.inlier_tol;
  o.min_inliers = config.min_inliers;
  return o;
}

std::uint64_t pair_seed(std::uint64_t seed, int dst, int src) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(dst) * 1000003ull +
                                                    static_cast<std::uint64_t>(src) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

TrainResult train_part_layer(const std::vector<TrainingImage>& images, PartLayer layer,
                             const TrainConfig& config, std::vector<SimilarityMatrix> similarity,
                             int threads, const std::function<void(const EpochRecord&)>& on_epoch) {
  const int n = static_cast<int>(images.size());
  if (n == 0) throw DataError("train: empty manifest");
  if (config.epochs < 0) throw UsageError("epochs must be >= 0");
  if (config.top_k < 1) throw UsageError("top_k must be >= 1");
  if (config.match_source != "backbone" && config.match_source != "output") {
    throw UsageError("match_source must be 'backbone' or 'output'");
  }
  const AlignmentOptions base_align = alignment_options(config);
  const bool align = base_align.family != TransformFamily::kNone;
  const bool cache_transforms = config.match_source == "backbone";

  std::unordered_map<std::string, int> index_of;
  for (int i = 0; i < n; ++i) {
    if (!index_of.emplace(images[i].id, i).second) throw DataError("train: duplicate id " + images[i].id);
  }
  auto subset_of = [&](const std::vector<SimilarityMatrix>& sims) {
    std::vector<int> owner(n, -1);
    for (int s = 0; s < static_cast<int>(sims.size()); ++s) {
      for (const std::string& id : sims[s].ids()) {
        auto it = index_of.find(id);
        if (it == index_of.end()) throw DataError("similarity cache names unknown image " + id);
        owner[it->second] = s;
      }
    }
    for (int i = 0; i < n; ++i) {
      if (owner[i] < 0) throw DataError("similarity cache misses image " + images[i].id);
    }
    return owner;
  };
  std::vector<int> owner = subset_of(similarity);

  std::vector<FeatureMap> normalized_backbone;
  if (align && cache_transforms) {
    normalized_backbone.resize(n);
    parallel_for(n, threads,
                 [&](int i) { normalized_backbone[i] = spatial_max_normalize(images[i].backbone); });
  }
  std::map<std::pair<int, int>, AlignmentEstimate> transform_cache;

  std::vector<int> milestones;
  if (2 * config.epochs / 3 > 0) milestones.push_back(2 * config.epochs / 3);
  AdagradState opt = make_adagrad_state(layer, config.learning_rate, config.lr_decay, milestones);

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.refresh_every > 0 && epoch > 0 && epoch % config.refresh_every == 0) {
      std::vector<std::vector<int>> subsets;
      for (const auto& sim : similarity) {
        std::vector<int> idx;
        for (const std::string& id : sim.ids()) idx.push_back(index_of.at(id));
        subsets.push_back(std::move(idx));
      }
      similarity = compute_subset_similarity(images, layer, subsets, config.common_size, threads);
      owner = subset_of(similarity);
    }
    opt.epoch = epoch;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(static_cast<std::uint64_t>(config.seed) * 7919ull + epoch);
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = opt.effective_lr();
    double loss_sum = 0;
    for (int i : order) {
      const SimilarityMatrix& sim = similarity[owner[i]];
      std::vector<std::string> candidates;
      for (const std::string& id : sim.ids()) {
        if (id != images[i].id) candidates.push_back(id);
      }
      std::vector<int> pool;
      if (!candidates.empty()) {
        for (const std::string& id : top_k_pool(sim, images[i].id, config.top_k, candidates)) {
          pool.push_back(index_of.at(id));
        }
      }
      const int members = static_cast<int>(pool.size());

      std::vector<LayerActivation> acts(members + 1);
      parallel_for(members + 1, threads, [&](int m) {
        acts[m] = activate(images[m == 0 ? i : pool[m - 1]].backbone, layer);
      });

      std::vector<SpatialTransform> transforms(members);
      if (align) {
        std::vector<AlignmentEstimate> est(members);
        std::vector<char> need(members, 1);
        if (cache_transforms) {
          for (int m = 0; m < members; ++m) {
            auto it = transform_cache.find({i, pool[m]});
            if (it != transform_cache.end()) {
              est[m] = it->second;
              need[m] = 0;
            }
          }
        }
        FeatureMap self_norm;
        if (!cache_transforms) self_norm = spatial_max_normalize(to_feature_map(acts[0]));
        parallel_for(members, threads, [&](int m) {
          if (!need[m]) return;
          AlignmentOptions o = base_align;
          o.seed = pair_seed(static_cast<std::uint64_t>(config.seed), i, pool[m]);
          if (cache_transforms) {
            est[m] = estimate_alignment(normalized_backbone[i], normalized_backbone[pool[m]], o);
          } else {
            est[m] = estimate_alignment(self_norm,
                                        spatial_max_normalize(to_feature_map(acts[m + 1])), o);
          }
        });
        for (int m = 0; m < members; ++m) {
          if (need[m]) {
            ++rec.alignments;
            if (est[m].fallback) ++rec.fallbacks;
            if (cache_transforms) transform_cache.emplace(std::make_pair(i, pool[m]), est[m]);
          }
          transforms[m] = est[m].transform;
        }
      }

      const PipelineTape tape = assemble_tape(std::move(acts), transforms);

      std::vector<FeatureMap> maps;
      std::vector<CellMask> masks;
      for (std::size_t m = 0; m < tape.warped.size(); ++m) {
        maps.push_back(to_feature_map(tape.warped[m], tape.height, tape.width));
        masks.push_back(tape.masks[m]);
      }
      // Without the training image in the average, it still backs cells no
      // pool map reaches.
      if (!config.include_self_in_pseudo_gt && members > 0) {
        masks[0] = CellMask(tape.height, tape.width, false);
      }
      const PseudoGT labels = generate_pseudo_gt(average_aligned(maps, masks),
                                                 config.max_per_channel, config.suppress_radius);

      const StepResult step = pipeline_loss_and_gradient(tape, labels);
      adagrad_step(layer, step.gradient, opt);
      loss_sum += step.loss;
    }
    rec.mean_loss = loss_sum / n;
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.layer = std::move(layer);
  return result;
}

}  // namespace partdisc
