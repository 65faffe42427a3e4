#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace partdisc {

// Knobs of the training loop. Defaults follow the published settings where
// they exist.
struct TrainConfig {
  int top_k = 15;
  int subset_size = 2000;
  double cosine_threshold = 0.6;
  std::string transform_family = "affine";
  int max_per_channel = 3;
  int suppress_radius = 0;
  int epochs = 5;
  std::int64_t seed = 0;
  int refresh_every = 0;  // epochs between similarity rebuilds; 0 = never

  double learning_rate = 5e-3;
  double lr_decay = 0.1;
  int n_clusters = 512;
  int cluster_sample = 100000;
  int kmeans_restarts = 4;
  int kmeans_iterations = 100;

  int common_size = 14;
  int ransac_iterations = 100;
  double inlier_tol = 1.0;
  int min_inliers = 6;
  // "backbone": align with max-normalized backbone maps (transforms cached);
  // "output": align with max-normalized part-layer outputs every step.
  std::string match_source = "backbone";
  bool include_self_in_pseudo_gt = false;
};

struct RunConfig {
  TrainConfig train;

  double nms_iou = 0.3;
  double score_threshold = 0.1;
  double box_side = 100;
  double iou_threshold = 0.5;
  double l2_threshold = 0.1;
  double ridge = 1e-4;

  int synth_images = 40;
  int synth_parts = 5;
  int synth_channels = 128;
  int synth_grid = 16;
  double synth_noise = 0.05;
  int synth_image_size = 224;
  double synth_box_side = 56;
  double synth_max_rotation = 10;
  double synth_max_translation = 2;
  double synth_scale_min = 0.9;
  double synth_scale_max = 1.1;
  double synth_part_radius = 0.45;
  int synth_distractors = 1;
  double synth_distractor_similarity = 0.8;
  std::string synth_distractor_placement = "near";

  int threads = 1;
  std::string out_dir = "out";
  std::string manifest;       // default <out_dir>/manifest.json
  std::string checkpoint;     // default <out_dir>/part_layer.ckpt
  std::string init_checkpoint;  // default <out_dir>/init.ckpt
  std::string detections;     // default <out_dir>/detections.jsonl
  std::string metrics;        // default <out_dir>/metrics.json
  std::string features_sample;  // optional (n, c_i) .npy for clustering

  // Applies one `key = value` assignment; the value is TOML-typed text.
  void set(const std::string& key, const std::string& value);
  std::vector<std::string> keys() const;
  std::string to_toml() const;
  nlohmann::json to_json() const;

  std::filesystem::path out_path() const { return out_dir; }
  std::filesystem::path manifest_path() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path init_checkpoint_path() const;
  std::filesystem::path detections_path() const;
  std::filesystem::path metrics_path() const;
  std::filesystem::path similarity_dir() const;
};

// Flat-key TOML subset: `key = value` lines with strings, integers, floats and
// booleans, plus comments. Tables and arrays are rejected.
void apply_toml(RunConfig& config, const std::string& text);
void load_config_file(RunConfig& config, const std::filesystem::path& path);

}  // namespace partdisc
