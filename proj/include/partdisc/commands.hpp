#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "partdisc/config.hpp"
#include "partdisc/detect.hpp"
#include "partdisc/manifest.hpp"
#include "partdisc/train.hpp"

namespace partdisc {

// Each command reads and writes artifacts under config.out_dir (or the
// explicit paths set in the config).

DatasetManifest cmd_synth(const RunConfig& config);
// Cluster init checkpoint plus the per-subset similarity cache.
void cmd_sim(const RunConfig& config);
TrainResult cmd_train(const RunConfig& config);
void cmd_infer(const RunConfig& config);
nlohmann::json cmd_eval(const RunConfig& config);
// Pool alignments of every image, written to <out_dir>/alignments.json when
// dump is set; returns the same document.
nlohmann::json cmd_align(const RunConfig& config, bool dump);

std::vector<TrainingImage> load_training_images(const DatasetManifest& manifest, int threads);

using DetectionsById = std::map<std::string, std::vector<Detection>>;

void write_detections(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<Detection>>>& per_image);
DetectionsById read_detections(const std::filesystem::path& path);

// Metrics report for a manifest with GT annotations. Even manifest positions
// form the assignment/regression split, odd positions the test split.
nlohmann::json evaluate(const DatasetManifest& manifest, const DetectionsById& detections,
                        const RunConfig& config);

// Writes via a temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace partdisc
