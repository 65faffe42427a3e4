#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace partdisc {

struct NamedPoint {
  std::string name;
  double x = 0;  // pixels
  double y = 0;
};

struct NamedBox {
  std::string name;
  std::array<double, 4> box{};  // x1, y1, x2, y2 in pixels
};

struct ManifestEntry {
  std::string image_id;
  std::string feature_path;  // relative paths resolve against the manifest directory
  int image_height = 0;
  int image_width = 0;
  std::string category;
  // Evaluation-only annotations. Training never looks at these.
  std::optional<std::vector<NamedPoint>> landmarks;
  std::optional<std::vector<NamedBox>> part_boxes;
  // Optional object box; used as the landmark error normalizer when no pupil
  // pair is annotated.
  std::optional<std::array<double, 4>> object_box;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::filesystem::path feature_file(const ManifestEntry& e) const;
  std::vector<std::string> ids() const;
};

// Parses the JSON array form. Throws DataError on missing files, bad JSON,
// missing required fields or duplicate image ids.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace partdisc
