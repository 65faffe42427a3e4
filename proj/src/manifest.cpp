#include "partdisc/manifest.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "partdisc/errors.hpp"

namespace partdisc {

using nlohmann::json;

std::filesystem::path DatasetManifest::feature_file(const ManifestEntry& e) const {
  std::filesystem::path p(e.feature_path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::string> DatasetManifest::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.image_id);
  return out;
}

namespace {

template <typename T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) {
    throw DataError(where + ": manifest entry missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& ex) {
    throw DataError(where + ": bad field '" + key + "': " + ex.what());
  }
}

std::array<double, 4> parse_box(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw DataError(where + ": box must be [x1, y1, x2, y2]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& ex) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + ex.what());
  }
  if (!doc.is_array()) throw DataError("manifest " + path.string() + " must be a JSON array");

  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();
  std::set<std::string> seen;
  const std::string where = path.string();
  for (const json& j : doc) {
    ManifestEntry e;
    e.image_id = required<std::string>(j, "image_id", where);
    e.feature_path = required<std::string>(j, "feature_path", where);
    e.image_height = required<int>(j, "image_height", where);
    e.image_width = required<int>(j, "image_width", where);
    e.category = j.value("category", std::string());
    if (!seen.insert(e.image_id).second) {
      throw DataError(where + ": duplicate image_id '" + e.image_id + "'");
    }
    if (j.contains("landmarks")) {
      std::vector<NamedPoint> pts;
      for (const json& p : j["landmarks"]) {
        pts.push_back({required<std::string>(p, "name", where), required<double>(p, "x", where),
                       required<double>(p, "y", where)});
      }
      e.landmarks = std::move(pts);
    }
    if (j.contains("part_boxes")) {
      std::vector<NamedBox> boxes;
      for (const json& b : j["part_boxes"]) {
        if (!b.contains("box")) throw DataError(where + ": part box missing 'box'");
        boxes.push_back({required<std::string>(b, "name", where), parse_box(b["box"], where)});
      }
      e.part_boxes = std::move(boxes);
    }
    if (j.contains("object_box")) e.object_box = parse_box(j["object_box"], where);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  json doc = json::array();
  for (const auto& e : manifest.entries) {
    json j;
    j["image_id"] = e.image_id;
    j["feature_path"] = e.feature_path;
    j["image_height"] = e.image_height;
    j["image_width"] = e.image_width;
    j["category"] = e.category;
    if (e.landmarks) {
      json pts = json::array();
      for (const auto& p : *e.landmarks) pts.push_back({{"name", p.name}, {"x", p.x}, {"y", p.y}});
      j["landmarks"] = pts;
    }
    if (e.part_boxes) {
      json boxes = json::array();
      for (const auto& b : *e.part_boxes) boxes.push_back({{"name", b.name}, {"box", b.box}});
      j["part_boxes"] = boxes;
    }
    if (e.object_box) j["object_box"] = *e.object_box;
    doc.push_back(j);
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << doc.dump(2) << "\n";
}

}  // namespace partdisc
