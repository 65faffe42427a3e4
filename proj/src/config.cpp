#include "partdisc/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>

#include "partdisc/errors.hpp"

namespace partdisc {
namespace {

using FieldPtr = std::variant<int*, std::int64_t*, double*, bool*, std::string*>;

struct Field {
  const char* key;
  FieldPtr ptr;
};

std::vector<Field> fields(RunConfig& c) {
  TrainConfig& t = c.train;
  return {
      {"top_k", &t.top_k},
      {"subset_size", &t.subset_size},
      {"cosine_threshold", &t.cosine_threshold},
      {"transform_family", &t.transform_family},
      {"max_per_channel", &t.max_per_channel},
      {"suppress_radius", &t.suppress_radius},
      {"epochs", &t.epochs},
      {"seed", &t.seed},
      {"refresh_every", &t.refresh_every},
      {"learning_rate", &t.learning_rate},
      {"lr_decay", &t.lr_decay},
      {"n_clusters", &t.n_clusters},
      {"cluster_sample", &t.cluster_sample},
      {"kmeans_restarts", &t.kmeans_restarts},
      {"kmeans_iterations", &t.kmeans_iterations},
      {"common_size", &t.common_size},
      {"ransac_iterations", &t.ransac_iterations},
      {"inlier_tol", &t.inlier_tol},
      {"min_inliers", &t.min_inliers},
      {"match_source", &t.match_source},
      {"include_self_in_pseudo_gt", &t.include_self_in_pseudo_gt},
      {"nms_iou", &c.nms_iou},
      {"score_threshold", &c.score_threshold},
      {"box_side", &c.box_side},
      {"iou_threshold", &c.iou_threshold},
      {"l2_threshold", &c.l2_threshold},
      {"ridge", &c.ridge},
      {"synth_images", &c.synth_images},
      {"synth_parts", &c.synth_parts},
      {"synth_channels", &c.synth_channels},
      {"synth_grid", &c.synth_grid},
      {"synth_noise", &c.synth_noise},
      {"synth_image_size", &c.synth_image_size},
      {"synth_box_side", &c.synth_box_side},
      {"synth_max_rotation", &c.synth_max_rotation},
      {"synth_max_translation", &c.synth_max_translation},
      {"synth_scale_min", &c.synth_scale_min},
      {"synth_scale_max", &c.synth_scale_max},
      {"synth_part_radius", &c.synth_part_radius},
      {"synth_distractors", &c.synth_distractors},
      {"synth_distractor_similarity", &c.synth_distractor_similarity},
      {"synth_distractor_placement", &c.synth_distractor_placement},
      {"threads", &c.threads},
      {"out_dir", &c.out_dir},
      {"manifest", &c.manifest},
      {"checkpoint", &c.checkpoint},
      {"init_checkpoint", &c.init_checkpoint},
      {"detections", &c.detections},
      {"metrics", &c.metrics},
      {"features_sample", &c.features_sample},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (quote == 0 && (s[i] == '"' || s[i] == '\'')) {
      quote = s[i];
    } else if (s[i] == quote && (quote == '\'' || s[i - 1] != '\\')) {
      quote = 0;
    } else if (s[i] == '#' && quote == 0) {
      return s.substr(0, i);
    }
  }
  return s;
}

std::string unquote(const std::string& key, const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        const char n = v[++i];
        out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
      } else {
        out += v[i];
      }
    }
    return out;
  }
  if (v.size() >= 2 && v.front() == '\'' && v.back() == '\'') return v.substr(1, v.size() - 2);
  if (v.find_first_of("\"'[]{}=") != std::string::npos) {
    throw UsageError("config: bad string value for " + key + ": " + v);
  }
  return v;
}

template <typename T>
T parse_number(const std::string& key, std::string v) {
  std::erase(v, '_');
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw UsageError("config: bad numeric value for " + key + ": " + v);
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  for (Field& f : fields(*this)) {
    if (key != f.key) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *p = unquote(key, value);
          } else if constexpr (std::is_same_v<T, bool>) {
            if (value == "true") {
              *p = true;
            } else if (value == "false") {
              *p = false;
            } else {
              throw UsageError("config: " + key + " expects true or false, got " + value);
            }
          } else if constexpr (std::is_same_v<T, double>) {
            std::string v = value;
            if (!v.empty() && v[0] == '+') v.erase(0, 1);
            *p = parse_number<double>(key, v);
          } else {
            std::string v = value;
            if (!v.empty() && v[0] == '+') v.erase(0, 1);
            *p = parse_number<T>(key, v);
          }
        },
        f.ptr);
    return;
  }
  throw UsageError("config: unknown key '" + key + "'");
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const Field& f : fields(const_cast<RunConfig&>(*this))) out.emplace_back(f.key);
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const Field& f : fields(const_cast<RunConfig&>(*this))) {
    std::visit([&](auto* p) { j[f.key] = *p; }, f.ptr);
  }
  return j;
}

std::string RunConfig::to_toml() const {
  std::ostringstream os;
  for (const Field& f : fields(const_cast<RunConfig&>(*this))) {
    os << f.key << " = ";
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            os << nlohmann::json(*p).dump();
          } else if constexpr (std::is_same_v<T, bool>) {
            os << (*p ? "true" : "false");
          } else {
            os << nlohmann::json(*p).dump();
          }
        },
        f.ptr);
    os << "\n";
  }
  return os.str();
}

namespace {
std::filesystem::path or_default(const std::string& value, const std::filesystem::path& fallback) {
  return value.empty() ? fallback : std::filesystem::path(value);
}
}  // namespace

std::filesystem::path RunConfig::manifest_path() const {
  return or_default(manifest, out_path() / "manifest.json");
}
std::filesystem::path RunConfig::checkpoint_path() const {
  return or_default(checkpoint, out_path() / "part_layer.ckpt");
}
std::filesystem::path RunConfig::init_checkpoint_path() const {
  return or_default(init_checkpoint, out_path() / "init.ckpt");
}
std::filesystem::path RunConfig::detections_path() const {
  return or_default(detections, out_path() / "detections.jsonl");
}
std::filesystem::path RunConfig::metrics_path() const {
  return or_default(metrics, out_path() / "metrics.json");
}
std::filesystem::path RunConfig::similarity_dir() const { return out_path() / "similarity"; }

void apply_toml(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      throw UsageError("config line " + std::to_string(lineno) +
                       ": tables are not supported, use flat keys");
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = unquote("key", trim(s.substr(0, eq)));
    try {
      config.set(key, s.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void load_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_toml(config, ss.str());
}

}  // namespace partdisc
