#include "partdisc/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "partdisc/errors.hpp"
#include "partdisc/eval.hpp"
#include "partdisc/npy.hpp"
#include "partdisc/parallel.hpp"
#include "partdisc/part_layer.hpp"
#include "partdisc/similarity.hpp"
#include "partdisc/synth.hpp"

namespace partdisc {
namespace fs = std::filesystem;

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

SynthParams synth_params(const RunConfig& c) {
  SynthParams p;
  p.n_images = c.synth_images;
  p.n_parts = c.synth_parts;
  p.channels = c.synth_channels;
  p.grid = c.synth_grid;
  p.noise = c.synth_noise;
  p.seed = static_cast<std::uint64_t>(c.train.seed);
  p.image_size = c.synth_image_size;
  p.box_side = c.synth_box_side;
  p.max_rotation_deg = c.synth_max_rotation;
  p.max_translation = c.synth_max_translation;
  p.scale_min = c.synth_scale_min;
  p.scale_max = c.synth_scale_max;
  p.part_radius = c.synth_part_radius;
  p.distractors_per_part = c.synth_distractors;
  p.distractor_similarity = c.synth_distractor_similarity;
  p.distractor_placement = c.synth_distractor_placement;
  return p;
}

DatasetManifest require_manifest(const RunConfig& c) {
  const fs::path path = c.manifest_path();
  if (!fs::exists(path)) throw DataError("manifest not found: " + path.string());
  DatasetManifest m = load_manifest(path);
  if (m.entries.empty()) throw DataError("empty manifest: " + path.string());
  return m;
}

fs::path chunk_stem(const RunConfig& c, int i) {
  char name[32];
  std::snprintf(name, sizeof name, "chunk_%03d", i);
  return c.similarity_dir() / name;
}

PartLayer cluster_init(const RunConfig& c, const std::vector<TrainingImage>& images) {
  VectorSample sample;
  if (!c.features_sample.empty()) {
    NpyArray a = read_npy(c.features_sample);
    if (a.shape.size() != 2) throw DataError("features_sample must be a rank-2 array");
    sample.dim = static_cast<int>(a.shape[1]);
    sample.values = std::move(a.data);
  } else {
    sample = gather_cluster_sample(images, c.train.cluster_sample,
                                   static_cast<std::uint64_t>(c.train.seed));
  }
  KMeansOptions km;
  km.max_iterations = c.train.kmeans_iterations;
  km.restarts = c.train.kmeans_restarts;
  return init_from_clusters(sample, c.train.n_clusters, static_cast<std::uint64_t>(c.train.seed),
                            km);
}

std::vector<SimilarityMatrix> load_similarity_cache(const RunConfig& c) {
  std::vector<SimilarityMatrix> out;
  for (int i = 0;; ++i) {
    const fs::path stem = chunk_stem(c, i);
    if (!fs::exists(stem.string() + ".ids.json")) break;
    out.push_back(load_similarity(stem));
  }
  return out;
}

std::vector<SimilarityMatrix> build_and_save_similarity(const RunConfig& c,
                                                        const std::vector<TrainingImage>& images,
                                                        const PartLayer& layer) {
  const auto subsets = make_subsets(static_cast<int>(images.size()), c.train.subset_size,
                                    static_cast<std::uint64_t>(c.train.seed));
  auto sims = compute_subset_similarity(images, layer, subsets, c.train.common_size, c.threads);
  fs::create_directories(c.similarity_dir());
  for (const auto& entry : fs::directory_iterator(c.similarity_dir())) {
    if (entry.path().filename().string().rfind("chunk_", 0) == 0) fs::remove(entry.path());
  }
  for (int i = 0; i < static_cast<int>(sims.size()); ++i) save_similarity(chunk_stem(c, i), sims[i]);
  return sims;
}

nlohmann::json detection_json(const std::string& id, const Detection& d) {
  return {{"image_id", id}, {"channel", d.channel}, {"x", d.x}, {"y", d.y}, {"score", d.score},
          {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}};
}

}  // namespace

std::vector<TrainingImage> load_training_images(const DatasetManifest& manifest, int threads) {
  std::vector<TrainingImage> images(manifest.entries.size());
  parallel_for(static_cast<int>(images.size()), threads, [&](int i) {
    images[i].id = manifest.entries[i].image_id;
    images[i].backbone = load_feature_map(manifest.feature_file(manifest.entries[i]));
  });
  return images;
}

DatasetManifest cmd_synth(const RunConfig& config) {
  const SynthParams p = synth_params(config);
  const SyntheticDataset ds = generate_dataset(p);
  DatasetManifest m = write_dataset(ds, p, config.out_path());
  nlohmann::json truth = nlohmann::json::array();
  for (const SyntheticScene& s : ds.scenes) {
    nlohmann::json parts = nlohmann::json::array();
    for (const GridCell& g : s.true_parts) parts.push_back({g.row, g.col});
    truth.push_back({{"image_id", s.id},
                     {"theta", s.applied_transform.theta()},
                     {"parts", parts},
                     {"seed", s.seed}});
  }
  write_text_atomic(config.out_path() / "synth_truth.json", truth.dump(2) + "\n");
  return m;
}

void cmd_sim(const RunConfig& config) {
  const DatasetManifest m = require_manifest(config);
  const auto images = load_training_images(m, config.threads);
  const PartLayer layer = cluster_init(config, images);
  fs::create_directories(config.out_path());
  save_checkpoint(config.init_checkpoint_path(), layer,
                  {{"config", config.to_json()}, {"epoch", 0}});
  build_and_save_similarity(config, images, layer);
}

TrainResult cmd_train(const RunConfig& config) {
  const DatasetManifest m = require_manifest(config);
  const auto images = load_training_images(m, config.threads);
  fs::create_directories(config.out_path());
  PartLayer init;
  if (fs::exists(config.init_checkpoint_path())) {
    init = load_checkpoint(config.init_checkpoint_path());
  } else {
    init = cluster_init(config, images);
    save_checkpoint(config.init_checkpoint_path(), init,
                    {{"config", config.to_json()}, {"epoch", 0}});
  }
  std::vector<SimilarityMatrix> sims = load_similarity_cache(config);
  if (sims.empty()) sims = build_and_save_similarity(config, images, init);

  TrainResult r = train_part_layer(images, std::move(init), config.train, std::move(sims),
                                   config.threads);
  save_checkpoint(config.checkpoint_path(), r.layer,
                  {{"config", config.to_json()}, {"epoch", config.train.epochs}});
  nlohmann::json log = nlohmann::json::array();
  for (const EpochRecord& e : r.log) {
    log.push_back({{"epoch", e.epoch},
                   {"mean_loss", e.mean_loss},
                   {"learning_rate", e.learning_rate},
                   {"alignments", e.alignments},
                   {"fallbacks", e.fallbacks}});
  }
  write_text_atomic(config.out_path() / "train_log.json", log.dump(2) + "\n");
  return r;
}

void write_detections(const fs::path& path,
                      const std::vector<std::pair<std::string, std::vector<Detection>>>& per_image) {
  std::ostringstream os;
  for (const auto& [id, dets] : per_image) {
    for (const Detection& d : dets) os << detection_json(id, d).dump() << "\n";
  }
  write_text_atomic(path, os.str());
}

DetectionsById read_detections(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read detections: " + path.string());
  DetectionsById out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Detection d;
      d.channel = j.at("channel").get<int>();
      d.x = j.at("x").get<double>();
      d.y = j.at("y").get<double>();
      d.score = j.at("score").get<double>();
      const auto& b = j.at("box");
      d.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
               b.at(3).get<double>()};
      out[j.at("image_id").get<std::string>()].push_back(d);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void cmd_infer(const RunConfig& config) {
  const DatasetManifest m = require_manifest(config);
  const PartLayer layer = load_checkpoint(config.checkpoint_path());
  std::vector<std::pair<std::string, std::vector<Detection>>> per_image(m.entries.size());
  parallel_for(static_cast<int>(m.entries.size()), config.threads, [&](int i) {
    const ManifestEntry& e = m.entries[i];
    const FeatureMap out = forward(load_feature_map(m.feature_file(e)), layer);
    const auto peaks =
        extract_peaks(out, e.image_height, e.image_width, config.score_threshold, config.box_side);
    per_image[i] = {e.image_id, nms(peaks, config.nms_iou)};
  });
  write_detections(config.detections_path(), per_image);
}

namespace {

// Ordered union of annotation names across the manifest.
template <typename Getter>
std::vector<std::string> annotation_names(const DatasetManifest& m, Getter get) {
  std::vector<std::string> names;
  for (const ManifestEntry& e : m.entries) {
    for (const std::string& n : get(e)) {
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    }
  }
  return names;
}

struct PartTask {
  std::vector<std::string> names;
  // gt[image][part] -> instance if annotated
  std::vector<std::vector<std::optional<GtInstance>>> gt;
};

nlohmann::json evaluate_rule(const DatasetManifest& m, const DetectionsById& dets,
                             const std::vector<int>& channels, const PartTask& task,
                             const MatchCriterion& crit, const std::vector<int>& assign_split,
                             const std::vector<int>& test_split) {
  auto build = [&](const std::vector<int>& split, int channel, int part) {
    std::vector<EvalImage> imgs;
    for (int i : split) {
      const ManifestEntry& e = m.entries[i];
      EvalImage im;
      im.image_h = e.image_height;
      im.image_w = e.image_width;
      if (auto it = dets.find(e.image_id); it != dets.end()) {
        for (const Detection& d : it->second) {
          if (d.channel == channel) im.dets.push_back({d.score, d.box, d.x, d.y});
        }
      }
      if (task.gt[i][part]) im.gts.push_back(*task.gt[i][part]);
      imgs.push_back(std::move(im));
    }
    return imgs;
  };

  nlohmann::json out;
  out["threshold"] = crit.threshold;
  nlohmann::json per_part = nlohmann::json::object();
  nlohmann::json undefined = nlohmann::json::array();
  const int parts = static_cast<int>(task.names.size());
  std::vector<int> assignment(parts, -1);
  if (!channels.empty() && parts > 0) {
    std::vector<std::vector<double>> table(channels.size(), std::vector<double>(parts, 0.0));
    for (std::size_t c = 0; c < channels.size(); ++c) {
      for (int p = 0; p < parts; ++p) {
        const auto imgs = build(assign_split, channels[c], p);
        table[c][p] = average_precision(imgs, crit).value_or(0.0);
      }
    }
    const ChannelPartAssignment a = assign_channels(table);
    for (int p = 0; p < parts; ++p) assignment[p] = channels[a.part_to_channel[p]];
  }
  double sum = 0;
  int defined = 0;
  for (int p = 0; p < parts; ++p) {
    std::optional<double> ap;
    if (assignment[p] >= 0) {
      ap = average_precision(build(test_split, assignment[p], p), crit);
    } else {
      bool any_gt = false;
      for (int i : test_split) any_gt = any_gt || task.gt[i][p].has_value();
      if (any_gt) ap = 0.0;
    }
    nlohmann::json entry = {{"channel", assignment[p]}};
    if (ap) {
      entry["ap"] = *ap;
      sum += *ap;
      ++defined;
    } else {
      entry["ap"] = nullptr;
      undefined.push_back(task.names[p]);
    }
    per_part[task.names[p]] = entry;
  }
  out["per_part"] = per_part;
  out["undefined_parts"] = undefined;
  out["mAP"] = defined > 0 ? nlohmann::json(sum / defined) : nlohmann::json(nullptr);
  return out;
}

nlohmann::json evaluate_landmarks(const DatasetManifest& m, const DetectionsById& dets,
                                  const std::vector<int>& channels,
                                  const std::vector<std::string>& names,
                                  const std::vector<int>& train_split,
                                  const std::vector<int>& test_split, double ridge) {
  nlohmann::json out;
  auto landmark = [&](int i, const std::string& name) -> std::optional<Point2> {
    const auto& lm = m.entries[i].landmarks;
    if (!lm) return std::nullopt;
    for (const NamedPoint& p : *lm) {
      if (p.name == name) return Point2{p.x, p.y};
    }
    return std::nullopt;
  };
  auto complete = [&](const std::vector<int>& split) {
    std::vector<int> keep;
    for (int i : split) {
      bool ok = true;
      for (const std::string& n : names) ok = ok && landmark(i, n).has_value();
      if (ok) keep.push_back(i);
    }
    return keep;
  };
  const std::vector<int> train = complete(train_split);
  const std::vector<int> test = complete(test_split);
  const int nf = 2 * static_cast<int>(channels.size());
  if (names.empty() || channels.empty() || test.empty() ||
      static_cast<int>(train.size()) < nf + 1) {
    out["status"] = "skipped";
    out["reason"] = names.empty()      ? "no landmark annotations"
                    : channels.empty() ? "no detections"
                    : test.empty()     ? "no annotated test images"
                                       : "fewer training images than regressor parameters";
    return out;
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto raw_features = [&](int i) {
    Eigen::VectorXd f = Eigen::VectorXd::Constant(nf, nan);
    const ManifestEntry& e = m.entries[i];
    auto it = dets.find(e.image_id);
    if (it == dets.end()) return f;
    for (std::size_t c = 0; c < channels.size(); ++c) {
      const Detection* best = nullptr;
      for (const Detection& d : it->second) {
        if (d.channel == channels[c] && (!best || d.score > best->score)) best = &d;
      }
      if (best) {
        f(2 * c) = best->x / e.image_width;
        f(2 * c + 1) = best->y / e.image_height;
      }
    }
    return f;
  };
  Eigen::MatrixXd xtr(train.size(), nf), ytr(train.size(), 2 * names.size());
  for (std::size_t r = 0; r < train.size(); ++r) {
    xtr.row(r) = raw_features(train[r]).transpose();
    for (std::size_t l = 0; l < names.size(); ++l) {
      const Point2 p = *landmark(train[r], names[l]);
      ytr(r, 2 * l) = p.x;
      ytr(r, 2 * l + 1) = p.y;
    }
  }
  // Missing peaks take the channel's training-split mean coordinate.
  Eigen::VectorXd fill(nf);
  for (int j = 0; j < nf; ++j) {
    double s = 0;
    int n = 0;
    for (Eigen::Index r = 0; r < xtr.rows(); ++r) {
      if (!std::isnan(xtr(r, j))) {
        s += xtr(r, j);
        ++n;
      }
    }
    fill(j) = n > 0 ? s / n : 0.5;
    for (Eigen::Index r = 0; r < xtr.rows(); ++r) {
      if (std::isnan(xtr(r, j))) xtr(r, j) = fill(j);
    }
  }
  const LandmarkRegressor reg = fit_landmark_regressor(xtr, ytr, ridge);

  std::vector<double> per_landmark(names.size(), 0.0);
  double mean_error = 0;
  for (int i : test) {
    Eigen::VectorXd f = raw_features(i);
    for (int j = 0; j < nf; ++j) {
      if (std::isnan(f(j))) f(j) = fill(j);
    }
    const Eigen::VectorXd y = reg.predict(f);
    std::vector<Point2> pred, gt;
    for (std::size_t l = 0; l < names.size(); ++l) {
      pred.push_back({y(2 * l), y(2 * l + 1)});
      gt.push_back(*landmark(i, names[l]));
    }
    const ManifestEntry& e = m.entries[i];
    double norm = std::max(e.image_height, e.image_width);
    const auto le = landmark(i, "left_eye"), re = landmark(i, "right_eye");
    if (le && re && std::hypot(le->x - re->x, le->y - re->y) > 0) {
      norm = std::hypot(le->x - re->x, le->y - re->y);
    } else if (e.object_box) {
      const auto& b = *e.object_box;
      norm = std::max(b[2] - b[0], b[3] - b[1]);
    }
    mean_error += normalized_error(pred, gt, norm);
    for (std::size_t l = 0; l < names.size(); ++l) {
      per_landmark[l] += normalized_error(std::span(&pred[l], 1), std::span(&gt[l], 1), norm);
    }
  }
  nlohmann::json pl = nlohmann::json::object();
  for (std::size_t l = 0; l < names.size(); ++l) pl[names[l]] = per_landmark[l] / test.size();
  out["status"] = "ok";
  out["train_images"] = train.size();
  out["test_images"] = test.size();
  out["per_landmark"] = pl;
  out["mean_error"] = mean_error / test.size();
  return out;
}

}  // namespace

nlohmann::json evaluate(const DatasetManifest& m, const DetectionsById& dets,
                        const RunConfig& config) {
  std::vector<int> assign_split, test_split;
  for (int i = 0; i < static_cast<int>(m.entries.size()); ++i) {
    (i % 2 == 0 ? assign_split : test_split).push_back(i);
  }
  std::set<int> channel_set;
  std::size_t total = 0;
  for (const auto& [id, list] : dets) {
    for (const Detection& d : list) channel_set.insert(d.channel);
    total += list.size();
  }
  const std::vector<int> channels(channel_set.begin(), channel_set.end());

  PartTask boxes, points;
  boxes.names = annotation_names(m, [](const ManifestEntry& e) {
    std::vector<std::string> n;
    if (e.part_boxes) for (const NamedBox& b : *e.part_boxes) n.push_back(b.name);
    return n;
  });
  points.names = annotation_names(m, [](const ManifestEntry& e) {
    std::vector<std::string> n;
    if (e.landmarks) for (const NamedPoint& p : *e.landmarks) n.push_back(p.name);
    return n;
  });
  for (const ManifestEntry& e : m.entries) {
    std::vector<std::optional<GtInstance>> b(boxes.names.size()), p(points.names.size());
    if (e.part_boxes) {
      for (const NamedBox& nb : *e.part_boxes) {
        const auto k = std::find(boxes.names.begin(), boxes.names.end(), nb.name) - boxes.names.begin();
        GtInstance g;
        g.box = {nb.box[0], nb.box[1], nb.box[2], nb.box[3]};
        g.x = (nb.box[0] + nb.box[2]) / 2;
        g.y = (nb.box[1] + nb.box[3]) / 2;
        b[k] = g;
      }
    }
    if (e.landmarks) {
      for (const NamedPoint& np : *e.landmarks) {
        const auto k = std::find(points.names.begin(), points.names.end(), np.name) - points.names.begin();
        GtInstance g;
        g.x = np.x;
        g.y = np.y;
        p[k] = g;
      }
    }
    boxes.gt.push_back(std::move(b));
    points.gt.push_back(std::move(p));
  }

  nlohmann::json report;
  report["images"] = {{"assignment", assign_split.size()}, {"test", test_split.size()}};
  report["detections"] = total;
  report["iou"] = evaluate_rule(m, dets, channels, boxes, {MatchRule::kIoU, config.iou_threshold},
                                assign_split, test_split);
  report["l2"] = evaluate_rule(m, dets, channels, points, {MatchRule::kL2, config.l2_threshold},
                               assign_split, test_split);
  report["landmarks"] =
      evaluate_landmarks(m, dets, channels, points.names, assign_split, test_split, config.ridge);
  return report;
}

nlohmann::json cmd_eval(const RunConfig& config) {
  const DatasetManifest m = require_manifest(config);
  const DetectionsById dets = read_detections(config.detections_path());
  nlohmann::json report = evaluate(m, dets, config);
  write_text_atomic(config.metrics_path(), report.dump(2) + "\n");
  return report;
}

nlohmann::json cmd_align(const RunConfig& config, bool dump) {
  const DatasetManifest m = require_manifest(config);
  const auto images = load_training_images(m, config.threads);
  std::vector<SimilarityMatrix> sims = load_similarity_cache(config);
  if (sims.empty()) {
    const PartLayer layer = fs::exists(config.init_checkpoint_path())
                                ? load_checkpoint(config.init_checkpoint_path())
                                : cluster_init(config, images);
    const auto subsets = make_subsets(static_cast<int>(images.size()), config.train.subset_size,
                                      static_cast<std::uint64_t>(config.train.seed));
    sims = compute_subset_similarity(images, layer, subsets, config.train.common_size,
                                     config.threads);
  }
  std::map<std::string, int> index_of;
  for (int i = 0; i < static_cast<int>(images.size()); ++i) index_of[images[i].id] = i;
  std::vector<FeatureMap> normalized(images.size());
  parallel_for(static_cast<int>(images.size()), config.threads,
               [&](int i) { normalized[i] = spatial_max_normalize(images[i].backbone); });

  const AlignmentOptions base = alignment_options(config.train);
  nlohmann::json doc = nlohmann::json::array();
  for (const SimilarityMatrix& sim : sims) {
    for (const std::string& id : sim.ids()) {
      std::vector<std::string> candidates;
      for (const std::string& other : sim.ids()) {
        if (other != id) candidates.push_back(other);
      }
      if (candidates.empty()) continue;
      const int dst = index_of.at(id);
      nlohmann::json pool = nlohmann::json::array();
      for (const std::string& other : top_k_pool(sim, id, config.train.top_k, candidates)) {
        const int src = index_of.at(other);
        AlignmentOptions o = base;
        o.seed = pair_seed(static_cast<std::uint64_t>(config.train.seed), dst, src);
        const AlignmentEstimate est = estimate_alignment(normalized[dst], normalized[src], o);
        pool.push_back({{"source", other},
                        {"theta", est.transform.theta()},
                        {"inlier_count", est.inlier_count},
                        {"match_count", est.match_count},
                        {"fallback", est.fallback}});
      }
      doc.push_back({{"image_id", id}, {"pool", pool}});
    }
  }
  if (dump) write_text_atomic(config.out_path() / "alignments.json", doc.dump(2) + "\n");
  return doc;
}

}  // namespace partdisc
