#include <algorithm>
#include <set>

#include "doctest.h"
#include "partdisc/commands.hpp"
#include "partdisc/errors.hpp"
#include "partdisc/synth.hpp"
#include "partdisc/train.hpp"
#include "test_util.hpp"

using namespace partdisc;

namespace {

RunConfig small_run(const TempDir& dir) {
  RunConfig c;
  c.out_dir = dir.path().string();
  c.train.n_clusters = 8;
  c.box_side = 56;
  return c;
}

std::vector<TrainingImage> synth_images(int n, std::uint64_t seed) {
  SynthParams p;
  p.n_images = n;
  p.seed = seed;
  std::vector<TrainingImage> out;
  for (SyntheticScene& s : generate_dataset(p).scenes) out.push_back({s.id, std::move(s.backbone)});
  return out;
}

}  // namespace

TEST_CASE("make_subsets covers every image once") {
  for (int n : {1, 2, 5, 7, 40}) {
    for (int size : {2, 3, 2000}) {
      const auto subsets = make_subsets(n, size, 4);
      std::multiset<int> seen;
      for (const auto& s : subsets) {
        if (n > 1) CHECK(s.size() >= 2);
        CHECK(static_cast<int>(s.size()) <= std::max(size + 1, 1));
        seen.insert(s.begin(), s.end());
      }
      CHECK(static_cast<int>(seen.size()) == n);
      CHECK(std::set<int>(seen.begin(), seen.end()).size() == seen.size());
    }
  }
  CHECK(make_subsets(9, 4, 1) == make_subsets(9, 4, 1));
  CHECK_THROWS_AS(make_subsets(5, 1, 0), UsageError);
}

TEST_CASE("pair seeds are deterministic and distinct") {
  CHECK(pair_seed(1, 2, 3) == pair_seed(1, 2, 3));
  std::set<std::uint64_t> seeds;
  for (int a = 0; a < 20; ++a) {
    for (int b = 0; b < 20; ++b) seeds.insert(pair_seed(7, a, b));
  }
  CHECK(seeds.size() == 400);
  CHECK(pair_seed(7, 1, 2) != pair_seed(8, 1, 2));
}

TEST_CASE("cluster sample is capped and seeded") {
  const auto images = synth_images(3, 1);
  const VectorSample all = gather_cluster_sample(images, 0, 0);
  CHECK(all.count() == 3 * 16 * 16);
  const VectorSample some = gather_cluster_sample(images, 100, 5);
  CHECK(some.count() == 100);
  CHECK(some.values == gather_cluster_sample(images, 100, 5).values);
}

TEST_CASE("training loss decreases over the first epochs") {
  const auto images = synth_images(40, 0);
  TrainConfig cfg;
  cfg.n_clusters = 8;
  const PartLayer init = init_from_clusters(gather_cluster_sample(images, cfg.cluster_sample, 0), 8, 0);
  const auto subsets = make_subsets(40, cfg.subset_size, 0);
  const auto sims = compute_subset_similarity(images, init, subsets, cfg.common_size, 1);
  const TrainResult r = train_part_layer(images, init, cfg, sims, 1);
  REQUIRE(r.log.size() == 5);
  CHECK(r.log[1].mean_loss < r.log[0].mean_loss);
  CHECK(r.log[2].mean_loss < r.log[1].mean_loss);
  CHECK(r.log[4].learning_rate == doctest::Approx(5e-4));
  CHECK(r.log[0].learning_rate == doctest::Approx(5e-3));

  // Same inputs, same bits.
  const TrainResult again = train_part_layer(images, init, cfg, sims, 1);
  CHECK(again.layer.weights == r.layer.weights);
}

TEST_CASE("small pools, no transform and refresh all train") {
  const auto images = synth_images(6, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.top_k = 50;
  cfg.refresh_every = 1;
  const PartLayer init = init_from_clusters(gather_cluster_sample(images, 0, 0), 6, 0);
  const auto subsets = make_subsets(6, cfg.subset_size, 0);
  const auto sims = compute_subset_similarity(images, init, subsets, cfg.common_size, 1);
  const TrainResult r = train_part_layer(images, init, cfg, sims, 1);
  CHECK(r.log.size() == 2);
  CHECK(r.layer.weights.allFinite());

  cfg.transform_family = "none";
  const TrainResult n = train_part_layer(images, init, cfg, sims, 1);
  CHECK(n.log[0].alignments == 0);

  cfg.transform_family = "affine";
  cfg.match_source = "output";
  CHECK(train_part_layer(images, init, cfg, sims, 1).layer.weights.allFinite());
  cfg.match_source = "logits";
  CHECK_THROWS_AS(train_part_layer(images, init, cfg, sims, 1), UsageError);
}

TEST_CASE("commands run end to end") {
  const TempDir dir("cmds");
  RunConfig c = small_run(dir);
  c.synth_images = 12;
  c.train.epochs = 2;
  cmd_synth(c);
  cmd_sim(c);
  CHECK(std::filesystem::exists(dir / "init.ckpt"));
  CHECK(std::filesystem::exists(dir.path() / "similarity" / "chunk_000.ids.json"));
  const TrainResult r = cmd_train(c);
  CHECK(r.log.size() == 2);
  CHECK(std::filesystem::exists(dir / "part_layer.ckpt.json"));
  cmd_infer(c);
  const nlohmann::json m = cmd_eval(c);
  CHECK(m["images"]["test"] == 6);
  CHECK(m["iou"]["per_part"].size() == 5);
  CHECK(m["iou"]["mAP"].is_number());

  const nlohmann::json a = cmd_align(c, true);
  CHECK(a.size() == 12);
  CHECK(std::filesystem::exists(dir / "alignments.json"));
  CHECK(a[0]["pool"][0].contains("theta"));

  const auto dets = read_detections(c.detections_path());
  const TempDir other("cmds");
  write_detections(other / "d.jsonl", {dets.begin(), dets.end()});
  CHECK(read_detections(other / "d.jsonl") == dets);
}

TEST_CASE("missing manifest is a data error naming the path") {
  const TempDir dir("cmds");
  RunConfig c = small_run(dir);
  CHECK_THROWS_WITH_AS(cmd_train(c), doctest::Contains((dir / "manifest.json").string().c_str()),
                       DataError);
}

TEST_CASE("evaluate on perfect detections") {
  const TempDir dir("eval");
  DatasetManifest m;
  DetectionsById dets;
  for (int i = 0; i < 12; ++i) {
    ManifestEntry e;
    e.image_id = "im" + std::to_string(i);
    e.feature_path = e.image_id + ".npy";
    e.image_height = e.image_width = 100;
    const double ax = 20 + i, ay = 30, bx = 70, by = 60 - i;
    e.landmarks = std::vector<NamedPoint>{{"a", ax, ay}, {"b", bx, by}};
    e.part_boxes = std::vector<NamedBox>{{"a", {ax - 5, ay - 5, ax + 5, ay + 5}},
                                         {"b", {bx - 5, by - 5, bx + 5, by + 5}}};
    m.entries.push_back(e);
    dets[e.image_id] = {{3, bx, by, 0.8, {bx - 5, by - 5, bx + 5, by + 5}},
                        {1, ax, ay, 0.9, {ax - 5, ay - 5, ax + 5, ay + 5}}};
  }
  RunConfig c;
  const nlohmann::json r = evaluate(m, dets, c);
  CHECK(r["iou"]["mAP"] == 1.0);
  CHECK(r["iou"]["per_part"]["a"]["channel"] == 1);
  CHECK(r["iou"]["per_part"]["b"]["channel"] == 3);
  CHECK(r["l2"]["mAP"] == 1.0);
  // 4 features need 5 training images; 6 are available.
  CHECK(r["landmarks"]["status"] == "ok");
  // Ridge damping shrinks the exact fit a little.
  CHECK(r["landmarks"]["mean_error"].get<double>() < 0.5);
}
