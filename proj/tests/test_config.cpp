#include <fstream>

#include "doctest.h"
#include "partdisc/config.hpp"
#include "partdisc/errors.hpp"
#include "test_util.hpp"

using namespace partdisc;

TEST_CASE("published defaults") {
  const RunConfig c;
  CHECK(c.train.top_k == 15);
  CHECK(c.train.subset_size == 2000);
  CHECK(c.train.cosine_threshold == 0.6);
  CHECK(c.train.transform_family == "affine");
  CHECK(c.train.max_per_channel == 3);
  CHECK(c.train.suppress_radius == 0);
  CHECK(c.train.learning_rate == 5e-3);
  CHECK(c.train.lr_decay == 0.1);
  CHECK(c.train.n_clusters == 512);
  CHECK(c.nms_iou == 0.3);
  CHECK(c.iou_threshold == 0.5);
  CHECK(c.l2_threshold == 0.1);
  CHECK(c.to_toml().find("nms_iou = 0.3\n") != std::string::npos);
}

TEST_CASE("set parses typed values") {
  RunConfig c;
  c.set("top_k", "7");
  c.set("learning_rate", "1e-2");
  c.set("transform_family", "\"none\"");
  c.set("include_self_in_pseudo_gt", "true");
  c.set("seed", "-3");
  c.set("out_dir", "runs/a");
  c.set("cluster_sample", "100_000");
  CHECK(c.train.top_k == 7);
  CHECK(c.train.learning_rate == 1e-2);
  CHECK(c.train.transform_family == "none");
  CHECK(c.train.include_self_in_pseudo_gt);
  CHECK(c.train.seed == -3);
  CHECK(c.out_dir == "runs/a");
  CHECK(c.train.cluster_sample == 100000);

  CHECK_THROWS_AS(c.set("top_k", "seven"), UsageError);
  CHECK_THROWS_AS(c.set("top_k", "1.5"), UsageError);
  CHECK_THROWS_AS(c.set("include_self_in_pseudo_gt", "yes"), UsageError);
  CHECK_THROWS_WITH_AS(c.set("no_such_key", "1"), doctest::Contains("unknown key"), UsageError);
}

TEST_CASE("TOML files") {
  RunConfig c;
  apply_toml(c,
             "# experiment\n"
             "top_k = 9   # pool\n"
             "transform_family = \"translation\"\n"
             "\n"
             "metrics = 'm#1.json'\n");
  CHECK(c.train.top_k == 9);
  CHECK(c.train.transform_family == "translation");
  CHECK(c.metrics == "m#1.json");

  CHECK_THROWS_WITH_AS(apply_toml(c, "top_k = 3\n[train]\n"), doctest::Contains("line 2"),
                       UsageError);
  CHECK_THROWS_WITH_AS(apply_toml(c, "top_k 3\n"), doctest::Contains("line 1"), UsageError);

  // Everything printed reads back to the same config.
  RunConfig d;
  d.set("epochs", "2");
  d.set("synth_distractor_placement", "\"random\"");
  RunConfig e;
  apply_toml(e, d.to_toml());
  CHECK(e.to_json() == d.to_json());

  const TempDir dir("cfg");
  CHECK_THROWS_AS(load_config_file(c, dir / "absent.toml"), UsageError);
}

TEST_CASE("derived paths") {
  RunConfig c;
  c.out_dir = "o";
  CHECK(c.manifest_path() == std::filesystem::path("o/manifest.json"));
  CHECK(c.checkpoint_path() == std::filesystem::path("o/part_layer.ckpt"));
  CHECK(c.similarity_dir() == std::filesystem::path("o/similarity"));
  c.checkpoint = "elsewhere.ckpt";
  CHECK(c.checkpoint_path() == std::filesystem::path("elsewhere.ckpt"));
}
