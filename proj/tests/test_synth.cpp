#include <cmath>

#include "doctest.h"
#include "partdisc/errors.hpp"
#include "partdisc/manifest.hpp"
#include "partdisc/synth.hpp"
#include "test_util.hpp"

using namespace partdisc;

TEST_CASE("noise-free identity scenes equal the template") {
  SynthParams p;
  p.n_images = 4;
  p.noise = 0;
  p.scale_min = p.scale_max = 1.0;
  p.max_rotation_deg = 0;
  p.max_translation = 0;
  p.distractors_per_part = 0;
  const SyntheticDataset ds = generate_dataset(p);
  for (const SyntheticScene& s : ds.scenes) {
    CHECK(s.backbone == ds.canonical);
    CHECK(s.true_parts == ds.canonical_parts);
  }
}

TEST_CASE("generator output is deterministic and complete") {
  SynthParams p;
  p.seed = 11;
  const TempDir a("synth"), b("synth");
  const DatasetManifest ma = write_dataset(generate_dataset(p), p, a.path());
  write_dataset(generate_dataset(p), p, b.path());
  CHECK(read_bytes(a / "manifest.json") == read_bytes(b / "manifest.json"));
  REQUIRE(ma.entries.size() == 40);
  for (const ManifestEntry& e : ma.entries) {
    CHECK(read_bytes(a.path() / e.feature_path) == read_bytes(b.path() / e.feature_path));
    REQUIRE(e.landmarks.has_value());
    CHECK(e.landmarks->size() == 5);
    CHECK(e.part_boxes->size() == 5);
  }
  const DatasetManifest loaded = load_manifest(a / "manifest.json");
  CHECK(loaded.ids() == ma.ids());

  SynthParams q = p;
  q.seed = 12;
  CHECK_FALSE(generate_dataset(q).scenes[0].backbone == generate_dataset(p).scenes[0].backbone);
}

TEST_CASE("scene invariants") {
  SynthParams p;
  p.seed = 5;
  const SyntheticDataset ds = generate_dataset(p);
  for (const SyntheticScene& s : ds.scenes) {
    REQUIRE(s.true_parts.size() == 5);
    for (int part = 0; part < 5; ++part) {
      const auto v = s.backbone.cell(s.true_parts[part].row, s.true_parts[part].col);
      // Prototype direction plus noise of norm at most 0.1.
      double off = 0;
      for (int c = 0; c < p.channels; ++c) {
        const double want = c == part ? 1.0 : 0.0;
        off += (v[c] - want) * (v[c] - want);
      }
      CHECK(std::sqrt(off) <= 0.1 + 1e-6);
    }
    for (float x : s.backbone.data()) CHECK(x >= 0.0f);
    const auto th = s.applied_transform.theta();
    const double scale = std::hypot(th[0], th[3]);
    CHECK(scale >= 0.9 - 1e-9);
    CHECK(scale <= 1.1 + 1e-9);
    CHECK(std::abs(std::atan2(th[3], th[0])) <= 10 * M_PI / 180 + 1e-9);
  }
}

TEST_CASE("prototypes are mutually orthogonal unit vectors") {
  SynthParams p;
  p.noise = 0;
  const SyntheticDataset ds = generate_dataset(p);
  for (int a = 0; a < 5; ++a) {
    const auto va = ds.canonical.cell(ds.canonical_parts[a].row, ds.canonical_parts[a].col);
    double self = 0;
    for (float x : va) self += x * x;
    CHECK(self == doctest::Approx(1.0));
    for (int b = a + 1; b < 5; ++b) {
      const auto vb = ds.canonical.cell(ds.canonical_parts[b].row, ds.canonical_parts[b].col);
      double dot = 0;
      for (int c = 0; c < p.channels; ++c) dot += va[c] * vb[c];
      CHECK(dot == 0.0);
    }
  }
}

TEST_CASE("parameter validation") {
  SynthParams p;
  p.n_parts = 200;
  CHECK_THROWS_AS(generate_dataset(p), UsageError);
  p = {};
  p.grid = 6;
  CHECK_THROWS_AS(generate_dataset(p), UsageError);
  p = {};
  p.noise = 0.2;
  CHECK_THROWS_AS(generate_dataset(p), UsageError);
  p = {};
  p.distractor_placement = "scattered";
  CHECK_THROWS_AS(generate_dataset(p), UsageError);
  for (const char* mode : {"fixed", "near", "random"}) {
    p = {};
    p.n_images = 3;
    p.distractor_placement = mode;
    CHECK_NOTHROW(generate_dataset(p));
  }
}
