#include <algorithm>
#include <map>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "partdisc/errors.hpp"
#include "partdisc/pseudo_gt.hpp"
#include "partdisc/synth.hpp"
#include "test_util.hpp"

using namespace partdisc;

namespace {

FeatureMap two_channel(const std::vector<float>& ch0, const std::vector<float>& ch1) {
  FeatureMap fm(2, 2, 2);
  for (int k = 0; k < 4; ++k) {
    fm.data()[k * 2] = ch0[k];
    fm.data()[k * 2 + 1] = ch1[k];
  }
  return fm;
}

}  // namespace

TEST_CASE("average_aligned examples") {
  std::mt19937_64 rng(1);
  const FeatureMap a = oracle::random_map(rng, 2, 3, 2);
  const std::vector<FeatureMap> one{a};
  const std::vector<CellMask> all{CellMask(2, 3, true)};
  CHECK(average_aligned(one, all) == a);

  const std::vector<FeatureMap> two{FeatureMap(1, 1, 1, 0.2f), FeatureMap(1, 1, 1, 0.6f)};
  const std::vector<CellMask> both{CellMask(1, 1, true), CellMask(1, 1, true)};
  CHECK(average_aligned(two, both).data()[0] == doctest::Approx(0.4));

  const FeatureMap b = oracle::random_map(rng, 2, 3, 2);
  std::vector<CellMask> masks{CellMask(2, 3, true), CellMask(2, 3, true)};
  masks[1].valid[4] = 0;
  const std::vector<FeatureMap> ab{a, b};
  const FeatureMap m = average_aligned(ab, masks);
  for (int k = 0; k < 6; ++k) {
    for (int c = 0; c < 2; ++c) {
      const float want = k == 4 ? a.cell(k)[c] : (a.cell(k)[c] + b.cell(k)[c]) / 2;
      CHECK(m.cell(k)[c] == doctest::Approx(want));
    }
  }

  // No valid contributor at a cell: the first map's value is copied.
  std::vector<CellMask> none{CellMask(2, 3, false), CellMask(2, 3, true)};
  none[1].valid[0] = 0;
  const FeatureMap n = average_aligned(ab, none);
  CHECK(n.cell(0)[0] == a.cell(0)[0]);
  CHECK(n.cell(1)[1] == b.cell(1)[1]);

  const std::vector<FeatureMap> empty;
  const std::vector<CellMask> no_masks;
  CHECK_THROWS(average_aligned(empty, no_masks));
  const std::vector<FeatureMap> mixed{a, FeatureMap(3, 3, 2)};
  CHECK_THROWS_AS(average_aligned(mixed, both), DataError);
}

TEST_CASE("generate_pseudo_gt examples") {
  const FeatureMap m1 = two_channel({0.9f, 0.8f, 0.1f, 0.2f}, {0.1f, 0.2f, 0.9f, 0.8f});
  const PseudoGT g1 = generate_pseudo_gt(m1, 3, 0);
  CHECK(g1.labels == std::vector<int>{0, 0, 1, 1});
  CHECK(g1 == oracle_pseudo_gt(m1, 3, 0));

  const FeatureMap m2 = two_channel({0.9f, 0.9f, 0.9f, 0.9f}, {0.1f, 0.1f, 0.1f, 0.1f});
  const PseudoGT g2 = generate_pseudo_gt(m2, 3, 0);
  CHECK(g2.labels == std::vector<int>{0, 0, 0, 1});
  CHECK(g2 == oracle_pseudo_gt(m2, 3, 0));

  CHECK_THROWS_AS(generate_pseudo_gt(FeatureMap(2, 2, 1, 0.5f), 3, 0), DataError);
}

TEST_CASE("generate_pseudo_gt respects the cap and fills every cell") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 50; ++t) {
    const int h = 1 + static_cast<int>(rng() % 8), w = 1 + static_cast<int>(rng() % 8);
    const int c = 2 + static_cast<int>(rng() % 5);
    const FeatureMap m = oracle::random_map(rng, h, w, c);
    for (int cap : {1, 3}) {
      const PseudoGT g = generate_pseudo_gt(m, cap, 0);
      std::map<int, int> counts;
      for (int l : g.labels) {
        CHECK(l >= 0);
        CHECK(l < c);
        ++counts[l];
      }
      for (const auto& [label, n] : counts) {
        if (label != c - 1) CHECK(n <= cap);
      }
    }
  }
}

TEST_CASE("suppression radius keeps same-label cells apart") {
  std::mt19937_64 rng(32);
  for (int t = 0; t < 50; ++t) {
    const FeatureMap m = oracle::random_map(rng, 8, 8, 4);
    for (int r : {1, 2}) {
      const PseudoGT g = generate_pseudo_gt(m, 3, r);
      for (int a = 0; a < 64; ++a) {
        for (int b = a + 1; b < 64; ++b) {
          if (g.labels[a] != g.labels[b] || g.labels[a] == 3) continue;
          const int d = std::max(std::abs(a / 8 - b / 8), std::abs(a % 8 - b % 8));
          CHECK(d > r);
        }
      }
    }
  }
}

TEST_CASE("generate_pseudo_gt matches the literal reference") {
  std::mt19937_64 rng(33);
  for (int t = 0; t < 60; ++t) {
    const int h = 1 + static_cast<int>(rng() % 8), w = 1 + static_cast<int>(rng() % 8);
    const int c = 2 + static_cast<int>(rng() % 5);
    FeatureMap m = oracle::random_map(rng, h, w, c);
    // Quantize some tensors so ties actually happen.
    if (t % 2) {
      for (float& v : m.data()) v = std::round(v * 4) / 4;
    }
    for (int cap : {1, 3}) {
      for (int r : {0, 1, 2}) CHECK(generate_pseudo_gt(m, cap, r) == oracle_pseudo_gt(m, cap, r));
    }
  }
}

TEST_CASE("uncapped labelling is the per-cell argmax") {
  std::mt19937_64 rng(34);
  const FeatureMap m = oracle::random_map(rng, 4, 5, 3);
  const PseudoGT g = oracle_pseudo_gt(m, 20, 0);
  for (int k = 0; k < 20; ++k) {
    const auto v = m.cell(k);
    CHECK(g.labels[k] == std::max_element(v.begin(), v.end()) - v.begin());
  }
  CHECK(generate_pseudo_gt(m, 20, 0) == g);
}

TEST_CASE("permuting part channels permutes labels") {
  std::mt19937_64 rng(35);
  for (int t = 0; t < 20; ++t) {
    const int c = 5;
    const FeatureMap m = oracle::random_map(rng, 5, 5, c);
    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureMap p(5, 5, c);
    for (int k = 0; k < 25; ++k) {
      for (int ch = 0; ch < 4; ++ch) p.data()[k * c + perm[ch]] = m.cell(k)[ch];
      p.data()[k * c + 4] = m.cell(k)[4];
    }
    const PseudoGT a = generate_pseudo_gt(m, 3, 0), b = generate_pseudo_gt(p, 3, 0);
    for (int k = 0; k < 25; ++k) {
      CHECK(b.labels[k] == (a.labels[k] == 4 ? 4 : perm[a.labels[k]]));
    }
  }
}

TEST_CASE("pseudo gt PGM dump") {
  const TempDir dir("pgm");
  PseudoGT g{2, 3, {0, 1, 2, 2, 1, 0}};
  write_pseudo_gt_pgm(dir / "gt.pgm", g, 3);
  const auto bytes = read_bytes(dir / "gt.pgm");
  const std::string text(bytes.begin(), bytes.end());
  CHECK(text.rfind("P5", 0) == 0);
  CHECK(static_cast<unsigned char>(bytes.back()) == 0);
  CHECK(static_cast<unsigned char>(bytes[bytes.size() - 4]) == 255);
}
