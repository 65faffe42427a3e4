#include "partdisc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "partdisc/errors.hpp"
#include "partdisc/npy.hpp"

namespace partdisc {
namespace {

// Template margin (cells) so every transformed image cell still lands on the
// template: covers the largest corner displacement of the allowed affines.
int template_margin(const SynthParams& p) {
  const double half_diag = std::numbers::sqrt2 * (p.grid - 1) / 2.0;
  const double rot = p.max_rotation_deg * std::numbers::pi / 180.0;
  const double shift = half_diag * (std::abs(p.scale_max - 1.0) + std::abs(p.scale_min - 1.0) +
                                    2.0 * std::sin(rot / 2.0)) +
                       p.max_translation;
  return static_cast<int>(std::ceil(shift)) + 2;
}

void validate(const SynthParams& p) {
  auto fail = [](const std::string& what) { throw UsageError("synth: " + what); };
  if (p.n_images < 1) fail("n_images must be >= 1");
  if (p.n_parts < 1) fail("n_parts must be >= 1");
  if (p.n_parts >= p.channels) fail("n_parts must be < channels");
  if (p.grid < 8) fail("grid must be >= 8");
  if (p.regions < 1) fail("regions must be >= 1");
  if (p.part_radius <= 0 || p.part_radius > 0.45) fail("part_radius must lie in (0, 0.45]");
  if (p.channels < 2 * p.n_parts + p.regions + 3) {
    fail("channels must be >= 2*n_parts + regions + 3");
  }
  if (p.noise < 0 || p.noise > 0.1) fail("noise must lie in [0, 0.1]");
  if (p.image_size < p.grid) fail("image_size must be >= grid");
  if (p.box_side <= 0) fail("box_side must be positive");
  if (p.scale_min <= 0 || p.scale_max < p.scale_min) fail("bad scale range");
  if (p.max_rotation_deg < 0 || p.max_translation < 0) fail("negative transform range");
  if (p.distractors_per_part < 0) fail("negative distractors_per_part");
  if (p.distractor_placement != "fixed" && p.distractor_placement != "near" &&
      p.distractor_placement != "random") {
    fail("distractor_placement must be fixed, near or random");
  }
  if (p.distractor_similarity < 0 || p.distractor_similarity > 1) {
    fail("distractor_similarity must lie in [0, 1]");
  }
}

// Background vectors of the template: a region direction plus a sparse
// texture code. Codes are 3-subsets of the texture dims that share at most one
// dim with any earlier code while such subsets remain easy to find.
std::vector<std::vector<float>> build_template(const SynthParams& p, int size, int margin,
                                               std::mt19937_64& rng) {
  const int texture_base = 2 * p.n_parts + p.regions;
  const int texture_dims = p.channels - texture_base;
  std::uniform_int_distribution<int> dim(0, texture_dims - 1);
  std::vector<unsigned char> pair_used(static_cast<std::size_t>(texture_dims) * texture_dims, 0);
  const double ctr = (p.grid - 1) / 2.0;
  const double object_radius = 0.4 * p.grid;

  std::vector<std::vector<float>> cells(static_cast<std::size_t>(size) * size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      std::vector<float> v(p.channels, 0.0f);
      const double dr = r - margin - ctr, dc = c - margin - ctr;
      int region = 0;
      if (p.regions > 1 && std::hypot(dr, dc) <= object_radius) {
        const double angle = std::atan2(dr, dc) + std::numbers::pi;
        region = 1 + std::min(p.regions - 2,
                              static_cast<int>(angle / (2 * std::numbers::pi) * (p.regions - 1)));
      }
      v[2 * p.n_parts + region] = 1.0f;

      std::array<int, 3> code{};
      for (int attempt = 0;; ++attempt) {
        code = {dim(rng), dim(rng), dim(rng)};
        if (code[0] == code[1] || code[0] == code[2] || code[1] == code[2]) continue;
        const bool fresh = !pair_used[code[0] * texture_dims + code[1]] &&
                           !pair_used[code[0] * texture_dims + code[2]] &&
                           !pair_used[code[1] * texture_dims + code[2]];
        if (fresh || attempt > 400) break;
      }
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          if (i != j) pair_used[code[i] * texture_dims + code[j]] = 1;
        }
        v[texture_base + code[i]] += static_cast<float>(p.texture_strength);
      }
      cells[static_cast<std::size_t>(r) * size + c] = std::move(v);
    }
  }
  return cells;
}

std::vector<GridCell> canonical_part_cells(const SynthParams& p) {
  const double ctr = (p.grid - 1) / 2.0;
  const double radius = p.part_radius * p.grid;
  std::vector<GridCell> parts;
  for (int i = 0; i < p.n_parts; ++i) {
    const double a = 2 * std::numbers::pi * i / p.n_parts + 0.3;
    GridCell g{static_cast<int>(std::lround(ctr + radius * std::sin(a))),
               static_cast<int>(std::lround(ctr + radius * std::cos(a)))};
    if (std::find(parts.begin(), parts.end(), g) != parts.end()) {
      throw UsageError("synth: too many parts for the grid size");
    }
    parts.push_back(g);
  }
  return parts;
}

SpatialTransform draw_transform(const SynthParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> scale(p.scale_min, p.scale_max);
  std::uniform_real_distribution<double> rot(-p.max_rotation_deg, p.max_rotation_deg);
  std::uniform_real_distribution<double> shift(-p.max_translation, p.max_translation);
  const double s = scale(rng);
  const double th = rot(rng) * std::numbers::pi / 180.0;
  const double tr = shift(rng), tc = shift(rng);
  const double ctr = (p.grid - 1) / 2.0;
  const double a = s * std::cos(th), b = -s * std::sin(th);
  const double c = s * std::sin(th), d = s * std::cos(th);
  // p' = ctr + A (p - ctr) + t
  return SpatialTransform::affine(
      {a, b, ctr - a * ctr - b * ctr + tr, c, d, ctr - c * ctr - d * ctr + tc});
}

FeatureMap render(const SynthParams& p, const std::vector<std::vector<float>>& tmpl, int size,
                  int margin, const SpatialTransform& transform,
                  const std::vector<GridCell>& parts_out) {
  FeatureMap fm(p.grid, p.grid, p.channels);
  const SpatialTransform inv = transform.inverse();
  for (int y = 0; y < p.grid; ++y) {
    for (int x = 0; x < p.grid; ++x) {
      const GridPoint s = inv.apply({static_cast<double>(y), static_cast<double>(x)});
      const int r = std::clamp(static_cast<int>(std::lround(s.row)) + margin, 0, size - 1);
      const int c = std::clamp(static_cast<int>(std::lround(s.col)) + margin, 0, size - 1);
      const auto& v = tmpl[static_cast<std::size_t>(r) * size + c];
      std::copy(v.begin(), v.end(), fm.cell(y, x).begin());
    }
  }
  for (int i = 0; i < p.n_parts; ++i) {
    auto cell = fm.cell(parts_out[i].row, parts_out[i].col);
    std::fill(cell.begin(), cell.end(), 0.0f);
    cell[i] = 1.0f;
  }
  return fm;
}

int chebyshev(const GridCell& a, const GridCell& b) {
  return std::max(std::abs(a.row - b.row), std::abs(a.col - b.col));
}

}  // namespace

SyntheticDataset generate_dataset(const SynthParams& params) {
  validate(params);
  const int margin = template_margin(params);
  const int size = params.grid + 2 * margin;
  std::mt19937_64 template_rng(params.seed);
  const auto tmpl = build_template(params, size, margin, template_rng);

  SyntheticDataset ds;
  ds.canonical_parts = canonical_part_cells(params);
  ds.canonical = render(params, tmpl, size, margin, SpatialTransform::identity(),
                        ds.canonical_parts);

  for (int i = 0; i < params.n_images; ++i) {
    SyntheticScene scene;
    scene.seed = params.seed * 1000003ull + static_cast<std::uint64_t>(i) + 1;
    std::mt19937_64 rng(scene.seed);
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04d", i);
    scene.id = id;
    scene.applied_transform = draw_transform(params, rng);

    for (const GridCell& g : ds.canonical_parts) {
      const GridPoint q = scene.applied_transform.apply(
          {static_cast<double>(g.row), static_cast<double>(g.col)});
      GridCell out{std::clamp(static_cast<int>(std::lround(q.row)), 0, params.grid - 1),
                   std::clamp(static_cast<int>(std::lround(q.col)), 0, params.grid - 1)};
      if (std::find(scene.true_parts.begin(), scene.true_parts.end(), out) !=
          scene.true_parts.end()) {
        throw InvariantError("synth: two parts collided after transforming");
      }
      scene.true_parts.push_back(out);
    }
    scene.backbone = render(params, tmpl, size, margin, scene.applied_transform, scene.true_parts);

    std::vector<GridCell> occupied = scene.true_parts;
    const double a = params.distractor_similarity;
    const double b = std::sqrt(std::max(0.0, 1.0 - a * a));
    for (int part = 0; part < params.n_parts; ++part) {
      for (int n = 0; n < params.distractors_per_part; ++n) {
        GridCell anchor{};
        if (params.distractor_placement == "fixed") {
          // Same image cell in every image, between the parts' angles.
          const double ctr = (params.grid - 1) / 2.0;
          const double ang = 2 * std::numbers::pi *
                                 (part + (n + 1.0) / (params.distractors_per_part + 1)) /
                                 params.n_parts + 0.3;
          anchor = {static_cast<int>(std::lround(ctr + 0.42 * params.grid * std::sin(ang))),
                    static_cast<int>(std::lround(ctr + 0.42 * params.grid * std::cos(ang)))};
        }
        std::vector<GridCell> free;
        int best = std::numeric_limits<int>::max();
        for (int y = 0; y < params.grid; ++y) {
          for (int x = 0; x < params.grid; ++x) {
            const GridCell g{y, x};
            int gap = 3;
            int rank = 0;
            if (params.distractor_placement == "fixed") {
              gap = 2;
              rank = std::abs(y - anchor.row) + std::abs(x - anchor.col);
            } else if (params.distractor_placement == "near") {
              const int d = chebyshev(g, scene.true_parts[part]);
              if (d < 2 || d > 3) continue;
              gap = 2;
            }
            if (!std::all_of(occupied.begin(), occupied.end(),
                             [&](const GridCell& o) { return chebyshev(o, g) >= gap; })) {
              continue;
            }
            // "fixed" keeps only the free cells closest to the anchor.
            if (rank < best) {
              best = rank;
              free.clear();
            }
            if (rank == best) free.push_back(g);
          }
        }
        if (free.empty()) break;
        std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
        const GridCell g = free[pick(rng)];
        occupied.push_back(g);
        auto cell = scene.backbone.cell(g.row, g.col);
        std::fill(cell.begin(), cell.end(), 0.0f);
        cell[part] = static_cast<float>(a);
        cell[params.n_parts + part] = static_cast<float>(b);
      }
    }

    if (params.noise > 0) {
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::vector<double> n(params.channels);
      for (int k = 0; k < scene.backbone.cells(); ++k) {
        double norm = 0;
        for (double& v : n) {
          v = gauss(rng);
          norm += v * v;
        }
        norm = std::sqrt(norm);
        const double scale = norm > 0 ? params.noise / norm : 0.0;
        float* cell = scene.backbone.data().data() + static_cast<std::size_t>(k) * params.channels;
        for (int ch = 0; ch < params.channels; ++ch) {
          cell[ch] = std::max(0.0f, static_cast<float>(cell[ch] + n[ch] * scale));
        }
      }
    }
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

DatasetManifest write_dataset(const SyntheticDataset& dataset, const SynthParams& params,
                              const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "features");
  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  const double cell_px = static_cast<double>(params.image_size) / params.grid;
  const double half = params.box_side / 2;
  const double limit = params.image_size;
  for (const SyntheticScene& s : dataset.scenes) {
    const std::string rel = "features/" + s.id + ".npy";
    save_feature_map(out_dir / rel, s.backbone);
    ManifestEntry e;
    e.image_id = s.id;
    e.feature_path = rel;
    e.image_height = params.image_size;
    e.image_width = params.image_size;
    e.category = "synthetic";
    std::vector<NamedPoint> landmarks;
    std::vector<NamedBox> boxes;
    for (int p = 0; p < static_cast<int>(s.true_parts.size()); ++p) {
      const std::string name = "part_" + std::to_string(p);
      const double x = (s.true_parts[p].col + 0.5) * cell_px;
      const double y = (s.true_parts[p].row + 0.5) * cell_px;
      landmarks.push_back({name, x, y});
      boxes.push_back({name,
                       {std::max(0.0, x - half), std::max(0.0, y - half), std::min(limit, x + half),
                        std::min(limit, y + half)}});
    }
    e.landmarks = std::move(landmarks);
    e.part_boxes = std::move(boxes);
    manifest.entries.push_back(std::move(e));
  }
  save_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

PseudoGT oracle_pseudo_gt(const FeatureMap& mean_map, int cap, int radius) {
  const int h = mean_map.height(), w = mean_map.width(), c = mean_map.channels();
  if (c < 2) throw DataError("oracle_pseudo_gt: need at least 2 channels");
  if (cap < 1) throw UsageError("oracle_pseudo_gt: cap must be >= 1");
  if (radius < 0) throw UsageError("oracle_pseudo_gt: negative radius");
  for (float v : mean_map.data()) {
    if (!(v >= 0.0f) || !std::isfinite(v)) throw DataError("oracle_pseudo_gt: bad mean map value");
  }
  const double gone = -std::numeric_limits<double>::infinity();
  std::vector<double> m(mean_map.data().begin(), mean_map.data().end());
  auto at = [&](int y, int x, int ch) -> double& { return m[(static_cast<std::size_t>(y) * w + x) * c + ch]; };
  PseudoGT gt{h, w, std::vector<int>(static_cast<std::size_t>(h) * w, -1)};
  std::vector<int> used(c, 0);
  for (int iter = 0; iter < h * w; ++iter) {
    int by = 0, bx = 0, bc = 0;
    double best = gone;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch) {
          if (at(y, x, ch) > best) {
            best = at(y, x, ch);
            by = y;
            bx = x;
            bc = ch;
          }
        }
      }
    }
    gt.labels[static_cast<std::size_t>(by) * w + bx] = bc;
    for (int ch = 0; ch < c; ++ch) at(by, bx, ch) = gone;
    used[bc] += 1;
    if (bc != c - 1) {
      for (int y = by - radius; y <= by + radius; ++y) {
        for (int x = bx - radius; x <= bx + radius; ++x) {
          if (y >= 0 && y < h && x >= 0 && x < w) at(y, x, bc) = gone;
        }
      }
      if (used[bc] >= cap) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) at(y, x, bc) = gone;
        }
      }
    }
  }
  return gt;
}

SpatialTransform oracle_affine_fit(std::span<const Match> matches) {
  if (matches.size() < 3) throw DataError("oracle_affine_fit: need >= 3 matches");
  // Normal equations N z = r for each output coordinate, N = sum [s 1][s 1]^T.
  double n[3][3] = {};
  double rr[3] = {}, rc[3] = {};
  for (const Match& mt : matches) {
    const double s[3] = {mt.src.row, mt.src.col, 1.0};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) n[i][j] += s[i] * s[j];
      rr[i] += s[i] * mt.dst.row;
      rc[i] += s[i] * mt.dst.col;
    }
  }
  // Gauss-Jordan with partial pivoting on [N | rr rc].
  double aug[3][5];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) aug[i][j] = n[i][j];
    aug[i][3] = rr[i];
    aug[i][4] = rc[i];
  }
  double scale = 0;
  for (int i = 0; i < 3; ++i) scale = std::max(scale, std::abs(n[i][i]));
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(aug[r][col]) > std::abs(aug[piv][col])) piv = r;
    }
    if (std::abs(aug[piv][col]) <= 1e-10 * std::max(1.0, scale)) {
      throw DataError("oracle_affine_fit: collinear input");
    }
    std::swap(aug[piv], aug[col]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = aug[r][col] / aug[col][col];
      for (int k = col; k < 5; ++k) aug[r][k] -= f * aug[col][k];
    }
  }
  std::array<double, 6> theta{};
  for (int i = 0; i < 3; ++i) {
    theta[i] = aug[i][3] / aug[i][i];
    theta[3 + i] = aug[i][4] / aug[i][i];
  }
  return SpatialTransform::affine(theta);
}

}  // namespace partdisc
