#pragma once

// Central finite-difference check of the full training-step gradient on small
// random pipelines: self map plus a warped pool, masked mean, NLL.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "partdisc/pipeline.hpp"
#include "partdisc/pseudo_gt.hpp"

namespace gradcheck {

struct Instance {
  partdisc::PartLayer layer;
  partdisc::FeatureMap self;
  std::vector<partdisc::FeatureMap> pool;
  std::vector<partdisc::SpatialTransform> transforms;
  partdisc::PseudoGT labels;
};

inline Instance make_instance(std::uint64_t seed, int h = 4, int w = 4, int c_i = 3, int c_o = 4,
                              int pool_size = 2) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.self = oracle::random_map(rng, h, w, c_i);
  for (int i = 0; i < pool_size; ++i) in.pool.push_back(oracle::random_map(rng, h, w, c_i));
  std::normal_distribution<double> g(0, 1);
  in.layer.weights.resize(c_o, c_i);
  for (int r = 0; r < c_o; ++r) {
    for (int c = 0; c < c_i; ++c) in.layer.weights(r, c) = g(rng);
  }
  // Small rotations and sub-cell shifts so bilinear taps and partial
  // validity both show up.
  std::uniform_real_distribution<double> rot(-10, 10), sh(-0.8, 0.8), sc(0.9, 1.1);
  for (int i = 0; i < pool_size; ++i) {
    const double th = rot(rng) * std::numbers::pi / 180, s = sc(rng);
    in.transforms.push_back(partdisc::SpatialTransform::affine(
        {s * std::cos(th), -s * std::sin(th), sh(rng), s * std::sin(th), s * std::cos(th), sh(rng)}));
  }
  std::vector<const partdisc::FeatureMap*> ptrs;
  for (const auto& p : in.pool) ptrs.push_back(&p);
  const partdisc::PipelineTape tape =
      partdisc::run_pipeline_forward(in.layer, in.self, ptrs, in.transforms);
  in.labels = partdisc::generate_pseudo_gt(partdisc::to_feature_map(tape.mean, h, w), 3, 0);
  return in;
}

inline double loss_at(const Instance& in, const partdisc::PartLayer& layer) {
  std::vector<const partdisc::FeatureMap*> ptrs;
  for (const auto& p : in.pool) ptrs.push_back(&p);
  const partdisc::PipelineTape tape =
      partdisc::run_pipeline_forward(layer, in.self, ptrs, in.transforms);
  return partdisc::nll_loss(tape.mean, in.labels).loss;
}

// Denominator floor for entries whose gradient is essentially zero.
inline constexpr double kRelativeFloor = 1e-6;

// Largest per-entry |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double max_relative_error(const Instance& in, double eps = 1e-4) {
  std::vector<const partdisc::FeatureMap*> ptrs;
  for (const auto& p : in.pool) ptrs.push_back(&p);
  const partdisc::PipelineTape tape =
      partdisc::run_pipeline_forward(in.layer, in.self, ptrs, in.transforms);
  const partdisc::StepResult step = partdisc::pipeline_loss_and_gradient(tape, in.labels);
  double worst = 0;
  for (int r = 0; r < in.layer.out_channels(); ++r) {
    for (int c = 0; c < in.layer.in_channels(); ++c) {
      partdisc::PartLayer plus = in.layer, minus = in.layer;
      plus.weights(r, c) += eps;
      minus.weights(r, c) -= eps;
      const double numeric = (loss_at(in, plus) - loss_at(in, minus)) / (2 * eps);
      const double analytic = step.gradient(r, c);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace gradcheck
