#pragma once

#include <span>
#include <vector>

#include "partdisc/alignment.hpp"
#include "partdisc/feature_map.hpp"
#include "partdisc/part_layer.hpp"
#include "partdisc/pseudo_gt.hpp"

namespace partdisc {

// Part-layer forward pass of one map, kept in double for backpropagation.
struct LayerActivation {
  int height = 0;
  int width = 0;
  RowMatrix normalized;  // cells x c_i, unit rows (zero rows stay zero)
  RowMatrix probs;       // cells x c_o
};

LayerActivation activate(const FeatureMap& backbone, const PartLayer& layer);
FeatureMap to_feature_map(const LayerActivation& act);
FeatureMap to_feature_map(const RowMatrix& cells, int height, int width);

// Everything the backward pass needs for one training step. Member 0 is the
// training image itself (identity, valid everywhere); members 1.. are the
// pool maps warped onto its canvas.
struct PipelineTape {
  int height = 0;
  int width = 0;
  std::vector<LayerActivation> activations;
  std::vector<WarpPlan> plans;  // plans[m - 1] belongs to member m
  std::vector<RowMatrix> warped;  // canvas-resolution maps, one per member
  std::vector<CellMask> masks;
  std::vector<int> valid_count;  // per canvas cell
  RowMatrix mean;  // canvas cells x c_o
};

// transforms[i] maps pool member i onto the training image's grid.
PipelineTape run_pipeline_forward(const PartLayer& layer, const FeatureMap& self_backbone,
                                  std::span<const FeatureMap* const> pool_backbones,
                                  std::span<const SpatialTransform> transforms);

// Same as run_pipeline_forward but with activations computed elsewhere.
PipelineTape assemble_tape(std::vector<LayerActivation> activations,
                           std::span<const SpatialTransform> transforms);

// Gradient of the loss with respect to the weights, given dLoss/dMean
// (canvas cells x c_o). Flows back through the masked mean, the transposed
// warp and the softmax.
RowMatrix backward_through_pipeline(const PipelineTape& tape, const RowMatrix& grad_mean);

struct StepResult {
  double loss = 0;
  RowMatrix gradient;  // c_o x c_i
};

// Loss of the averaged map against fixed labels, with its weight gradient.
StepResult pipeline_loss_and_gradient(const PipelineTape& tape, const PseudoGT& labels);

}  // namespace partdisc
