#include "partdisc/pipeline.hpp"

#include <cmath>

#include "partdisc/errors.hpp"

namespace partdisc {

LayerActivation activate(const FeatureMap& backbone, const PartLayer& layer) {
  if (backbone.channels() != layer.in_channels()) {
    throw DataError("part layer expects " + std::to_string(layer.in_channels()) +
                    " channels, map has shape " + backbone.shape_string());
  }
  LayerActivation act;
  act.height = backbone.height();
  act.width = backbone.width();
  const int cells = backbone.cells();
  act.normalized.resize(cells, backbone.channels());
  for (int k = 0; k < cells; ++k) {
    auto v = backbone.cell(k);
    double norm = 0;
    for (float f : v) norm += static_cast<double>(f) * f;
    norm = std::sqrt(norm);
    for (int ch = 0; ch < backbone.channels(); ++ch) {
      act.normalized(k, ch) = norm > 0 ? v[ch] / norm : 0.0;
    }
  }
  act.probs = act.normalized * layer.weights.transpose();
  for (int k = 0; k < cells; ++k) {
    auto row = act.probs.row(k);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return act;
}

FeatureMap to_feature_map(const RowMatrix& cells, int height, int width) {
  FeatureMap out(height, width, static_cast<int>(cells.cols()));
  auto& d = out.data();
  for (Eigen::Index k = 0; k < cells.size(); ++k) d[k] = static_cast<float>(cells.data()[k]);
  return out;
}

FeatureMap to_feature_map(const LayerActivation& act) {
  return to_feature_map(act.probs, act.height, act.width);
}

PipelineTape assemble_tape(std::vector<LayerActivation> activations,
                           std::span<const SpatialTransform> transforms) {
  if (activations.empty()) throw UsageError("assemble_tape: no activations");
  if (activations.size() != transforms.size() + 1) {
    throw UsageError("assemble_tape: one transform per pool member required");
  }
  PipelineTape tape;
  tape.height = activations[0].height;
  tape.width = activations[0].width;
  const int cells = tape.height * tape.width;
  const int c_o = static_cast<int>(activations[0].probs.cols());

  tape.warped.push_back(activations[0].probs);
  tape.masks.emplace_back(tape.height, tape.width, true);
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    const LayerActivation& a = activations[i + 1];
    if (a.probs.cols() != c_o) throw DataError("assemble_tape: channel count mismatch");
    if (transforms[i].is_degenerate()) throw DataError("assemble_tape: degenerate transform");
    WarpPlan plan = make_warp_plan(transforms[i], a.height, a.width, tape.height, tape.width);
    RowMatrix w = RowMatrix::Zero(cells, c_o);
    for (int k = 0; k < cells; ++k) {
      if (!plan.validity.valid[k]) continue;
      for (int j = 0; j < 4; ++j) {
        if (plan.weights[k][j] != 0.0) w.row(k) += plan.weights[k][j] * a.probs.row(plan.taps[k][j]);
      }
    }
    tape.masks.push_back(plan.validity);
    tape.plans.push_back(std::move(plan));
    tape.warped.push_back(std::move(w));
  }

  tape.valid_count.assign(cells, 0);
  tape.mean = RowMatrix::Zero(cells, c_o);
  for (std::size_t m = 0; m < tape.warped.size(); ++m) {
    for (int k = 0; k < cells; ++k) {
      if (tape.masks[m].valid[k]) {
        tape.mean.row(k) += tape.warped[m].row(k);
        ++tape.valid_count[k];
      }
    }
  }
  for (int k = 0; k < cells; ++k) tape.mean.row(k) /= tape.valid_count[k];
  tape.activations = std::move(activations);
  return tape;
}

PipelineTape run_pipeline_forward(const PartLayer& layer, const FeatureMap& self_backbone,
                                  std::span<const FeatureMap* const> pool_backbones,
                                  std::span<const SpatialTransform> transforms) {
  std::vector<LayerActivation> acts;
  acts.push_back(activate(self_backbone, layer));
  for (const FeatureMap* f : pool_backbones) acts.push_back(activate(*f, layer));
  return assemble_tape(std::move(acts), transforms);
}

RowMatrix backward_through_pipeline(const PipelineTape& tape, const RowMatrix& grad_mean) {
  const int cells = tape.height * tape.width;
  if (grad_mean.rows() != cells || grad_mean.cols() != tape.mean.cols()) {
    throw UsageError("backward_through_pipeline: gradient shape mismatch");
  }
  const int c_i = static_cast<int>(tape.activations[0].normalized.cols());
  RowMatrix grad_w = RowMatrix::Zero(tape.mean.cols(), c_i);
  for (std::size_t m = 0; m < tape.activations.size(); ++m) {
    const LayerActivation& a = tape.activations[m];
    RowMatrix d_probs = RowMatrix::Zero(a.probs.rows(), a.probs.cols());
    for (int k = 0; k < cells; ++k) {
      if (!tape.masks[m].valid[k]) continue;
      const auto g = grad_mean.row(k) / tape.valid_count[k];
      if (m == 0) {
        d_probs.row(k) += g;
      } else {
        const WarpPlan& plan = tape.plans[m - 1];
        for (int j = 0; j < 4; ++j) {
          if (plan.weights[k][j] != 0.0) d_probs.row(plan.taps[k][j]) += plan.weights[k][j] * g;
        }
      }
    }
    // Softmax Jacobian: dz = p * (dp - <dp, p>).
    RowMatrix d_logits = a.probs.cwiseProduct(d_probs);
    const Eigen::VectorXd inner = d_logits.rowwise().sum();
    d_logits -= a.probs.cwiseProduct(inner.replicate(1, a.probs.cols()));
    grad_w.noalias() += d_logits.transpose() * a.normalized;
  }
  return grad_w;
}

StepResult pipeline_loss_and_gradient(const PipelineTape& tape, const PseudoGT& labels) {
  if (labels.height != tape.height || labels.width != tape.width) {
    throw DataError("pseudo-GT grid does not match the canvas");
  }
  NllResult nll = nll_loss(tape.mean, labels);
  Eigen::Map<const RowMatrix> grad_mean(nll.gradient.data(), tape.mean.rows(), tape.mean.cols());
  return {nll.loss, backward_through_pipeline(tape, grad_mean)};
}

}  // namespace partdisc
