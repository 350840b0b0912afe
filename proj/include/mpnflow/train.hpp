#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "mpnflow/graph.hpp"
#include "mpnflow/mpn.hpp"
#include "mpnflow/optim.hpp"
#include "mpnflow/synthdata.hpp"

namespace mpnflow {

struct TrainConfig {
  int iterations = 500;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  int frames_per_graph = 15;
  int top_k = 10;
  int max_frame_gap = 0;  // 0: the window length

  double node_drop = 0.0;
  double box_shift_std = 0.0;
  bool shift_position_only = false;

  int checkpoint_every = 0;  // 0: never
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossReport {
  int iteration = 0;
  double edge = 0.0;  // L_t
  double mask = 0.0;  // L_s
  double total = 0.0;
  double pos_weight = 1.0;
  std::vector<double> edge_per_step;
  std::vector<double> mask_per_step;
};

struct LossTerm {
  tk::Tensor loss;  // scalar
  std::vector<double> per_step;
  double pos_weight = 1.0;
};

/// Mean over the given steps of the positively-weighted edge BCE, averaged over
/// edges. pos_weight = E / #positives, or 1 (with a warning) without positives.
LossTerm edge_loss(std::span<const tk::Tensor> step_probs, const EdgeLabels& labels);

/// Mean pixel BCE over nodes carrying a gt_mask, averaged over the given steps.
/// Zero (constant) when no node is supervised.
LossTerm mask_loss(std::span<const tk::Tensor> step_masks, const TrackGraph& graph);

/// Drops each detection with probability p_drop and adds Gaussian noise of
/// std shift_std to x, y (and w, h unless position_only; floored at 1 pixel).
std::vector<Detection> augment(std::span<const Detection> window, double p_drop, double shift_std,
                               bool position_only, std::uint64_t seed);

struct TrainingWindow {
  TrackGraph graph;
  EdgeLabels labels;
};

TrainingWindow make_training_window(std::vector<Detection> detections, const TrainConfig& tc);

struct TrainResult {
  ModelParams params;
  std::vector<LossReport> history;
};

using CheckpointHook = std::function<void(int iteration, const ModelParams&)>;

/// Samples one window per iteration (scenario and window uniformly), augments
/// it, and takes one Adam step on L = L_t + L_s. Windows left without edges
/// are skipped. Throws NumericError naming the iteration on a non-finite loss.
TrainResult train_loop(std::span<const Scenario> scenarios, const TrainConfig& tc,
                       const MpnConfig& mc, const CheckpointHook& hook = {});

/// Continues training from `initial` (which is updated in place).
std::vector<LossReport> train_loop(ModelParams& initial, std::span<const Scenario> scenarios,
                                   const TrainConfig& tc, const MpnConfig& mc,
                                   const CheckpointHook& hook = {});

/// Gradient check of the full loss L = L_t + L_s of a small model on a random
/// graph of at most 10 nodes with L = 2.
struct ModelGradCheck {
  tk::GradCheckResult result;
  std::size_t nodes = 0;
  std::size_t edges = 0;
};
ModelGradCheck model_gradcheck(bool with_masks, std::uint64_t seed, double fd_step = 1e-6,
                               double corrupt = 0.0);

void write_history(const std::vector<LossReport>& history, const std::filesystem::path& path);

}  // namespace mpnflow
