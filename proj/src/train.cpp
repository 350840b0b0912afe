#include "mpnflow/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include <spdlog/spdlog.h>

#include "mpnflow/error.hpp"
#include "mpnflow/optim.hpp"

namespace mpnflow {

using tk::Tensor;

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("train." + field + ": " + why);
  };
  if (iterations < 0) fail("iterations", "must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr", "must be a finite non-negative number");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps", "must be positive");
  if (frames_per_graph < 2) fail("frames_per_graph", "must be >= 2");
  if (top_k < 0) fail("top_k", "must be >= 0");
  if (max_frame_gap < 0) fail("max_frame_gap", "must be >= 0");
  if (!(node_drop >= 0.0 && node_drop <= 1.0)) fail("node_drop", "must lie in [0, 1]");
  if (!(box_shift_std >= 0.0)) fail("box_shift_std", "must be >= 0");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
}

LossTerm edge_loss(std::span<const Tensor> step_probs, const EdgeLabels& labels) {
  if (step_probs.empty()) throw ShapeError("edge_loss: no recorded steps");
  LossTerm out;
  const std::size_t E = labels.size();
  if (E == 0) {
    out.loss = Tensor::scalar(0.0);
    out.per_step.assign(step_probs.size(), 0.0);
    return out;
  }
  std::size_t positives = 0;
  for (auto y : labels) positives += y;
  if (positives == 0) {
    spdlog::warn("edge_loss: graph without positive edges, using pos_weight = 1");
  } else {
    out.pos_weight = double(E) / double(positives);
  }
  std::vector<double> target(E), weight(E);
  for (std::size_t e = 0; e < E; ++e) {
    target[e] = labels[e];
    weight[e] = labels[e] ? out.pos_weight : 1.0;
  }
  Tensor total;
  for (const Tensor& p : step_probs) {
    if (p.size() != E) throw ShapeError("edge_loss: probabilities do not match the labels");
    Tensor step = tk::scale(tk::weighted_bce(p, target, weight), 1.0 / double(E));
    out.per_step.push_back(step.item());
    total = total.defined() ? tk::add(total, step) : step;
  }
  out.loss = tk::scale(total, 1.0 / double(step_probs.size()));
  return out;
}

LossTerm mask_loss(std::span<const Tensor> step_masks, const TrackGraph& graph) {
  LossTerm out;
  if (step_masks.empty()) {
    out.loss = Tensor::scalar(0.0);
    return out;
  }
  const tk::Shape& s = step_masks.front().shape();
  if (s.size() != 4 || s[0] != graph.num_nodes() || s[3] != 1) {
    throw ShapeError("mask_loss: expected {N,H,W,1} masks, got " + tk::to_string(s));
  }
  const std::size_t H = s[1], W = s[2], cell = H * W;
  std::vector<double> target(graph.num_nodes() * cell, 0.0), weight(graph.num_nodes() * cell, 0.0);
  std::size_t supervised = 0;
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    const auto& gt = graph.node(i).gt_mask;
    if (!gt) continue;
    if (gt->height != H || gt->width != W || gt->channels != 1) {
      throw ShapeError("mask_loss: gt mask of node " + std::to_string(graph.node(i).node_id) +
                       " does not match the predicted grid");
    }
    ++supervised;
    for (std::size_t k = 0; k < cell; ++k) {
      target[i * cell + k] = gt->data[k];
      weight[i * cell + k] = 1.0;
    }
  }
  if (supervised == 0) {
    out.loss = Tensor::scalar(0.0);
    out.per_step.assign(step_masks.size(), 0.0);
    return out;
  }
  const double norm = 1.0 / double(supervised * cell);
  Tensor total;
  for (const Tensor& m : step_masks) {
    if (m.shape() != s) throw ShapeError("mask_loss: steps with different mask shapes");
    Tensor step = tk::scale(tk::weighted_bce(m, target, weight), norm);
    out.per_step.push_back(step.item());
    total = total.defined() ? tk::add(total, step) : step;
  }
  out.loss = tk::scale(total, 1.0 / double(step_masks.size()));
  return out;
}

std::vector<Detection> augment(std::span<const Detection> window, double p_drop, double shift_std,
                               bool position_only, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Detection> out;
  for (const auto& d : window) {
    if (p_drop > 0.0 && unit(rng) < p_drop) continue;
    Detection a = d;
    if (shift_std > 0.0) {
      a.box.x += shift_std * noise(rng);
      a.box.y += shift_std * noise(rng);
      if (!position_only) {
        a.box.w = std::max(1.0, a.box.w + shift_std * noise(rng));
        a.box.h = std::max(1.0, a.box.h + shift_std * noise(rng));
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

TrainingWindow make_training_window(std::vector<Detection> detections, const TrainConfig& tc) {
  const auto ids = identity_map(detections);
  const int gap = tc.max_frame_gap > 0 ? tc.max_frame_gap : tc.frames_per_graph;
  TrainingWindow w;
  w.graph = build_graph(std::move(detections), gap, tc.top_k);
  w.labels = ground_truth_labels(w.graph, ids);
  return w;
}

std::vector<LossReport> train_loop(ModelParams& params, std::span<const Scenario> scenarios,
                                   const TrainConfig& tc, const MpnConfig& mc,
                                   const CheckpointHook& hook) {
  tc.validate();
  mc.validate();
  std::vector<std::vector<FrameWindow>> windows;
  bool any = false;
  for (const auto& s : scenarios) {
    windows.push_back(split_windows(s.detections, tc.frames_per_graph));
    any = any || !windows.back().empty();
  }
  if (!any) throw ConfigError("train: no scenario contains detections");

  tk::ParamList list = params.parameters();
  tk::AdamState adam({tc.lr, tc.beta1, tc.beta2, tc.eps, tc.weight_decay});
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<LossReport> history;

  for (int it = 0; it < tc.iterations; ++it) {
    std::size_t si = 0;
    do {
      si = std::uniform_int_distribution<std::size_t>(0, scenarios.size() - 1)(rng);
    } while (windows[si].empty());
    const auto& ws = windows[si];
    const FrameWindow fw = ws[std::uniform_int_distribution<std::size_t>(0, ws.size() - 1)(rng)];
    const std::uint64_t aug_seed = rng();
    auto dets = augment(select_window(scenarios[si].detections, fw), tc.node_drop,
                        tc.box_shift_std, tc.shift_position_only, aug_seed);
    TrainingWindow w = make_training_window(std::move(dets), tc);

    if (w.graph.num_edges() > 0) {
      tk::Tape tape;
      MpnState state = mpn_forward(w.graph, params, mc);
      LossTerm lt = edge_loss(state.edge_probs, w.labels);
      LossTerm ls = mask_loss(state.masks, w.graph);
      Tensor loss = tk::add(lt.loss, ls.loss);

      LossReport r;
      r.iteration = it;
      r.edge = lt.loss.item();
      r.mask = ls.loss.item();
      r.total = loss.item();
      r.pos_weight = lt.pos_weight;
      r.edge_per_step = lt.per_step;
      r.mask_per_step = ls.per_step;
      if (!std::isfinite(r.total)) {
        throw NumericError("non-finite loss at iteration " + std::to_string(it));
      }
      tk::zero_grad(list);
      tape.backward(loss);
      tk::adam_step(list, adam);
      history.push_back(std::move(r));
      spdlog::debug("iter {} L_t {:.5f} L_s {:.5f}", it, history.back().edge, history.back().mask);
    }
    if (hook && tc.checkpoint_every > 0 && (it + 1) % tc.checkpoint_every == 0) hook(it + 1, params);
  }
  return history;
}

TrainResult train_loop(std::span<const Scenario> scenarios, const TrainConfig& tc,
                       const MpnConfig& mc, const CheckpointHook& hook) {
  TrainResult out;
  out.params = ModelParams::init(mc, tc.seed);
  out.history = train_loop(out.params, scenarios, tc, mc, hook);
  return out;
}

ModelGradCheck model_gradcheck(bool with_masks, std::uint64_t seed, double fd_step,
                               double corrupt) {
  ScenarioConfig sc;
  sc.num_frames = 3;
  sc.num_identities = 3;
  sc.appearance_dim = 4;
  sc.appearance_noise_std = 0.5;
  sc.roi_height = sc.roi_width = 4;
  sc.roi_channels = 3;
  sc.position_noise_std = 2.0;
  sc.seed = seed;
  const Scenario s = generate_scenario(sc);

  MpnConfig mc;
  mc.num_steps = 2;
  mc.with_masks = with_masks;
  mc.d_app = 4;
  mc.d_node = 5;
  mc.d_edge = 4;
  mc.hidden = 6;
  mc.roi_height = mc.roi_width = 4;
  mc.d_roi = 3;
  mc.context_channels = 3;
  mc.mask_channels = 3;
  mc.last_m_steps = 2;

  TrainConfig tc;
  tc.frames_per_graph = sc.num_frames;
  tc.top_k = 100;
  const TrainingWindow w = make_training_window(s.detections, tc);
  ModelParams p = ModelParams::init(mc, seed + 1);
  tk::ParamList list = p.parameters();
  // zero biases put exact zeros on ReLU inputs, where finite differences see a kink;
  // the conv gain keeps gradients through the deep mask stack above finite-difference roundoff
  std::mt19937_64 rng(seed + 2);
  std::uniform_real_distribution<double> bias(-0.1, 0.1);
  for (auto& np : list) {
    if (np.tensor.shape().size() == 1) {
      for (double& v : np.tensor.mutable_values()) v = bias(rng);
    } else if (np.tensor.shape().size() == 4) {
      for (double& v : np.tensor.mutable_values()) v *= 1.5;
    }
  }
  const GraphInputs in = encode_inputs(w.graph, mc);
  auto loss = [&]() {
    MpnState st = mpn_forward(in, p, mc);
    return tk::add(edge_loss(st.edge_probs, w.labels).loss, mask_loss(st.masks, w.graph).loss);
  };
  ModelGradCheck out;
  out.nodes = w.graph.num_nodes();
  out.edges = w.graph.num_edges();
  out.result = tk::grad_check(loss, list, fd_step, corrupt);
  return out;
}

void write_history(const std::vector<LossReport>& history, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "iter,L_t,L_s,L\n" << std::setprecision(10);
  for (const auto& r : history) f << r.iteration << ',' << r.edge << ',' << r.mask << ',' << r.total << '\n';
  if (!f) throw IoError("error writing " + path.string());
}

}  // namespace mpnflow
