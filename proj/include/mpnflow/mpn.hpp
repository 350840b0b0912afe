#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mpnflow/graph.hpp"
#include "mpnflow/layers.hpp"

namespace mpnflow {

enum class Variant { vanilla, time_aware };

struct MpnConfig {
  int num_steps = 4;
  Variant variant = Variant::time_aware;
  bool with_masks = false;

  std::size_t d_app = 16;
  std::size_t d_node = 32;
  std::size_t d_edge = 16;
  std::size_t hidden = 32;  // width of the hidden layer of every update MLP

  std::size_t roi_height = 8;
  std::size_t roi_width = 8;
  std::size_t d_roi = 4;
  std::size_t context_channels = 8;  // hidden channels of the context update
  std::size_t mask_channels = 8;     // hidden channels of the mask head
  std::size_t mask_layers = 7;

  int last_m_steps = 0;  // 0: min(L, 6)

  void validate() const;
  /// Number of steps whose outputs enter the loss (1 when L = 0).
  int loss_steps() const;
};

/// All learnable weights. Stacks that the configuration does not use stay empty.
struct ModelParams {
  tk::DenseStack node_encoder;  // d_app -> d_node
  tk::DenseStack edge_encoder;  // 6 -> d_edge
  tk::DenseStack edge_update;   // [h_src, h_dst, h_e, h_e0] -> d_edge
  tk::DenseStack node_past;     // [h_i, h_e, h_i0] -> d_node (time-aware)
  tk::DenseStack node_future;
  tk::DenseStack node_update;   // vanilla: [h_i, h_e] -> d_node; time-aware: [past, fut] -> d_node
  tk::DenseStack edge_head;     // d_edge -> 1 logit; attention and classification
  tk::ConvStack context_update; // [c_past, c_fut, roi] -> d_roi
  tk::ConvStack mask_head;      // [mask features, roi] -> 1, sigmoid

  static ModelParams init(const MpnConfig& config, std::uint64_t seed);

  tk::ParamList parameters() const;
  /// Independent copy (copying ModelParams itself shares the weights).
  ModelParams clone(const MpnConfig& config) const;
};

/// Relative geometry, time and appearance features of an edge, earlier -> later:
/// (2dx/(hi+hj), 2dy/(hi+hj), log hi/hj, log wi/wj, tj - ti, appearance distance).
std::array<double, 6> edge_raw_features(const Detection& i, const Detection& j,
                                        double appearance_distance);

double appearance_distance(const Detection& a, const Detection& b);

/// Constant per-graph model inputs.
struct GraphInputs {
  tk::Tensor appearance;  // {N, d_app}
  tk::Tensor edge_raw;    // {E, 6}
  tk::Tensor roi;         // {N, H, W, d_roi}, only with masks
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::size_t nodes = 0;
};

GraphInputs encode_inputs(const TrackGraph& graph, const MpnConfig& config);

struct MpnState {
  std::vector<tk::Tensor> node;   // h^(l), l = 0..L, {N, d_node}
  std::vector<tk::Tensor> edge;   // h_e^(l), {E, d_edge}
  std::vector<tk::Tensor> secondary;  // tilde h^(l), {N, H, W, d_roi}, with masks
  std::vector<tk::Tensor> attention_past;    // a^(l) in the later endpoint's past softmax, l = 1..L
  std::vector<tk::Tensor> attention_future;  // a^(l) in the earlier endpoint's future softmax

  std::vector<int> recorded_steps;     // the last m steps, ascending
  std::vector<tk::Tensor> edge_probs;  // per recorded step, {E, 1}
  std::vector<tk::Tensor> masks;       // per recorded step, {N, H, W, 1}, with masks

  const tk::Tensor& final_probs() const { return edge_probs.back(); }
};

// Single steps, exposed for testing. All work on whole-graph tensors.
tk::Tensor encode_nodes(const GraphInputs& in, const ModelParams& p);
tk::Tensor encode_edges(const GraphInputs& in, const ModelParams& p);
tk::Tensor edge_update(const GraphInputs& in, const ModelParams& p, const tk::Tensor& h_prev,
                       const tk::Tensor& e_prev, const tk::Tensor& e0);
tk::Tensor node_update_vanilla(const GraphInputs& in, const ModelParams& p,
                               const tk::Tensor& h_prev, const tk::Tensor& e);
tk::Tensor node_update_time_aware(const GraphInputs& in, const ModelParams& p,
                                  const tk::Tensor& h_prev, const tk::Tensor& e,
                                  const tk::Tensor& h0);

struct Attention {
  tk::Tensor past;    // {E}: weight of the earlier endpoint inside the later endpoint's past set
  tk::Tensor future;  // {E}: weight of the later endpoint inside the earlier endpoint's future set
};
Attention attention_weights(const GraphInputs& in, const ModelParams& p, const tk::Tensor& e_prev);
tk::Tensor attentive_node_update(const GraphInputs& in, const ModelParams& p,
                                 const Attention& a, const tk::Tensor& secondary_prev,
                                 const tk::Tensor& secondary0);

tk::Tensor classify_edges(const ModelParams& p, const tk::Tensor& e);
tk::Tensor predict_masks(const ModelParams& p, const MpnConfig& config, const tk::Tensor& secondary,
                         const tk::Tensor& secondary0);

MpnState mpn_forward(const GraphInputs& in, const ModelParams& p, const MpnConfig& config);
MpnState mpn_forward(const TrackGraph& graph, const ModelParams& p, const MpnConfig& config);

}  // namespace mpnflow
