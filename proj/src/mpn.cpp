#include "mpnflow/mpn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mpnflow/error.hpp"

namespace mpnflow {

using tk::Tensor;

void MpnConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("mpn." + field + ": " + why);
  };
  if (num_steps < 0) fail("num_steps", "must be >= 0");
  if (d_app == 0) fail("d_app", "must be positive");
  if (d_node == 0) fail("d_node", "must be positive");
  if (d_edge == 0) fail("d_edge", "must be positive");
  if (hidden == 0) fail("hidden", "must be positive");
  if (last_m_steps < 0 || last_m_steps > std::max(num_steps, 1)) {
    fail("last_m_steps", "must lie in [1, max(num_steps, 1)] (0 selects the default)");
  }
  if (with_masks) {
    if (roi_height < 4 || roi_width < 4) fail("roi_height", "RoI grid must be at least 4x4");
    if (d_roi == 0) fail("d_roi", "must be positive");
    if (context_channels == 0) fail("context_channels", "must be positive");
    if (mask_channels == 0) fail("mask_channels", "must be positive");
    if (mask_layers < 1) fail("mask_layers", "must be >= 1");
  }
}

int MpnConfig::loss_steps() const {
  if (num_steps == 0) return 1;
  if (last_m_steps > 0) return std::min(last_m_steps, num_steps);
  return std::min(num_steps, 6);
}

ModelParams ModelParams::init(const MpnConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  using tk::Activation;
  ModelParams p;
  p.node_encoder = tk::DenseStack({c.d_app, c.hidden, c.d_node}, Activation::identity, rng);
  p.edge_encoder = tk::DenseStack({6, c.hidden, c.d_edge}, Activation::identity, rng);
  p.edge_head = tk::DenseStack({c.d_edge, c.hidden, 1}, Activation::identity, rng);
  if (c.num_steps > 0) {
    p.edge_update = tk::DenseStack({2 * c.d_node + 2 * c.d_edge, c.hidden, c.d_edge},
                                   Activation::identity, rng);
    if (c.variant == Variant::time_aware) {
      const std::size_t in = 2 * c.d_node + c.d_edge;
      p.node_past = tk::DenseStack({in, c.hidden, c.d_node}, Activation::identity, rng);
      p.node_future = tk::DenseStack({in, c.hidden, c.d_node}, Activation::identity, rng);
      p.node_update = tk::DenseStack({2 * c.d_node, c.hidden, c.d_node}, Activation::identity, rng);
    } else {
      p.node_update =
          tk::DenseStack({c.d_node + c.d_edge, c.hidden, c.d_node}, Activation::identity, rng);
    }
  }
  if (c.with_masks) {
    if (c.num_steps > 0) {
      p.context_update = tk::ConvStack({3 * c.d_roi, c.context_channels, c.d_roi}, 3,
                                       Activation::identity, rng);
    }
    std::vector<std::size_t> ch{2 * c.d_roi};
    for (std::size_t l = 1; l < c.mask_layers; ++l) ch.push_back(c.mask_channels);
    ch.push_back(1);
    p.mask_head = tk::ConvStack(ch, 3, Activation::sigmoid, rng);
  }
  return p;
}

tk::ParamList ModelParams::parameters() const {
  tk::ParamList out;
  auto dense = [&](const tk::DenseStack& s, const char* name) {
    if (s.sizes().size() >= 2) s.collect(name, out);
  };
  auto conv = [&](const tk::ConvStack& s, const char* name) {
    if (s.layers() > 0) s.collect(name, out);
  };
  dense(node_encoder, "node_encoder");
  dense(edge_encoder, "edge_encoder");
  dense(edge_update, "edge_update");
  dense(node_past, "node_past");
  dense(node_future, "node_future");
  dense(node_update, "node_update");
  dense(edge_head, "edge_head");
  conv(context_update, "context_update");
  conv(mask_head, "mask_head");
  return out;
}

ModelParams ModelParams::clone(const MpnConfig& config) const {
  ModelParams copy = init(config, 0);
  auto src = parameters();
  auto dst = copy.parameters();
  if (src.size() != dst.size()) throw ShapeError("clone: parameters do not match the configuration");
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k].tensor.shape() != dst[k].tensor.shape()) {
      throw ShapeError("clone: shape mismatch in " + src[k].name);
    }
    auto v = src[k].tensor.values();
    std::copy(v.begin(), v.end(), dst[k].tensor.mutable_values().begin());
  }
  return copy;
}

double appearance_distance(const Detection& a, const Detection& b) {
  if (a.appearance.size() != b.appearance.size()) {
    throw ShapeError("appearance vectors of different dimension");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < a.appearance.size(); ++k) {
    const double d = a.appearance[k] - b.appearance[k];
    s += d * d;
  }
  return std::sqrt(s);
}

std::array<double, 6> edge_raw_features(const Detection& i, const Detection& j,
                                        double appearance_distance) {
  if (i.frame == j.frame) throw ConfigError("edge features need detections in different frames");
  if (!(i.box.w > 0 && i.box.h > 0 && j.box.w > 0 && j.box.h > 0)) {
    throw ConfigError("edge features need boxes with positive width and height");
  }
  const double hs = i.box.h + j.box.h;
  return {2.0 * (j.box.x - i.box.x) / hs,
          2.0 * (j.box.y - i.box.y) / hs,
          std::log(i.box.h / j.box.h),
          std::log(i.box.w / j.box.w),
          double(j.frame - i.frame),
          appearance_distance};
}

GraphInputs encode_inputs(const TrackGraph& graph, const MpnConfig& c) {
  GraphInputs in;
  in.nodes = graph.num_nodes();
  in.src = graph.sources();
  in.dst = graph.destinations();
  std::vector<double> app;
  app.reserve(in.nodes * c.d_app);
  for (const auto& d : graph.nodes()) {
    if (d.appearance.empty()) {
      throw ConfigError("detection " + std::to_string(d.node_id) + " has no appearance vector");
    }
    if (d.appearance.size() != c.d_app) {
      throw ShapeError("detection " + std::to_string(d.node_id) + " has appearance dimension " +
                       std::to_string(d.appearance.size()) + ", model expects " +
                       std::to_string(c.d_app));
    }
    app.insert(app.end(), d.appearance.begin(), d.appearance.end());
  }
  in.appearance = Tensor::constant({in.nodes, c.d_app}, std::move(app));

  std::vector<double> raw;
  raw.reserve(graph.num_edges() * 6);
  for (const auto& e : graph.edges()) {
    const auto& a = graph.node(e.src);
    const auto& b = graph.node(e.dst);
    const auto f = edge_raw_features(a, b, appearance_distance(a, b));
    raw.insert(raw.end(), f.begin(), f.end());
  }
  in.edge_raw = Tensor::constant({graph.num_edges(), 6}, std::move(raw));

  if (c.with_masks) {
    std::vector<double> roi;
    roi.reserve(in.nodes * c.roi_height * c.roi_width * c.d_roi);
    for (const auto& d : graph.nodes()) {
      const Grid& g = d.roi_grid;
      if (g.height != c.roi_height || g.width != c.roi_width || g.channels != c.d_roi) {
        throw ShapeError("detection " + std::to_string(d.node_id) + " RoI grid " +
                         std::to_string(g.height) + "x" + std::to_string(g.width) + "x" +
                         std::to_string(g.channels) + " does not match the model");
      }
      roi.insert(roi.end(), g.data.begin(), g.data.end());
    }
    in.roi = Tensor::constant({in.nodes, c.roi_height, c.roi_width, c.d_roi}, std::move(roi));
  }
  return in;
}

Tensor encode_nodes(const GraphInputs& in, const ModelParams& p) {
  return p.node_encoder.forward(in.appearance);
}

Tensor encode_edges(const GraphInputs& in, const ModelParams& p) {
  return p.edge_encoder.forward(in.edge_raw);
}

Tensor edge_update(const GraphInputs& in, const ModelParams& p, const Tensor& h_prev,
                   const Tensor& e_prev, const Tensor& e0) {
  return p.edge_update.forward(tk::concat_cols(
      {tk::gather_items(h_prev, in.src), tk::gather_items(h_prev, in.dst), e_prev, e0}));
}

Tensor node_update_vanilla(const GraphInputs& in, const ModelParams& p, const Tensor& h_prev,
                           const Tensor& e) {
  Tensor to_dst = p.node_update.forward(tk::concat_cols({tk::gather_items(h_prev, in.dst), e}));
  Tensor to_src = p.node_update.forward(tk::concat_cols({tk::gather_items(h_prev, in.src), e}));
  return tk::add(tk::segment_sum(to_dst, in.dst, in.nodes), tk::segment_sum(to_src, in.src, in.nodes));
}

Tensor node_update_time_aware(const GraphInputs& in, const ModelParams& p, const Tensor& h_prev,
                              const Tensor& e, const Tensor& h0) {
  // the earlier endpoint is in the later endpoint's past, and vice versa
  Tensor past_msg = p.node_past.forward(
      tk::concat_cols({tk::gather_items(h_prev, in.dst), e, tk::gather_items(h0, in.dst)}));
  Tensor fut_msg = p.node_future.forward(
      tk::concat_cols({tk::gather_items(h_prev, in.src), e, tk::gather_items(h0, in.src)}));
  Tensor past = tk::segment_sum(past_msg, in.dst, in.nodes);
  Tensor fut = tk::segment_sum(fut_msg, in.src, in.nodes);
  return p.node_update.forward(tk::concat_cols({past, fut}));
}

Attention attention_weights(const GraphInputs& in, const ModelParams& p, const Tensor& e_prev) {
  Tensor logits = p.edge_head.forward(e_prev);
  return {tk::segment_softmax(logits, in.dst, in.nodes),
          tk::segment_softmax(logits, in.src, in.nodes)};
}

Tensor attentive_node_update(const GraphInputs& in, const ModelParams& p, const Attention& a,
                             const Tensor& secondary_prev, const Tensor& secondary0) {
  Tensor c_past = tk::segment_sum(
      tk::scale_items(tk::gather_items(secondary_prev, in.src), a.past), in.dst, in.nodes);
  Tensor c_fut = tk::segment_sum(
      tk::scale_items(tk::gather_items(secondary_prev, in.dst), a.future), in.src, in.nodes);
  return p.context_update.forward(tk::concat_cols({c_past, c_fut, secondary0}));
}

Tensor classify_edges(const ModelParams& p, const Tensor& e) {
  return tk::sigmoid(p.edge_head.forward(e));
}

Tensor predict_masks(const ModelParams& p, const MpnConfig& config, const Tensor& secondary,
                     const Tensor& secondary0) {
  if (!config.with_masks || p.mask_head.layers() == 0) {
    throw ConfigError("mask prediction requires mpn.with_masks");
  }
  return p.mask_head.forward(tk::concat_cols({secondary, secondary0}));
}

MpnState mpn_forward(const GraphInputs& in, const ModelParams& p, const MpnConfig& c) {
  MpnState s;
  const int L = c.num_steps;
  const int first_recorded = L - c.loss_steps() + 1;

  s.node.push_back(encode_nodes(in, p));
  s.edge.push_back(encode_edges(in, p));
  if (c.with_masks) s.secondary.push_back(in.roi);

  auto record = [&](int l) {
    s.recorded_steps.push_back(l);
    s.edge_probs.push_back(classify_edges(p, s.edge.back()));
    if (c.with_masks) s.masks.push_back(predict_masks(p, c, s.secondary.back(), s.secondary.front()));
  };
  if (L == 0) record(0);

  for (int l = 1; l <= L; ++l) {
    const Tensor& h_prev = s.node.back();
    const Tensor& e_prev = s.edge.back();
    if (c.with_masks) {
      Attention a = attention_weights(in, p, e_prev);
      s.secondary.push_back(attentive_node_update(in, p, a, s.secondary.back(), s.secondary.front()));
      s.attention_past.push_back(a.past);
      s.attention_future.push_back(a.future);
    }
    Tensor e = edge_update(in, p, h_prev, e_prev, s.edge.front());
    Tensor h = c.variant == Variant::time_aware
                   ? node_update_time_aware(in, p, h_prev, e, s.node.front())
                   : node_update_vanilla(in, p, h_prev, e);
    s.edge.push_back(e);
    s.node.push_back(h);
    if (l >= first_recorded) record(l);
  }
  return s;
}

MpnState mpn_forward(const TrackGraph& graph, const ModelParams& p, const MpnConfig& config) {
  return mpn_forward(encode_inputs(graph, config), p, config);
}

}  // namespace mpnflow
