#include "mpnflow/infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mpnflow/error.hpp"
#include "mpnflow/kernels.hpp"
#include "mpnflow/matching.hpp"

namespace mpnflow {

EdgeLabels threshold(std::span<const double> probs, double tau) {
  EdgeLabels y(probs.size(), 0);
  for (std::size_t e = 0; e < probs.size(); ++e) y[e] = probs[e] >= tau ? 1 : 0;
  return y;
}

namespace {
void require_labels(const TrackGraph& g, const EdgeLabels& y) {
  if (y.size() != g.num_edges()) {
    throw ShapeError("labels: " + std::to_string(y.size()) + " values for " +
                     std::to_string(g.num_edges()) + " edges");
  }
}

std::size_t active_count(const std::vector<std::size_t>& incident, const EdgeLabels& y) {
  std::size_t n = 0;
  for (std::size_t e : incident) n += y[e];
  return n;
}
}  // namespace

ConstraintCheck check_constraints(const TrackGraph& g, const EdgeLabels& y) {
  require_labels(g, y);
  ConstraintCheck c;
  c.total = 2 * g.num_nodes();
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const std::size_t past = active_count(g.past(i), y);
    const std::size_t fut = active_count(g.future(i), y);
    if (past > 1) c.violations.push_back({i, Side::past, past});
    if (fut > 1) c.violations.push_back({i, Side::future, fut});
  }
  c.satisfied = c.total - c.violations.size();
  c.satisfaction_rate = c.total == 0 ? 1.0 : double(c.satisfied) / double(c.total);
  return c;
}

ViolatingSubgraph violating_subgraph(const TrackGraph& g, const EdgeLabels& y) {
  require_labels(g, y);
  std::vector<char> in(g.num_edges(), 0);
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    for (const auto* side : {&g.past(i), &g.future(i)}) {
      if (active_count(*side, y) < 2) continue;
      for (std::size_t e : *side) {
        if (y[e]) in[e] = 1;
      }
    }
  }
  ViolatingSubgraph s;
  std::vector<char> node_in(g.num_nodes(), 0);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    if (!in[e]) continue;
    s.edges.push_back(e);
    node_in[g.edge(e).src] = 1;
    node_in[g.edge(e).dst] = 1;
  }
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    if (node_in[i]) s.nodes.push_back(i);
  }
  return s;
}

double rounding_objective(std::span<const double> probs, const EdgeLabels& y, double tau) {
  double s = 0.0;
  for (std::size_t e = 0; e < y.size(); ++e) {
    if (y[e]) s += probs[e] - tau;
  }
  return s;
}

EdgeLabels exact_round(const TrackGraph& g, std::span<const double> probs, const EdgeLabels& y,
                       double tau) {
  require_labels(g, y);
  const ViolatingSubgraph sub = violating_subgraph(g, y);
  EdgeLabels out = y;
  if (sub.edges.empty()) return out;

  // rows: "out" copies of earlier endpoints; cols: "in" copies of later endpoints
  std::map<std::size_t, std::size_t> row_of, col_of;
  for (std::size_t e : sub.edges) {
    row_of.emplace(g.edge(e).src, row_of.size());
    col_of.emplace(g.edge(e).dst, col_of.size());
  }
  const std::size_t R = row_of.size(), C = col_of.size();
  std::vector<double> w(R * C, 0.0);
  for (std::size_t e : sub.edges) {
    out[e] = 0;
    if (probs[e] >= tau) w[row_of[g.edge(e).src] * C + col_of[g.edge(e).dst]] = probs[e] - tau;
  }
  const Matching m = max_weight_matching(w, R, C);
  for (std::size_t e : sub.edges) {
    const std::size_t r = row_of[g.edge(e).src], c = col_of[g.edge(e).dst];
    if (m.row_to_col[r] == int(c)) out[e] = 1;
  }
  return out;
}

EdgeLabels greedy_round(const TrackGraph& g, std::span<const double> probs, const EdgeLabels& y,
                        double tau) {
  require_labels(g, y);
  const ViolatingSubgraph sub = violating_subgraph(g, y);
  EdgeLabels out = y;
  if (sub.edges.empty()) return out;
  std::vector<std::size_t> order = sub.edges;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<char> fut_taken(g.num_nodes(), 0), past_taken(g.num_nodes(), 0);
  for (std::size_t e : sub.edges) out[e] = 0;
  for (std::size_t e : order) {
    if (probs[e] < tau) continue;
    const Edge& ed = g.edge(e);
    if (fut_taken[ed.src] || past_taken[ed.dst]) continue;
    fut_taken[ed.src] = past_taken[ed.dst] = 1;
    out[e] = 1;
  }
  return out;
}

std::vector<std::vector<std::size_t>> extract_trajectories(const TrackGraph& g,
                                                           const EdgeLabels& y) {
  require_labels(g, y);
  const std::size_t N = g.num_nodes();
  std::vector<long> next(N, -1), prev(N, -1);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    if (!y[e]) continue;
    const Edge& ed = g.edge(e);
    if (next[ed.src] != -1 || prev[ed.dst] != -1) {
      throw InternalError("active edges do not form disjoint paths");
    }
    next[ed.src] = long(ed.dst);
    prev[ed.dst] = long(ed.src);
  }
  std::vector<std::vector<std::size_t>> paths;
  for (std::size_t i = 0; i < N; ++i) {
    if (prev[i] != -1) continue;
    std::vector<std::size_t> path;
    for (long k = long(i); k != -1; k = next[std::size_t(k)]) path.push_back(std::size_t(k));
    paths.push_back(std::move(path));
  }
  return paths;
}

TrackSequence interpolate(const TrackSequence& track) {
  TrackSequence out;
  for (std::size_t k = 0; k < track.size(); ++k) {
    if (k > 0) {
      const TrackPoint& a = track[k - 1];
      const TrackPoint& b = track[k];
      if (b.frame <= a.frame) throw ConfigError("interpolate: track frames must strictly increase");
      const double span = double(b.frame - a.frame);
      for (int f = a.frame + 1; f < b.frame; ++f) {
        const double t = double(f - a.frame) / span;
        TrackPoint p;
        p.frame = f;
        p.box = {a.box.x + t * (b.box.x - a.box.x), a.box.y + t * (b.box.y - a.box.y),
                 a.box.w + t * (b.box.w - a.box.w), a.box.h + t * (b.box.h - a.box.h)};
        p.confidence = a.confidence + t * (b.confidence - a.confidence);
        p.interpolated = true;
        out.push_back(p);
      }
    }
    out.push_back(track[k]);
  }
  return out;
}

MergedPrediction merge_windows(std::span<const WindowPrediction> windows) {
  std::map<NodePair, std::vector<double>> edge_values;
  std::map<int, std::vector<const Grid*>> mask_values;
  for (const auto& w : windows) {
    if (w.edges.size() != w.probs.size()) throw ShapeError("window edges and probabilities differ");
    for (std::size_t e = 0; e < w.edges.size(); ++e) edge_values[w.edges[e]].push_back(w.probs[e]);
    for (const auto& [id, g] : w.masks) mask_values[id].push_back(&g);
  }
  MergedPrediction out;
  for (auto& [key, v] : edge_values) {
    const double n = double(v.size());
    out.probs[key] = kernels::order_invariant_sum(v) / n;
  }
  std::vector<double> buf;
  for (const auto& [id, grids] : mask_values) {
    Grid m = *grids.front();
    for (const Grid* g : grids) {
      if (g->height != m.height || g->width != m.width || g->channels != m.channels) {
        throw ShapeError("merge_windows: mask grids of node " + std::to_string(id) + " differ");
      }
    }
    for (std::size_t k = 0; k < m.data.size(); ++k) {
      buf.clear();
      for (const Grid* g : grids) buf.push_back(g->data[k]);
      m.data[k] = kernels::order_invariant_sum(buf) / double(grids.size());
    }
    out.masks[id] = std::move(m);
  }
  return out;
}

void InferenceConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("infer.tau: must lie in (0, 1)");
  if (window < 2) throw ConfigError("infer.window: must be >= 2");
  if (top_k < 0) throw ConfigError("infer.top_k: must be >= 0");
  if (max_frame_gap < 0) throw ConfigError("infer.max_frame_gap: must be >= 0");
  if (threads < 1) throw ConfigError("infer.threads: must be >= 1");
}

double SequenceResult::mean_window_rate() const {
  if (window_rates.empty()) return 1.0;
  std::vector<double> v = window_rates;
  return kernels::order_invariant_sum(v) / double(v.size());
}

WindowPrediction predict_window(const TrackGraph& graph, const ModelParams& params,
                                const MpnConfig& config) {
  WindowPrediction w;
  if (graph.num_nodes() == 0) return w;
  const MpnState s = mpn_forward(graph, params, config);
  const auto p = s.final_probs().values();
  w.probs.assign(p.begin(), p.end());
  for (const auto& e : graph.edges()) w.edges.emplace_back(graph.node(e.src).node_id, graph.node(e.dst).node_id);
  if (config.with_masks) {
    const tk::Tensor& m = s.masks.back();
    const std::size_t H = config.roi_height, W = config.roi_width;
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
      Grid g(H, W, 1);
      std::copy_n(m.values().begin() + std::ptrdiff_t(i * H * W), H * W, g.data.begin());
      w.masks[graph.node(i).node_id] = std::move(g);
    }
  }
  return w;
}

SequenceResult infer_sequence(std::span<const Detection> detections, const ModelParams& params,
                              const MpnConfig& mc, const InferenceConfig& ic) {
  ic.validate();
  mc.validate();
  const auto windows = split_windows(detections, ic.window);
  const int gap = ic.max_frame_gap > 0 ? ic.max_frame_gap : ic.window;
  std::vector<WindowPrediction> preds(windows.size());
  std::vector<double> rates(windows.size(), 1.0);

  auto run = [&](std::size_t k) {
    const TrackGraph g = build_graph(select_window(detections, windows[k]), gap, ic.top_k);
    preds[k] = predict_window(g, params, mc);
    rates[k] = check_constraints(g, threshold(preds[k].probs, ic.tau)).satisfaction_rate;
  };
#if defined(MPNFLOW_HAVE_OPENMP)
  if (ic.threads > 1) {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(ic.threads)
    for (long k = 0; k < long(windows.size()); ++k) {
      try {
        run(std::size_t(k));
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::size_t k = 0; k < windows.size(); ++k) run(k);
  }
#else
  for (std::size_t k = 0; k < windows.size(); ++k) run(k);
#endif

  const MergedPrediction merged = merge_windows(preds);

  std::vector<Detection> nodes(detections.begin(), detections.end());
  std::sort(nodes.begin(), nodes.end(), [](const Detection& a, const Detection& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.node_id < b.node_id;
  });
  std::map<int, std::size_t> local;
  for (std::size_t i = 0; i < nodes.size(); ++i) local[nodes[i].node_id] = i;
  std::vector<Edge> edges;
  std::vector<std::pair<Edge, double>> weighted;
  for (const auto& [key, p] : merged.probs) weighted.push_back({{local.at(key.first), local.at(key.second)}, p});
  std::sort(weighted.begin(), weighted.end(), [](const auto& a, const auto& b) {
    return a.first.src != b.first.src ? a.first.src < b.first.src : a.first.dst < b.first.dst;
  });

  SequenceResult r;
  for (const auto& [e, p] : weighted) {
    edges.push_back(e);
    r.probs.push_back(p);
  }
  r.graph = TrackGraph(std::move(nodes), std::move(edges));
  r.window_rates = std::move(rates);
  r.tentative = threshold(r.probs, ic.tau);
  r.before = check_constraints(r.graph, r.tentative);
  r.labels = ic.rounder == Rounder::exact ? exact_round(r.graph, r.probs, r.tentative, ic.tau)
                                          : greedy_round(r.graph, r.probs, r.tentative, ic.tau);
  r.paths = extract_trajectories(r.graph, r.labels);
  for (const auto& path : r.paths) {
    TrackSequence t;
    for (std::size_t i : path) {
      const Detection& d = r.graph.node(i);
      t.push_back({d.frame, d.box, d.confidence, false, d.node_id});
    }
    r.tracks.push_back(ic.interpolate ? interpolate(t) : std::move(t));
  }
  r.masks = merged.masks;
  return r;
}

void write_mask_pgm(const Grid& mask, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      const double p = std::clamp(mask.at(r, c, 0), 0.0, 1.0);
      f.put(char(static_cast<unsigned char>(std::lround(p * 255.0))));
    }
  }
  if (!f) throw IoError("error writing " + path.string());
}

}  // namespace mpnflow
