#include "mpnflow/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mpnflow/error.hpp"

namespace mpnflow {

namespace {
std::uint64_t edge_key(std::size_t src, std::size_t dst) {
  return (std::uint64_t(src) << 32) | std::uint64_t(dst);
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("appearance vectors of different dimension");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}
}  // namespace

TrackGraph::TrackGraph(std::vector<Detection> nodes, std::vector<Edge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  past_.resize(nodes_.size());
  future_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!index_of_.emplace(nodes_[i].node_id, i).second) {
      throw ConfigError("duplicate node_id " + std::to_string(nodes_[i].node_id) + " in graph");
    }
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Edge& ed = edges_[e];
    if (ed.src >= nodes_.size() || ed.dst >= nodes_.size() ||
        nodes_[ed.src].frame >= nodes_[ed.dst].frame) {
      throw InternalError("edge must join an earlier node to a later node");
    }
    if (!edge_of_.emplace(edge_key(ed.src, ed.dst), e).second) {
      throw InternalError("duplicate edge in graph");
    }
    future_[ed.src].push_back(e);
    past_[ed.dst].push_back(e);
    src_.push_back(ed.src);
    dst_.push_back(ed.dst);
  }
  if (!nodes_.empty()) {
    window_.first = nodes_.front().frame;
    window_.last = nodes_.front().frame;
    for (const auto& d : nodes_) {
      window_.first = std::min(window_.first, d.frame);
      window_.last = std::max(window_.last, d.frame);
    }
  }
}

std::optional<std::size_t> TrackGraph::local_index(int node_id) const {
  auto it = index_of_.find(node_id);
  if (it == index_of_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> TrackGraph::find_edge(std::size_t src, std::size_t dst) const {
  auto it = edge_of_.find(edge_key(src, dst));
  if (it == edge_of_.end()) return std::nullopt;
  return it->second;
}

TrackGraph build_graph(std::vector<Detection> detections, int max_frame_gap, int top_k) {
  if (top_k < 0) throw ConfigError("top_k must be non-negative");
  for (const auto& d : detections) {
    if (d.appearance.empty()) {
      throw ConfigError("detection " + std::to_string(d.node_id) + " has no appearance vector");
    }
  }
  std::sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.node_id < b.node_id;
  });
  const std::size_t n = detections.size();
  auto candidate = [&](std::size_t i, std::size_t j) {
    const int gap = std::abs(detections[i].frame - detections[j].frame);
    return gap > 0 && (max_frame_gap < 1 || gap <= max_frame_gap);
  };

  // top-k neighbour sets among candidates
  std::vector<std::set<std::size_t>> knn(n);
  for (std::size_t i = 0; i < n && top_k > 0; ++i) {
    std::vector<std::tuple<double, int, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (!candidate(i, j)) continue;
      cand.emplace_back(squared_distance(detections[i].appearance, detections[j].appearance),
                        detections[j].node_id, j);
    }
    const std::size_t keep = std::min<std::size_t>(cand.size(), std::size_t(top_k));
    std::partial_sort(cand.begin(), cand.begin() + keep, cand.end());
    for (std::size_t r = 0; r < keep; ++r) knn[i].insert(std::get<2>(cand[r]));
  }

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : knn[i]) {
      if (detections[i].frame < detections[j].frame && knn[j].count(i)) edges.push_back({i, j});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return a.src != b.src ? a.src < b.src : a.dst < b.dst;
  });
  return TrackGraph(std::move(detections), std::move(edges));
}

std::vector<FrameWindow> split_windows(std::span<const Detection> detections, int n) {
  if (n < 2) throw ConfigError("window length n must be at least 2");
  std::set<int> frames;
  for (const auto& d : detections) frames.insert(d.frame);
  if (frames.empty()) return {};
  const int first = *frames.begin(), last = *frames.rbegin();
  if (last - first + 1 <= n) return {{first, last}};
  std::vector<FrameWindow> out;
  for (int f : frames) {
    if (f + n - 1 > last) break;
    out.push_back({f, f + n - 1});
  }
  return out;
}

std::vector<Detection> select_window(std::span<const Detection> detections, const FrameWindow& w) {
  std::vector<Detection> out;
  for (const auto& d : detections) {
    if (d.frame >= w.first && d.frame <= w.last) out.push_back(d);
  }
  return out;
}

std::map<int, int> identity_map(std::span<const Detection> detections) {
  std::map<int, int> m;
  for (const auto& d : detections) {
    if (d.gt_identity) m[d.node_id] = *d.gt_identity;
  }
  return m;
}

EdgeLabels ground_truth_labels(const TrackGraph& graph, const std::map<int, int>& identity_of) {
  EdgeLabels y(graph.num_edges(), 0);
  // nodes are frame-ordered, so per-identity lists come out frame-ordered
  std::map<int, std::vector<std::size_t>> chains;
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    auto it = identity_of.find(graph.node(i).node_id);
    if (it != identity_of.end()) chains[it->second].push_back(i);
  }
  for (const auto& [id, chain] : chains) {
    for (std::size_t k = 1; k < chain.size(); ++k) {
      if (graph.node(chain[k - 1]).frame == graph.node(chain[k]).frame) continue;
      if (auto e = graph.find_edge(chain[k - 1], chain[k])) y[*e] = 1;
    }
  }
  return y;
}

EdgeLabels ground_truth_labels(const TrackGraph& graph, const Scenario& scenario) {
  return ground_truth_labels(graph, identity_map(scenario.detections));
}

}  // namespace mpnflow
