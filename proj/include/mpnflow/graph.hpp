#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "mpnflow/synthdata.hpp"

namespace mpnflow {

/// Edge between local node indices; `src` is always the earlier frame.
struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  bool operator==(const Edge&) const = default;
};

struct FrameWindow {
  int first = 0;
  int last = 0;
  bool operator==(const FrameWindow&) const = default;
};

/// Tracking graph over one window of detections. Nodes are ordered by
/// (frame, node_id); edges by (src, dst). Built graphs are immutable.
class TrackGraph {
 public:
  TrackGraph() = default;
  TrackGraph(std::vector<Detection> nodes, std::vector<Edge> edges);

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Detection>& nodes() const { return nodes_; }
  const Detection& node(std::size_t i) const { return nodes_[i]; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(std::size_t e) const { return edges_[e]; }

  /// Incident edge indices whose other endpoint lies in an earlier / later frame.
  const std::vector<std::size_t>& past(std::size_t node) const { return past_[node]; }
  const std::vector<std::size_t>& future(std::size_t node) const { return future_[node]; }

  std::optional<std::size_t> local_index(int node_id) const;
  std::optional<std::size_t> find_edge(std::size_t src, std::size_t dst) const;

  /// Edge source / destination arrays, handy for gather and segment operations.
  const std::vector<std::size_t>& sources() const { return src_; }
  const std::vector<std::size_t>& destinations() const { return dst_; }

  FrameWindow window() const { return window_; }

 private:
  std::vector<Detection> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> past_;
  std::vector<std::vector<std::size_t>> future_;
  std::vector<std::size_t> src_;
  std::vector<std::size_t> dst_;
  std::unordered_map<int, std::size_t> index_of_;
  std::unordered_map<std::uint64_t, std::size_t> edge_of_;
  FrameWindow window_;
};

/// y per edge, in graph edge order.
using EdgeLabels = std::vector<std::uint8_t>;

/// Connects every cross-frame pair at most `max_frame_gap` frames apart
/// (no limit when < 1), then keeps an edge only if both endpoints are among
/// each other's `top_k` nearest neighbours by Euclidean appearance distance
/// (ties: lower node_id first). Throws ConfigError if a detection has no
/// appearance vector.
TrackGraph build_graph(std::vector<Detection> detections, int max_frame_gap, int top_k);

/// Windows [f, f+n-1] for every present start frame f whose window ends at or
/// before the last frame; a single window when the span is at most n frames.
std::vector<FrameWindow> split_windows(std::span<const Detection> detections, int n);

std::vector<Detection> select_window(std::span<const Detection> detections, const FrameWindow& w);

/// y = 1 exactly for edges joining successive (by frame) detections of one
/// identity among the graph's nodes. Nodes without identity get only zeros.
EdgeLabels ground_truth_labels(const TrackGraph& graph, const std::map<int, int>& identity_of);
EdgeLabels ground_truth_labels(const TrackGraph& graph, const Scenario& scenario);

/// node_id -> identity, from the detections' gt_identity.
std::map<int, int> identity_map(std::span<const Detection> detections);

}  // namespace mpnflow
