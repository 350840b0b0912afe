#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "mpnflow/graph.hpp"
#include "mpnflow/mpn.hpp"
#include "mpnflow/synthdata.hpp"

namespace mpnflow {

/// y = 1 iff p >= tau.
EdgeLabels threshold(std::span<const double> probs, double tau);

enum class Side { past, future };

struct Violation {
  std::size_t node = 0;  // local index
  Side side = Side::past;
  std::size_t active = 0;
};

struct ConstraintCheck {
  std::vector<Violation> violations;
  std::size_t total = 0;  // 2 |V|
  std::size_t satisfied = 0;
  double satisfaction_rate = 1.0;  // fraction in [0, 1]
};

ConstraintCheck check_constraints(const TrackGraph& graph, const EdgeLabels& y);

struct ViolatingSubgraph {
  std::vector<std::size_t> nodes;  // endpoints of the edges below, ascending
  std::vector<std::size_t> edges;  // tentatively active edges on a violated node side, ascending
};

ViolatingSubgraph violating_subgraph(const TrackGraph& graph, const EdgeLabels& y);

/// Sum of (p - tau) over active edges.
double rounding_objective(std::span<const double> probs, const EdgeLabels& y, double tau);

/// Inside the violating subgraph, maximizes sum (p - tau) y subject to the
/// flow constraints (a maximum-weight bipartite matching between earlier and
/// later endpoints); other edges keep their tentative labels.
EdgeLabels exact_round(const TrackGraph& graph, std::span<const double> probs, const EdgeLabels& y,
                       double tau);

/// Inside the violating subgraph, accepts edges by descending p (ties: lower
/// edge index) while both endpoint sides are free.
EdgeLabels greedy_round(const TrackGraph& graph, std::span<const double> probs, const EdgeLabels& y,
                        double tau);

/// Paths of active edges as frame-ordered local node indices, singletons
/// included, ordered by first node. Throws InternalError on infeasible y.
std::vector<std::vector<std::size_t>> extract_trajectories(const TrackGraph& graph,
                                                           const EdgeLabels& y);

/// Linear per-coordinate fill of missing frames between consecutive points.
TrackSequence interpolate(const TrackSequence& track);

using NodePair = std::pair<int, int>;  // (earlier node_id, later node_id)

struct WindowPrediction {
  std::vector<NodePair> edges;
  std::vector<double> probs;
  std::map<int, Grid> masks;  // node_id -> probability grid
};

struct MergedPrediction {
  std::map<NodePair, double> probs;
  std::map<int, Grid> masks;
};

/// Arithmetic mean over the windows containing each edge / node. The result
/// does not depend on the order of `windows`.
MergedPrediction merge_windows(std::span<const WindowPrediction> windows);

enum class Rounder { exact, greedy };

struct InferenceConfig {
  double tau = 0.5;
  Rounder rounder = Rounder::exact;
  int window = 15;
  int top_k = 10;
  int max_frame_gap = 0;  // 0: the window length
  std::size_t min_track_length = 2;
  bool interpolate = true;
  int threads = 1;

  void validate() const;
};

struct SequenceResult {
  TrackGraph graph;                  // all detections, union of window edges
  std::vector<double> probs;         // merged, in graph edge order
  EdgeLabels tentative;
  EdgeLabels labels;                 // after rounding
  ConstraintCheck before;            // thresholded merged labels
  std::vector<double> window_rates;  // thresholded per-window satisfaction
  std::vector<std::vector<std::size_t>> paths;
  std::vector<TrackSequence> tracks;  // every path, interpolated when enabled
  std::map<int, Grid> masks;

  double mean_window_rate() const;
};

WindowPrediction predict_window(const TrackGraph& graph, const ModelParams& params,
                                const MpnConfig& config);

SequenceResult infer_sequence(std::span<const Detection> detections, const ModelParams& params,
                              const MpnConfig& mc, const InferenceConfig& ic);

/// Portable graymap, maxval 255, value round(p * 255).
void write_mask_pgm(const Grid& mask, const std::filesystem::path& path);

}  // namespace mpnflow
