#pragma once

#include <random>
#include <vector>

#include "mpnflow/infer.hpp"

namespace testutil {

struct RoundingCase {
  mpnflow::TrackGraph graph;
  std::vector<double> probs;
  mpnflow::EdgeLabels tentative;
  std::vector<std::size_t> violating;  // tentatively active edges of the violating subgraph
};

// Dense random graph over a few frames with random probabilities, redrawn
// until its violating subgraph is non-empty and holds at most `max_edges` edges.
inline RoundingCase random_violating_case(std::uint64_t seed, double tau = 0.5,
                                          std::size_t max_edges = 12) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    const int frames = 2 + int(rng() % 3);
    std::vector<mpnflow::Detection> nodes;
    for (int f = 1; f <= frames; ++f) {
      const int per = 1 + int(rng() % 3);
      for (int k = 0; k < per; ++k) {
        mpnflow::Detection d;
        d.node_id = int(nodes.size());
        d.frame = f;
        d.appearance = {0.0};
        nodes.push_back(d);
      }
    }
    std::vector<mpnflow::Edge> edges;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        if (nodes[i].frame < nodes[j].frame && unit(rng) < 0.7) edges.push_back({i, j});
      }
    }
    RoundingCase c;
    c.graph = mpnflow::TrackGraph(nodes, edges);
    for (std::size_t e = 0; e < edges.size(); ++e) c.probs.push_back(unit(rng));
    c.tentative = mpnflow::threshold(c.probs, tau);
    c.violating = mpnflow::violating_subgraph(c.graph, c.tentative).edges;
    if (!c.violating.empty() && c.violating.size() <= max_edges) return c;
  }
}

// Best objective over all labellings that change only the violating edges
// and satisfy every flow constraint.
inline double brute_force_objective(const RoundingCase& c, double tau) {
  const std::size_t n = c.violating.size();
  double best = -1e300;
  for (std::uint64_t mask = 0; mask < (std::uint64_t(1) << n); ++mask) {
    mpnflow::EdgeLabels y = c.tentative;
    for (std::size_t k = 0; k < n; ++k) y[c.violating[k]] = (mask >> k) & 1;
    if (!mpnflow::check_constraints(c.graph, y).violations.empty()) continue;
    best = std::max(best, mpnflow::rounding_objective(c.probs, y, tau));
  }
  return best;
}

}  // namespace testutil
