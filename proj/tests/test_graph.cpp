#include <doctest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "mpnflow/error.hpp"
#include "mpnflow/graph.hpp"
#include "mpnflow/infer.hpp"

using namespace mpnflow;
using testutil::det;

namespace {

Scenario busy_scenario(std::uint64_t seed) {
  ScenarioConfig c;
  c.num_frames = 12;
  c.num_identities = 5;
  c.detection_dropout = 0.2;
  c.false_positive_rate = 0.5;
  c.appearance_noise_std = 0.6;
  c.seed = seed;
  return generate_scenario(c);
}

std::vector<std::pair<int, int>> id_edges(const TrackGraph& g) {
  std::vector<std::pair<int, int>> out;
  for (const auto& e : g.edges()) out.emplace_back(g.node(e.src).node_id, g.node(e.dst).node_id);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("two detections in different frames are mutual nearest neighbours") {
  for (int gap : {0, 1, 5}) {
    TrackGraph g = build_graph({det(0, 1, {0, 0, 5, 5}, {0.0}), det(1, 2, {3, 0, 5, 5}, {3.0})},
                               gap, 1);
    REQUIRE(g.num_edges() == 1);
    CHECK(g.edge(0) == Edge{0, 1});
  }
}

TEST_CASE("same-frame detections are never connected") {
  TrackGraph g = build_graph({det(0, 1, {0, 0, 5, 5}), det(1, 1, {9, 0, 5, 5})}, 0, 10);
  CHECK(g.num_edges() == 0);
}

TEST_CASE("top_k = 0 prunes everything; negative is an error") {
  std::vector<Detection> d{det(0, 1, {0, 0, 5, 5}), det(1, 2, {9, 0, 5, 5})};
  CHECK(build_graph(d, 0, 0).num_edges() == 0);
  CHECK_THROWS_AS(build_graph(d, 0, -1), ConfigError);
}

TEST_CASE("missing appearance is a config error") {
  Detection a = det(0, 1, {0, 0, 5, 5});
  a.appearance.clear();
  CHECK_THROWS_AS(build_graph({a, det(1, 2, {0, 0, 5, 5})}, 0, 3), ConfigError);
}

TEST_CASE("frame gap limit") {
  std::vector<Detection> d{det(0, 1, {0, 0, 5, 5}), det(1, 2, {0, 0, 5, 5}),
                           det(2, 4, {0, 0, 5, 5})};
  CHECK(build_graph(d, 1, 10).num_edges() == 1);
  CHECK(build_graph(d, 2, 10).num_edges() == 2);
  CHECK(build_graph(d, 0, 10).num_edges() == 3);
}

TEST_CASE("kNN ties resolve to the lower node id") {
  // node 0 sees nodes 1 and 2 at equal distance; with top_k=1 only (0,1) survives
  std::vector<Detection> d{det(0, 1, {0, 0, 5, 5}, {0.0}), det(1, 2, {0, 0, 5, 5}, {1.0}),
                           det(2, 2, {0, 0, 5, 5}, {-1.0})};
  TrackGraph g = build_graph(d, 0, 1);
  REQUIRE(g.num_edges() == 1);
  CHECK(g.node(g.edge(0).dst).node_id == 1);
}

TEST_CASE("graph layout: sorted nodes, canonical sorted edges, side lists") {
  Scenario s = busy_scenario(3);
  std::vector<Detection> shuffled = s.detections;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  TrackGraph g = build_graph(shuffled, 0, 4);
  for (std::size_t i = 1; i < g.num_nodes(); ++i) {
    const auto& a = g.node(i - 1);
    const auto& b = g.node(i);
    CHECK((a.frame < b.frame || (a.frame == b.frame && a.node_id < b.node_id)));
  }
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    CHECK(g.node(g.edge(e).src).frame < g.node(g.edge(e).dst).frame);
    if (e > 0) {
      const auto& p = g.edge(e - 1);
      const auto& q = g.edge(e);
      CHECK((p.src < q.src || (p.src == q.src && p.dst < q.dst)));
    }
    CHECK(g.find_edge(g.edge(e).src, g.edge(e).dst) == e);
  }
  std::size_t past = 0, future = 0;
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    past += g.past(i).size();
    future += g.future(i).size();
    for (std::size_t e : g.past(i)) CHECK(g.edge(e).dst == i);
    for (std::size_t e : g.future(i)) CHECK(g.edge(e).src == i);
  }
  CHECK(past == g.num_edges());
  CHECK(future == g.num_edges());
}

TEST_CASE("pruning is monotone in top_k") {
  Scenario s = busy_scenario(8);
  for (int k = 1; k < 8; ++k) {
    auto small = id_edges(build_graph(s.detections, 0, k));
    auto large = id_edges(build_graph(s.detections, 0, k + 1));
    CHECK(std::includes(large.begin(), large.end(), small.begin(), small.end()));
  }
}

TEST_CASE("relabelling node ids gives an isomorphic graph") {
  Scenario s = busy_scenario(9);
  std::vector<int> perm(s.detections.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = int(i);
  std::mt19937_64 rng(2);
  std::shuffle(perm.begin(), perm.end(), rng);
  // distinct appearances: ties (and thus id-based tie breaks) cannot occur
  std::vector<Detection> relabelled = s.detections;
  for (auto& d : relabelled) d.node_id = 1000 + perm[d.node_id];
  auto a = id_edges(build_graph(s.detections, 0, 3));
  auto b = id_edges(build_graph(relabelled, 0, 3));
  std::vector<std::pair<int, int>> mapped;
  for (auto [u, v] : a) mapped.emplace_back(1000 + perm[u], 1000 + perm[v]);
  std::sort(mapped.begin(), mapped.end());
  CHECK(mapped == b);
}

TEST_CASE("window splitting") {
  auto frames = [](int first, int last) {
    std::vector<Detection> d;
    for (int f = first; f <= last; ++f) d.push_back(det(f, f, {0, 0, 5, 5}));
    return d;
  };
  auto w20 = split_windows(frames(1, 20), 15);
  REQUIRE(w20.size() == 6);
  for (int k = 0; k < 6; ++k) CHECK(w20[k] == FrameWindow{k + 1, k + 15});
  auto w15 = split_windows(frames(1, 15), 15);
  CHECK(w15 == std::vector<FrameWindow>{{1, 15}});
  auto w10 = split_windows(frames(1, 10), 15);
  CHECK(w10 == std::vector<FrameWindow>{{1, 10}});
  CHECK(split_windows({}, 15).empty());
  CHECK_THROWS_AS(split_windows(frames(1, 3), 1), ConfigError);

  auto sel = select_window(frames(1, 20), {4, 6});
  REQUIRE(sel.size() == 3);
  CHECK(sel.front().frame == 4);
}

TEST_CASE("ground-truth labels follow consecutive present detections") {
  auto with_id = [](Detection d, int id) {
    d.gt_identity = id;
    return d;
  };
  std::vector<Detection> d{with_id(det(0, 3, {0, 0, 5, 5}), 7), with_id(det(1, 4, {0, 0, 5, 5}), 7),
                           with_id(det(2, 5, {0, 0, 5, 5}), 7)};
  TrackGraph g = build_graph(d, 0, 10);
  EdgeLabels y = ground_truth_labels(g, identity_map(d));
  CHECK(y[*g.find_edge(0, 1)] == 1);
  CHECK(y[*g.find_edge(1, 2)] == 1);
  CHECK(y[*g.find_edge(0, 2)] == 0);

  std::vector<Detection> dropped{d[0], d[2]};
  TrackGraph h = build_graph(dropped, 0, 10);
  EdgeLabels z = ground_truth_labels(h, identity_map(dropped));
  REQUIRE(h.num_edges() == 1);
  CHECK(z[0] == 1);

  Detection stranger = det(3, 4, {0, 0, 5, 5});
  TrackGraph k = build_graph({d[0], stranger}, 0, 10);
  CHECK(ground_truth_labels(k, identity_map(std::vector<Detection>{d[0], stranger}))[0] == 0);
}

TEST_CASE("ground-truth labels always satisfy the flow constraints") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Scenario s = busy_scenario(seed);
    for (int k : {1, 3, 10}) {
      TrackGraph g = build_graph(s.detections, 0, k);
      EdgeLabels y = ground_truth_labels(g, s);
      ConstraintCheck c = check_constraints(g, y);
      CHECK(c.violations.empty());
      CHECK(c.satisfaction_rate == 1.0);
    }
  }
}

TEST_CASE("malformed graphs are rejected") {
  std::vector<Detection> d{det(0, 1, {0, 0, 5, 5}), det(1, 2, {0, 0, 5, 5})};
  CHECK_THROWS_AS(TrackGraph(d, {{1, 0}}), InternalError);
  CHECK_THROWS_AS(TrackGraph(d, {{0, 1}, {0, 1}}), InternalError);
  std::vector<Detection> dup{det(0, 1, {0, 0, 5, 5}), det(0, 2, {0, 0, 5, 5})};
  CHECK_THROWS_AS(TrackGraph(dup, {}), ConfigError);
}
