// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "mpnflow/graph.hpp"
#include "mpnflow/infer.hpp"
#include "mpnflow/kernels.hpp"
#include "mpnflow/metrics.hpp"
#include "mpnflow/mpn.hpp"
#include "mpnflow/synthdata.hpp"
#include "mpnflow/train.hpp"
#include "rounding_cases.hpp"

using namespace mpnflow;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, std::string detail, double secs) {
  while (!detail.empty() && (detail.back() == ' ' || detail.back() == ';')) detail.pop_back();
  std::printf("criterion %d: %s  %s  (%.1fs)\n", id, pass ? "PASS" : "FAIL", detail.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- synthetic benchmark ------------------------------------------------------

ScenarioConfig benchmark_scenario(std::uint64_t seed) {
  ScenarioConfig c;
  c.num_frames = 200;
  c.num_identities = 6;
  c.image_width = 320;
  c.image_height = 240;
  c.min_box_width = 20.0;
  c.max_box_width = 40.0;
  c.detection_dropout = 0.1;
  c.false_positive_rate = 0.5;
  c.box_jitter_std = 1.0;
  c.appearance_dim = 8;
  c.appearance_noise_std = 0.5;
  c.roi_height = c.roi_width = 8;
  c.roi_channels = 3;
  c.roi_noise_std = 1.0;
  c.seed = seed;
  return c;
}

MpnConfig benchmark_model(Variant v, int steps, bool masks) {
  MpnConfig m;
  m.variant = v;
  m.num_steps = steps;
  m.with_masks = masks;
  m.d_app = 8;
  m.d_node = 16;
  m.d_edge = 12;
  m.hidden = 16;
  m.roi_height = m.roi_width = 8;
  m.d_roi = 3;
  m.context_channels = m.mask_channels = 4;
  m.mask_layers = 3;
  return m;
}

TrainConfig benchmark_training(std::uint64_t seed) {
  TrainConfig t;
  t.iterations = 1500;
  t.lr = 3e-3;
  t.weight_decay = 0.0;
  t.frames_per_graph = 10;
  t.top_k = 15;
  t.seed = seed;
  return t;
}

InferenceConfig benchmark_inference() {
  InferenceConfig i;
  i.window = 10;
  i.top_k = 15;
  i.tau = 0.5;
  return i;
}

struct RunResult {
  double constraint = 0.0;  // percent, thresholded, mean over windows
  double idf1 = 0.0;
  double mota = 0.0;
  double mask_iou = 0.0;
  double smotsa = 0.0;
};

// Trains on the scenario of `seed` and evaluates on the validation scenario 1000 + seed.
RunResult run_benchmark(Variant v, int steps, bool masks, std::uint64_t seed) {
  static std::map<std::tuple<int, int, bool, std::uint64_t>, RunResult> cache;
  const auto key = std::make_tuple(int(v), steps, masks, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const std::vector<Scenario> train{generate_scenario(benchmark_scenario(seed))};
  const Scenario val = generate_scenario(benchmark_scenario(1000 + seed));
  const MpnConfig mc = benchmark_model(v, steps, masks);
  const TrainResult tr = train_loop(train, benchmark_training(seed), mc);
  const InferenceConfig ic = benchmark_inference();
  const SequenceResult res = infer_sequence(val.detections, tr.params, mc, ic);

  std::vector<LabeledBox> gt, pred;
  for (const auto& t : val.truth) gt.push_back({t.frame, t.identity, t.box});
  std::map<int, int> track_of;
  int id = 0;
  for (const auto& t : res.tracks) {
    std::size_t real = 0;
    for (const auto& p : t) real += p.interpolated ? 0 : 1;
    if (real < ic.min_track_length) continue;
    ++id;
    for (const auto& p : t) {
      pred.push_back({p.frame, id, p.box});
      if (!p.interpolated) track_of[p.node_id] = id;
    }
  }
  RunResult r;
  r.constraint = 100.0 * res.mean_window_rate();
  r.idf1 = idf1(gt, pred).idf1;
  r.mota = clear_mot(gt, pred).mota;
  if (masks) {
    std::vector<MaskObject> gto, pro;
    std::vector<double> ious;
    for (const auto& d : val.detections) {
      if (d.gt_identity && d.gt_mask) gto.push_back({d.frame, *d.gt_identity, paste_grid(*d.gt_mask, d.box)});
      auto m = res.masks.find(d.node_id);
      auto t = track_of.find(d.node_id);
      if (m != res.masks.end() && t != track_of.end()) {
        pro.push_back({d.frame, t->second, paste_grid(m->second, d.box)});
      }
      if (m != res.masks.end() && d.gt_mask) ious.push_back(grid_mask_iou(m->second, *d.gt_mask));
    }
    r.mask_iou = mean_rate(ious);
    r.smotsa = mots_metrics(gto, pro).smotsa;
  }
  cache[key] = r;
  return r;
}

// ---- criteria -----------------------------------------------------------------

void gradient_correctness() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::string detail;
  for (bool masks : {false, true}) {
    const ModelGradCheck g = model_gradcheck(masks, 0);
    const bool ok = g.nodes <= 10 && g.result.max_relative_error < 1e-4;
    pass = pass && ok;
    detail += fmt("masks %s: %zu nodes, max rel error %.2e; ", masks ? "on" : "off", g.nodes,
                  g.result.max_relative_error);
  }
  const double secs = seconds_since(t0);
  report(1, pass && secs < 60.0, "gradient check, L=2; " + detail, secs);
}

void rounding_exactness() {
  const auto t0 = Clock::now();
  const double tau = 0.5;
  int optimal = 0, feasible = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto c = testutil::random_violating_case(10'000 + seed, tau, 12);
    const EdgeLabels ex = exact_round(c.graph, c.probs, c.tentative, tau);
    const EdgeLabels gr = greedy_round(c.graph, c.probs, c.tentative, tau);
    const double best = testutil::brute_force_objective(c, tau);
    if (std::abs(rounding_objective(c.probs, ex, tau) - best) <= 1e-12) ++optimal;
    if (check_constraints(c.graph, ex).satisfaction_rate == 1.0 &&
        check_constraints(c.graph, gr).satisfaction_rate == 1.0) {
      ++feasible;
    }
  }
  const double secs = seconds_since(t0);
  report(2, optimal == 200 && feasible == 200 && secs < 60.0,
         fmt("exact = brute force in %d/200, both rounders feasible in %d/200", optimal, feasible), secs);
}

void constraint_ablation() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const double ta = run_benchmark(Variant::time_aware, 4, false, seed).constraint;
    const double va = run_benchmark(Variant::vanilla, 4, false, seed).constraint;
    pass = pass && ta >= 95.0 && ta > va;
    detail += fmt("seed %d: time-aware %.2f%% vs vanilla %.2f%%; ", int(seed), ta, va);
  }
  const double secs = seconds_since(t0);
  report(3, pass && secs < 900.0, "constraint satisfaction at tau 0.5; " + detail, secs);
}

void depth_trend() {
  const auto t0 = Clock::now();
  double deep = 0.0, flat = 0.0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const double d = run_benchmark(Variant::time_aware, 2, false, seed).idf1;
    const double f = run_benchmark(Variant::time_aware, 0, false, seed).idf1;
    deep += d / 3.0;
    flat += f / 3.0;
    detail += fmt("%.3f/%.3f, ", d, f);
  }
  const double secs = seconds_since(t0);
  report(4, deep > flat && secs < 1200.0,
         fmt("mean IDF1 L=2 %.3f vs L=0 %.3f (per seed ", deep, flat) + detail.substr(0, detail.size() - 2) + ")", secs);
}

void mask_learning() {
  const auto t0 = Clock::now();
  const RunResult r = run_benchmark(Variant::time_aware, 2, true, 0);
  const double secs = seconds_since(t0);
  report(5, r.mask_iou >= 0.9 && r.smotsa >= 0.8 && secs < 1200.0,
         fmt("mean mask IoU %.4f, sMOTSA %.4f", r.mask_iou, r.smotsa), secs);
}

void joint_training() {
  const auto t0 = Clock::now();
  double joint = 0.0, alone = 0.0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const double j = run_benchmark(Variant::time_aware, 2, true, seed).idf1;
    const double a = run_benchmark(Variant::time_aware, 2, false, seed).idf1;
    joint += j / 3.0;
    alone += a / 3.0;
    detail += fmt("%.3f/%.3f, ", j, a);
  }
  report(6, joint >= alone,
         fmt("mean IDF1 attentive %.3f vs tracking-only %.3f (per seed ", joint, alone) + detail.substr(0, detail.size() - 2) + ")",
         seconds_since(t0));
}

void metrics_oracle() {
  const auto t0 = Clock::now();
  auto track = [](int id, int first, int last) {
    std::vector<LabeledBox> v;
    for (int f = first; f <= last; ++f) v.push_back({f, id, {10, 10, 20, 40}});
    return v;
  };
  const auto gt = track(1, 1, 4);
  auto split = track(7, 1, 2);
  const auto rest = track(9, 3, 4);
  split.insert(split.end(), rest.begin(), rest.end());

  PixelMask full;
  full.width = full.height = 10;
  full.bits.assign(100, 1);
  const std::vector<MaskObject> masks{{1, 1, full}, {2, 1, full}};
  const MotsMeasures mots = mots_metrics(masks, masks);

  const double split_idf1 = idf1(gt, split).idf1;
  const double switch_mota = clear_mot(gt, split).mota;
  const bool perfect = clear_mot(gt, gt).mota == 1.0 && idf1(gt, gt).idf1 == 1.0 &&
                       mots.smotsa == 1.0 && mots.motsa == 1.0 && mots.mean_iou == 1.0;
  report(7, split_idf1 == 0.5 && switch_mota == 0.75 && perfect,
         fmt("split IDF1 %.4f, one-switch MOTA %.4f, perfect %s", split_idf1, switch_mota,
             perfect ? "1.0" : "not 1.0"),
         seconds_since(t0));
}

void invariant_suite() {
  const auto t0 = Clock::now();
  std::vector<std::string> broken;
  ScenarioConfig sc;
  sc.num_frames = 8;
  sc.num_identities = 5;
  sc.appearance_dim = 6;
  sc.roi_height = sc.roi_width = 6;
  sc.roi_channels = 3;
  sc.detection_dropout = 0.1;
  sc.false_positive_rate = 0.5;
  MpnConfig mc;
  mc.num_steps = 3;
  mc.with_masks = true;
  mc.d_app = 6;
  mc.d_node = 8;
  mc.d_edge = 6;
  mc.hidden = 10;
  mc.roi_height = mc.roi_width = 6;
  mc.d_roi = 3;
  mc.context_channels = mc.mask_channels = 4;
  mc.mask_layers = 3;

  // permutation equivariance, bit-exact
  bool equivariant = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    sc.seed = seed;
    const Scenario s = generate_scenario(sc);
    const ModelParams p = ModelParams::init(mc, seed);
    std::vector<int> perm(s.detections.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Detection> q = s.detections;
    for (auto& d : q) d.node_id = perm[std::size_t(d.node_id)];
    std::shuffle(q.begin(), q.end(), rng);
    const TrackGraph ga = build_graph(s.detections, 0, 4), gb = build_graph(q, 0, 4);
    if (ga.num_edges() != gb.num_edges()) {
      equivariant = false;
      continue;
    }
    const MpnState a = mpn_forward(ga, p, mc), b = mpn_forward(gb, p, mc);
    const std::size_t cell = mc.roi_height * mc.roi_width;
    for (std::size_t k = 0; k < ga.num_edges(); ++k) {
      const auto src = gb.local_index(perm[std::size_t(ga.node(ga.edge(k).src).node_id)]);
      const auto dst = gb.local_index(perm[std::size_t(ga.node(ga.edge(k).dst).node_id)]);
      const auto kb = gb.find_edge(*src, *dst);
      if (!kb || a.final_probs().at(k) != b.final_probs().at(*kb)) equivariant = false;
    }
    for (std::size_t i = 0; i < ga.num_nodes(); ++i) {
      const std::size_t j = *gb.local_index(perm[std::size_t(ga.node(i).node_id)]);
      for (std::size_t c = 0; c < cell; ++c) {
        if (a.masks.back().at(i * cell + c) != b.masks.back().at(j * cell + c)) equivariant = false;
      }
    }
  }
  if (!equivariant) broken.push_back("permutation equivariance");

  // attention normalization and empty aggregation
  bool normalized = true, empty_zero = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    sc.seed = 100 + seed;
    const TrackGraph g = build_graph(generate_scenario(sc).detections, 0, 4);
    const MpnState st = mpn_forward(g, ModelParams::init(mc, seed), mc);
    for (std::size_t l = 0; l < st.attention_past.size(); ++l) {
      std::vector<double> past(g.num_nodes(), 0.0), fut(g.num_nodes(), 0.0);
      std::vector<int> npast(g.num_nodes(), 0), nfut(g.num_nodes(), 0);
      for (std::size_t e = 0; e < g.num_edges(); ++e) {
        past[g.edge(e).dst] += st.attention_past[l].at(e);
        fut[g.edge(e).src] += st.attention_future[l].at(e);
        ++npast[g.edge(e).dst];
        ++nfut[g.edge(e).src];
      }
      for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        if (npast[i] > 0 && std::abs(past[i] - 1.0) > 1e-12) normalized = false;
        if (nfut[i] > 0 && std::abs(fut[i] - 1.0) > 1e-12) normalized = false;
      }
    }
    const std::size_t E = g.num_edges(), N = g.num_nodes();
    std::vector<double> msg(E * 3, 1.0);
    const tk::Tensor sums =
        tk::segment_sum(tk::Tensor::constant({E, 3}, msg), g.destinations(), N);
    std::vector<char> has_in(N, 0);
    for (std::size_t e = 0; e < E; ++e) has_in[g.edge(e).dst] = 1;
    for (std::size_t i = 0; i < N; ++i) {
      if (has_in[i]) continue;
      for (std::size_t c = 0; c < 3; ++c) empty_zero = empty_zero && sums.at(i * 3 + c) == 0.0;
    }
  }
  if (!normalized) broken.push_back("attention normalization");
  if (!empty_zero) broken.push_back("empty aggregation");

  // ground-truth labels satisfy the flow constraints
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ScenarioConfig hard = sc;
    hard.seed = 200 + seed;
    hard.num_frames = 15;
    const Scenario s = generate_scenario(hard);
    const TrackGraph g = build_graph(s.detections, 0, 8);
    if (check_constraints(g, ground_truth_labels(g, identity_map(s.detections))).satisfaction_rate != 1.0) {
      broken.push_back("ground-truth feasibility");
      break;
    }
  }

  // seed determinism
  sc.seed = 7;
  const Scenario s1 = generate_scenario(sc), s2 = generate_scenario(sc);
  TrainConfig tc;
  tc.iterations = 30;
  tc.frames_per_graph = 4;
  tc.top_k = 4;
  tc.seed = 7;
  const std::vector<Scenario> data{s1};
  const TrainResult r1 = train_loop(data, tc, mc), r2 = train_loop(data, tc, mc);
  bool same = s1 == s2 && r1.history.size() == r2.history.size();
  for (std::size_t k = 0; same && k < r1.history.size(); ++k) same = r1.history[k].total == r2.history[k].total;
  const auto p1 = r1.params.parameters(), p2 = r2.params.parameters();
  for (std::size_t k = 0; same && k < p1.size(); ++k) {
    same = std::equal(p1[k].tensor.values().begin(), p1[k].tensor.values().end(),
                      p2[k].tensor.values().begin(), p2[k].tensor.values().end());
  }
  InferenceConfig ic;
  ic.window = 4;
  ic.top_k = 4;
  const SequenceResult i1 = infer_sequence(s1.detections, r1.params, mc, ic);
  ic.threads = 2;
  const SequenceResult i2 = infer_sequence(s1.detections, r1.params, mc, ic);
  same = same && i1.probs == i2.probs && i1.labels == i2.labels && i1.masks == i2.masks;
  kernels::set_threads(1);
  if (!same) broken.push_back("seed determinism");

  std::string detail = "permutation equivariance, attention normalization, empty aggregation, "
                       "ground-truth feasibility, seed determinism";
  if (!broken.empty()) {
    detail = "broken:";
    for (const auto& b : broken) detail += " " + b;
  }
  const double secs = seconds_since(t0);
  report(8, broken.empty() && secs < 120.0, detail, secs);
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria{
      gradient_correctness, rounding_exactness, constraint_ablation, depth_trend,
      mask_learning,        joint_training,     metrics_oracle,      invariant_suite};
  for (const auto& c : criteria) {
    try {
      c();
    } catch (const std::exception& e) {
      std::printf("criterion error: %s\n", e.what());
      ++failures;
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
