#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "mpnflow/checkpoint.hpp"
#include "mpnflow/config.hpp"
#include "mpnflow/error.hpp"
#include "mpnflow/infer.hpp"
#include "mpnflow/kernels.hpp"
#include "mpnflow/log.hpp"
#include "mpnflow/metrics.hpp"
#include "mpnflow/synthdata.hpp"
#include "mpnflow/train.hpp"

namespace fs = std::filesystem;
using namespace mpnflow;

namespace {

constexpr int kOk = 0;
constexpr int kConfigOrIo = 1;
constexpr int kCheckFailed = 2;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

int cmd_generate(const RunConfig& c) {
  const Scenario s = generate_scenario(c.scenario);
  save_scenario_dir(s, c.paths.data_dir);
  std::size_t fps = 0;
  for (const auto& d : s.detections) fps += d.gt_identity ? 0 : 1;
  std::printf("generated %zu detections (%zu false positives), %zu trajectories, %zu truth boxes in %s\n",
              s.detections.size(), fps, s.gt_trajectories.size(), s.truth.size(),
              c.paths.data_dir.string().c_str());
  return kOk;
}

int cmd_train(const RunConfig& c) {
  const Scenario s = load_scenario_dir(c.paths.data_dir);
  const std::string meta = mpn_config_to_json(c.mpn);
  auto hook = [&](int it, const ModelParams& p) {
    fs::path path = c.paths.checkpoint;
    path += ".iter" + std::to_string(it);
    tk::save_checkpoint(path, p.parameters(), meta);
  };
  const std::vector<Scenario> data{s};
  TrainResult r = train_loop(data, c.train, c.mpn, hook);
  if (c.paths.checkpoint.has_parent_path()) ensure_dir(c.paths.checkpoint.parent_path());
  tk::save_checkpoint(c.paths.checkpoint, r.params.parameters(), meta);
  if (c.paths.history.has_parent_path()) ensure_dir(c.paths.history.parent_path());
  write_history(r.history, c.paths.history);
  if (!r.history.empty()) {
    std::printf("trained %d iterations: L_t %.5f -> %.5f, L_s %.5f -> %.5f\n", c.train.iterations,
                r.history.front().edge, r.history.back().edge, r.history.front().mask,
                r.history.back().mask);
  } else {
    std::printf("trained 0 iterations\n");
  }
  std::printf("checkpoint %s, history %s\n", c.paths.checkpoint.string().c_str(),
              c.paths.history.string().c_str());
  return kOk;
}

ModelParams load_model(const RunConfig& c) {
  const tk::Checkpoint ckpt = tk::load_checkpoint(c.paths.checkpoint);
  ModelParams p = ModelParams::init(c.mpn, 0);
  tk::ParamList list = p.parameters();
  tk::restore(list, ckpt);
  return p;
}

void write_grid_csv(const std::map<int, Grid>& grids, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << std::setprecision(17);
  for (const auto& [id, g] : grids) {
    f << id << ',' << g.height << ',' << g.width;
    for (double v : g.data) f << ',' << v;
    f << '\n';
  }
}

std::map<int, Grid> read_grid_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::map<int, Grid> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> v;
    while (std::getline(ss, tok, ',')) {
      try {
        v.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ParseError("bad number '" + tok + "' in " + path.string(), n);
      }
    }
    if (v.size() < 3) throw ParseError("short mask row in " + path.string(), n);
    Grid g(static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2]), 1);
    if (v.size() != 3 + g.data.size()) throw ParseError("mask size mismatch in " + path.string(), n);
    std::copy(v.begin() + 3, v.end(), g.data.begin());
    out[int(v[0])] = std::move(g);
  }
  return out;
}

int cmd_infer(const RunConfig& c) {
  const ModelParams params = load_model(c);
  const Scenario s = load_scenario_dir(c.paths.data_dir);
  const SequenceResult r = infer_sequence(s.detections, params, c.mpn, c.infer);
  ensure_dir(c.paths.output_dir);

  std::vector<TrackSequence> kept;
  for (const auto& t : r.tracks) {
    std::size_t real = 0;
    for (const auto& p : t) real += p.interpolated ? 0 : 1;
    if (real >= c.infer.min_track_length) kept.push_back(t);
  }
  write_results(kept, c.paths.output_dir / "results.txt");

  // node -> output track id, numbered as in the results file
  std::vector<std::pair<int, std::size_t>> order;
  for (std::size_t k = 0; k < kept.size(); ++k) order.push_back({kept[k].front().frame, k});
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  {
    std::ofstream f(c.paths.output_dir / "assignments.csv");
    if (!f) throw IoError("cannot write assignments.csv");
    f << "node_id,track_id\n";
    for (std::size_t id = 0; id < order.size(); ++id) {
      for (const auto& p : kept[order[id].second]) {
        if (!p.interpolated) f << p.node_id << ',' << id + 1 << '\n';
      }
    }
  }
  if (c.mpn.with_masks) {
    write_grid_csv(r.masks, c.paths.output_dir / "masks.csv");
    ensure_dir(c.paths.output_dir / "masks");
    for (const auto& [id, g] : r.masks) {
      write_mask_pgm(g, c.paths.output_dir / "masks" / (std::to_string(id) + ".pgm"));
    }
  }
  const double window_rate = 100.0 * r.mean_window_rate();
  const double merged_rate = 100.0 * r.before.satisfaction_rate;
  nlohmann::json summary{{"constraint_satisfaction", window_rate},
                         {"merged_constraint_satisfaction", merged_rate},
                         {"windows", r.window_rates.size()},
                         {"tracks", kept.size()},
                         {"rounder", to_string(c.infer.rounder)},
                         {"tau", c.infer.tau}};
  std::ofstream(c.paths.output_dir / "summary.json") << summary.dump(2) << '\n';

  std::printf("constraint satisfaction before rounding: %.2f%% (windows), %.2f%% (merged)\n",
              window_rate, merged_rate);
  std::printf("%zu tracks written to %s\n", kept.size(),
              (c.paths.output_dir / "results.txt").string().c_str());
  return kOk;
}

int cmd_eval(const RunConfig& c) {
  const fs::path gt_path = c.paths.gt.empty() ? c.paths.data_dir / "gt.txt" : c.paths.gt;
  const fs::path res_path =
      c.paths.results.empty() ? c.paths.output_dir / "results.txt" : c.paths.results;
  auto gt = load_labeled_boxes(gt_path);
  auto pred = load_labeled_boxes(res_path);
  if (restrict_to_common_frames(gt, pred)) {
    spdlog::warn("ground truth and results cover different frame ranges; evaluating the intersection");
  }
  MetricsReport rep;
  rep.clear = clear_mot(gt, pred);
  rep.id = idf1(gt, pred);

  const fs::path summary = res_path.parent_path() / "summary.json";
  if (fs::exists(summary)) {
    std::ifstream f(summary);
    const auto j = nlohmann::json::parse(f, nullptr, false);
    if (!j.is_discarded() && j.contains("constraint_satisfaction")) {
      rep.constraint_satisfaction = j["constraint_satisfaction"].get<double>();
    }
  }

  const fs::path pred_masks = res_path.parent_path() / "masks.csv";
  const fs::path assign = res_path.parent_path() / "assignments.csv";
  if (fs::exists(c.paths.data_dir / "masks.csv") && fs::exists(pred_masks) && fs::exists(assign)) {
    const Scenario s = load_scenario_dir(c.paths.data_dir);
    const auto masks = read_grid_csv(pred_masks);
    std::map<int, int> track_of;
    std::ifstream f(assign);
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
      int node = 0, track = 0;
      if (std::sscanf(line.c_str(), "%d,%d", &node, &track) == 2) track_of[node] = track;
    }
    std::vector<MaskObject> gto, pro;
    std::vector<double> ious;
    for (const auto& d : s.detections) {
      if (d.gt_identity && d.gt_mask) gto.push_back({d.frame, *d.gt_identity, paste_grid(*d.gt_mask, d.box)});
      auto m = masks.find(d.node_id);
      auto t = track_of.find(d.node_id);
      if (m != masks.end() && t != track_of.end()) pro.push_back({d.frame, t->second, paste_grid(m->second, d.box)});
      if (m != masks.end() && d.gt_mask) ious.push_back(grid_mask_iou(m->second, *d.gt_mask));
    }
    if (!gto.empty()) rep.mots = mots_metrics(gto, pro);
    if (!ious.empty()) rep.mean_mask_iou = mean_rate(ious);
  }

  const std::string table = format_report(rep);
  std::fputs(table.c_str(), stdout);
  if (c.paths.report.has_parent_path()) ensure_dir(c.paths.report.parent_path());
  fs::path txt = c.paths.report, csv = c.paths.report;
  txt += ".txt";
  csv += ".csv";
  std::ofstream(txt) << table;
  write_report_csv(rep, csv);
  return kOk;
}

int cmd_gradcheck(const RunConfig& c) {
  int status = kOk;
  for (bool masks : {false, true}) {
    const ModelGradCheck g =
        model_gradcheck(masks, c.gradcheck.seed, c.gradcheck.fd_step, c.gradcheck.corrupt);
    const bool pass = g.result.max_relative_error < c.gradcheck.threshold;
    std::printf("masks %-3s nodes %zu edges %zu params %zu  max rel error %.3e (%s[%zu])  %s\n",
                masks ? "on" : "off", g.nodes, g.edges, g.result.checked,
                g.result.max_relative_error, g.result.worst_param.c_str(), g.result.worst_index,
                pass ? "ok" : "FAILED");
    if (!pass) status = kCheckFailed;
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"mpnflow: multi-object tracking and segmentation by message passing"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> rounder;
  std::optional<double> tau;

  std::map<std::string, int (*)(const RunConfig&)> commands{{"generate", cmd_generate},
                                                             {"train", cmd_train},
                                                             {"infer", cmd_infer},
                                                             {"eval", cmd_eval},
                                                             {"gradcheck", cmd_gradcheck}};
  const std::map<std::string, std::string> help{
      {"generate", "write a synthetic scenario"},
      {"train", "train a model on a scenario"},
      {"infer", "track a scenario with a trained model"},
      {"eval", "score results against ground truth"},
      {"gradcheck", "compare model gradients with finite differences"}};
  for (const auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "override every seed");
    sub->add_option("--threads", threads, "worker threads (default 1)");
    sub->add_option("--rounder", rounder, "exact or greedy");
    sub->add_option("--tau", tau, "edge activation threshold");
  }
  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig c = load_run_config(config_path);
    if (seed) c.override_seed(*seed);
    if (rounder) c.infer.rounder = parse_rounder(*rounder);
    if (tau) c.infer.tau = *tau;
    if (threads) {
      if (*threads < 1) throw ConfigError("--threads: must be >= 1");
      c.infer.threads = *threads;
    }
    c.infer.validate();
    kernels::set_threads(c.infer.threads);
    const std::string name = app.get_subcommands().front()->get_name();
    return commands.at(name)(c);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
  }
  return kConfigOrIo;
}
