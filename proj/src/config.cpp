#include "mpnflow/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mpnflow/error.hpp"

namespace mpnflow {

using nlohmann::json;

namespace {

// Reads typed fields of one JSON object, remembering which keys were used.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      obj_ = &root.at(name_);
      if (!obj_->is_object()) throw ConfigError(name_ + ": expected an object");
    }
  }
  Section(const json* obj, std::string name) : obj_(obj), name_(std::move(name)) {}

  template <class T>
  void get(const char* key, T& out) {
    if (obj_ == nullptr || !obj_->contains(key)) return;
    used_.insert(key);
    const json& v = obj_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<long long>() < 0) throw ConfigError("");
        }
        out = v.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
        out = v.get<T>();
      } else {
        if (!v.is_string()) throw ConfigError("");
        out = T(v.get<std::string>());
      }
    } catch (const ConfigError&) {
      throw ConfigError(field(key) + ": wrong type or value " + v.dump());
    }
  }

  void accept(const char* key) { used_.insert(key); }
  bool has(const char* key) const { return obj_ != nullptr && obj_->contains(key); }
  std::string field(const char* key) const { return name_ + "." + key; }

  void finish() const {
    if (obj_ == nullptr) return;
    for (const auto& [k, v] : obj_->items()) {
      if (!used_.count(k)) throw ConfigError(name_ + "." + k + ": unknown key");
    }
  }

 private:
  const json* obj_ = nullptr;
  std::string name_;
  std::set<std::string> used_;
};

Variant parse_variant(const std::string& s) {
  if (s == "time_aware") return Variant::time_aware;
  if (s == "vanilla") return Variant::vanilla;
  throw ConfigError("mpn.variant: expected vanilla or time_aware, got " + s);
}

void read_mpn(Section& s, MpnConfig& c) {
  s.get("num_steps", c.num_steps);
  std::string variant = to_string(c.variant);
  s.get("variant", variant);
  c.variant = parse_variant(variant);
  s.get("with_masks", c.with_masks);
  s.get("d_app", c.d_app);
  s.get("d_node", c.d_node);
  s.get("d_edge", c.d_edge);
  s.get("hidden", c.hidden);
  s.get("roi_height", c.roi_height);
  s.get("roi_width", c.roi_width);
  s.get("d_roi", c.d_roi);
  s.get("context_channels", c.context_channels);
  s.get("mask_channels", c.mask_channels);
  s.get("mask_layers", c.mask_layers);
  s.get("last_m_steps", c.last_m_steps);
  s.finish();
}

json mpn_to_json(const MpnConfig& c) {
  return json{{"num_steps", c.num_steps},
              {"variant", to_string(c.variant)},
              {"with_masks", c.with_masks},
              {"d_app", c.d_app},
              {"d_node", c.d_node},
              {"d_edge", c.d_edge},
              {"hidden", c.hidden},
              {"roi_height", c.roi_height},
              {"roi_width", c.roi_width},
              {"d_roi", c.d_roi},
              {"context_channels", c.context_channels},
              {"mask_channels", c.mask_channels},
              {"mask_layers", c.mask_layers},
              {"last_m_steps", c.last_m_steps}};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::vanilla ? "vanilla" : "time_aware"; }
std::string to_string(Rounder r) { return r == Rounder::exact ? "exact" : "greedy"; }

Rounder parse_rounder(const std::string& s) {
  if (s == "exact") return Rounder::exact;
  if (s == "greedy") return Rounder::greedy;
  throw ConfigError("infer.rounder: expected exact or greedy, got " + s);
}

void RunConfig::override_seed(std::uint64_t s) {
  seed = s;
  scenario.seed = s;
  train.seed = s;
  gradcheck.seed = s;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: expected a JSON object");

  RunConfig c;
  Section top(&root, "config");
  top.get("seed", c.seed);
  c.scenario.seed = c.train.seed = c.gradcheck.seed = c.seed;

  for (const char* key : {"scenario", "mpn", "train", "infer", "gradcheck", "paths"}) {
    top.accept(key);
  }
  top.finish();

  Section sc(root, "scenario");
  auto& s = c.scenario;
  sc.get("num_frames", s.num_frames);
  sc.get("num_identities", s.num_identities);
  sc.get("image_width", s.image_width);
  sc.get("image_height", s.image_height);
  sc.get("max_speed", s.max_speed);
  sc.get("position_noise_std", s.position_noise_std);
  sc.get("min_box_width", s.min_box_width);
  sc.get("max_box_width", s.max_box_width);
  sc.get("aspect_ratio", s.aspect_ratio);
  sc.get("detection_dropout", s.detection_dropout);
  sc.get("false_positive_rate", s.false_positive_rate);
  sc.get("box_jitter_std", s.box_jitter_std);
  sc.get("appearance_dim", s.appearance_dim);
  sc.get("appearance_noise_std", s.appearance_noise_std);
  sc.get("roi_height", s.roi_height);
  sc.get("roi_width", s.roi_width);
  sc.get("roi_channels", s.roi_channels);
  sc.get("roi_noise_std", s.roi_noise_std);
  sc.get("ellipse_probability", s.ellipse_probability);
  sc.get("frame_stride", s.frame_stride);
  sc.get("seed", s.seed);
  sc.finish();

  Section mp(root, "mpn");
  read_mpn(mp, c.mpn);

  Section tr(root, "train");
  auto& t = c.train;
  tr.get("iterations", t.iterations);
  tr.get("lr", t.lr);
  tr.get("weight_decay", t.weight_decay);
  tr.get("beta1", t.beta1);
  tr.get("beta2", t.beta2);
  tr.get("eps", t.eps);
  tr.get("frames_per_graph", t.frames_per_graph);
  tr.get("top_k", t.top_k);
  tr.get("max_frame_gap", t.max_frame_gap);
  tr.get("node_drop", t.node_drop);
  tr.get("box_shift_std", t.box_shift_std);
  tr.get("shift_position_only", t.shift_position_only);
  tr.get("checkpoint_every", t.checkpoint_every);
  tr.get("seed", t.seed);
  tr.finish();

  Section in(root, "infer");
  auto& i = c.infer;
  in.get("tau", i.tau);
  std::string rounder = to_string(i.rounder);
  in.get("rounder", rounder);
  i.rounder = parse_rounder(rounder);
  in.get("window", i.window);
  in.get("top_k", i.top_k);
  in.get("max_frame_gap", i.max_frame_gap);
  in.get("min_track_length", i.min_track_length);
  in.get("interpolate", i.interpolate);
  in.get("threads", i.threads);
  in.finish();

  Section gc(root, "gradcheck");
  gc.get("fd_step", c.gradcheck.fd_step);
  gc.get("threshold", c.gradcheck.threshold);
  gc.get("corrupt", c.gradcheck.corrupt);
  gc.get("seed", c.gradcheck.seed);
  gc.finish();

  Section pa(root, "paths");
  auto& p = c.paths;
  std::string v;
  auto path_field = [&](const char* key, std::filesystem::path& out) {
    if (!pa.has(key)) return;
    pa.get(key, v);
    out = v;
  };
  path_field("data_dir", p.data_dir);
  path_field("checkpoint", p.checkpoint);
  path_field("history", p.history);
  path_field("output_dir", p.output_dir);
  path_field("gt", p.gt);
  path_field("results", p.results);
  path_field("report", p.report);
  pa.finish();
  for (auto* f : {&p.data_dir, &p.checkpoint, &p.history, &p.output_dir, &p.gt, &p.results, &p.report}) {
    *f = resolve(base_dir, *f);
  }

  s.validate();
  c.mpn.validate();
  c.train.validate();
  c.infer.validate();
  if (!(c.gradcheck.fd_step > 0.0)) throw ConfigError("gradcheck.fd_step: must be positive");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string mpn_config_to_json(const MpnConfig& c) { return mpn_to_json(c).dump(); }

MpnConfig mpn_config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint metadata: invalid JSON: ") + e.what());
  }
  MpnConfig c;
  Section s(&root, "mpn");
  read_mpn(s, c);
  c.validate();
  return c;
}

}  // namespace mpnflow
