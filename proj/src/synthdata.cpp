#include "mpnflow/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "mpnflow/error.hpp"

namespace mpnflow {

namespace fs = std::filesystem;

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("scenario." + field + ": " + why);
  };
  auto prob = [&](double p, const char* field) {
    if (!(p >= 0.0 && p <= 1.0)) fail(field, "must be a probability in [0,1]");
  };
  if (num_frames < 2) fail("num_frames", "must be at least 2");
  if (num_identities < 0) fail("num_identities", "must be non-negative");
  if (image_width <= 0 || image_height <= 0) fail("image_size", "must be positive");
  if (max_speed < 0.0) fail("max_speed", "must be non-negative");
  if (position_noise_std < 0.0) fail("position_noise_std", "must be non-negative");
  if (!(min_box_width > 0.0) || max_box_width < min_box_width) {
    fail("min_box_width", "need 0 < min_box_width <= max_box_width");
  }
  if (!(aspect_ratio > 0.0)) fail("aspect_ratio", "must be positive");
  if (max_box_width > image_width || max_box_width * aspect_ratio > image_height) {
    fail("max_box_width", "boxes must fit inside the image");
  }
  prob(detection_dropout, "detection_dropout");
  prob(ellipse_probability, "ellipse_probability");
  if (false_positive_rate < 0.0) fail("false_positive_rate", "must be non-negative");
  if (box_jitter_std < 0.0) fail("box_jitter_std", "must be non-negative");
  if (appearance_dim < 1) fail("appearance_dim", "must be at least 1");
  if (appearance_noise_std < 0.0) fail("appearance_noise_std", "must be non-negative");
  if (roi_height < 4) fail("roi_height", "must be at least 4");
  if (roi_width < 4) fail("roi_width", "must be at least 4");
  if (roi_channels < 2) fail("roi_channels", "must be at least 2 (shape + noise)");
  if (roi_noise_std < 0.0) fail("roi_noise_std", "must be non-negative");
  if (frame_stride < 1) fail("frame_stride", "must be at least 1");
}

bool shape_contains(ShapeKind shape, const Box& object_box, double px, double py) {
  const double cx = object_box.x + object_box.w / 2.0;
  const double cy = object_box.y + object_box.h / 2.0;
  if (shape == ShapeKind::ellipse) {
    const double dx = (px - cx) / (object_box.w / 2.0);
    const double dy = (py - cy) / (object_box.h / 2.0);
    return dx * dx + dy * dy <= 1.0;
  }
  // central 60% x 80% of the box
  return std::abs(px - cx) <= 0.3 * object_box.w && std::abs(py - cy) <= 0.4 * object_box.h;
}

Grid render_shape(ShapeKind shape, const Box& object_box, const Box& roi_box, std::size_t rows,
                  std::size_t cols) {
  Grid g(rows, cols, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double px = roi_box.x + (double(c) + 0.5) * roi_box.w / double(cols);
      const double py = roi_box.y + (double(r) + 0.5) * roi_box.h / double(rows);
      g.at(r, c) = shape_contains(shape, object_box, px, py) ? 1.0 : 0.0;
    }
  }
  return g;
}

std::map<int, std::vector<int>> trajectories_from_identities(const std::vector<Detection>& dets) {
  std::map<int, std::vector<std::pair<int, int>>> by_id;
  for (const auto& d : dets) {
    if (d.gt_identity) by_id[*d.gt_identity].emplace_back(d.frame, d.node_id);
  }
  std::map<int, std::vector<int>> out;
  for (auto& [id, v] : by_id) {
    std::sort(v.begin(), v.end());
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i].first == v[i - 1].first) {
        throw ParseError("identity " + std::to_string(id) + " has two detections in frame " +
                         std::to_string(v[i].first));
      }
    }
    auto& t = out[id];
    for (const auto& [f, n] : v) t.push_back(n);
  }
  return out;
}

namespace {

struct Mover {
  Box box;
  double vx = 0.0;
  double vy = 0.0;
  ShapeKind shape = ShapeKind::ellipse;
  std::vector<double> appearance;
};

// Reflects a coordinate into [0, limit] and flips velocity on a bounce.
void bounce(double& pos, double& vel, double limit) {
  if (limit <= 0.0) {
    pos = 0.0;
    return;
  }
  while (pos < 0.0 || pos > limit) {
    if (pos < 0.0) pos = -pos;
    if (pos > limit) pos = 2.0 * limit - pos;
    vel = -vel;
  }
}

Grid make_roi(const ScenarioConfig& cfg, const Grid* mask, const std::vector<double>& appearance,
              std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t H = cfg.roi_height, W = cfg.roi_width, C = cfg.roi_channels;
  Grid g(H, W, C);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      g.at(r, c, 0) = (mask ? mask->at(r, c) : 0.0) + cfg.roi_noise_std * noise(rng);
      for (std::size_t ch = 1; ch + 1 < C; ++ch) {
        g.at(r, c, ch) = appearance[(ch - 1) % appearance.size()];
      }
      g.at(r, c, C - 1) = cfg.roi_noise_std * noise(rng);
    }
  }
  return g;
}

}  // namespace

Scenario generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Mover> movers(cfg.num_identities);
  for (auto& m : movers) {
    m.box.w = cfg.min_box_width + (cfg.max_box_width - cfg.min_box_width) * unit(rng);
    m.box.h = m.box.w * cfg.aspect_ratio;
    m.box.x = (cfg.image_width - m.box.w) * unit(rng);
    m.box.y = (cfg.image_height - m.box.h) * unit(rng);
    m.vx = cfg.max_speed * (2.0 * unit(rng) - 1.0);
    m.vy = cfg.max_speed * (2.0 * unit(rng) - 1.0);
    m.shape = unit(rng) < cfg.ellipse_probability ? ShapeKind::ellipse : ShapeKind::rectangle;
    m.appearance.resize(cfg.appearance_dim);
    for (double& a : m.appearance) a = gauss(rng);
  }

  Scenario s;
  std::poisson_distribution<int> fp_count(cfg.false_positive_rate > 0.0 ? cfg.false_positive_rate
                                                                        : 1.0);
  for (int frame = 1; frame <= cfg.num_frames; ++frame) {
    if (frame > 1) {
      for (auto& m : movers) {
        m.box.x += m.vx;
        m.box.y += m.vy;
        bounce(m.box.x, m.vx, cfg.image_width - m.box.w);
        bounce(m.box.y, m.vy, cfg.image_height - m.box.h);
      }
    }
    const bool kept = (frame - 1) % cfg.frame_stride == 0;

    for (int id = 0; id < cfg.num_identities; ++id) {
      const Mover& m = movers[id];
      Box truth = m.box;
      if (cfg.position_noise_std > 0.0) {
        truth.x += cfg.position_noise_std * gauss(rng);
        truth.y += cfg.position_noise_std * gauss(rng);
      }
      // draw every random number regardless of `kept` so strides share one world
      const bool dropped = unit(rng) < cfg.detection_dropout;
      Box det = truth;
      if (cfg.box_jitter_std > 0.0) {
        det.x += cfg.box_jitter_std * gauss(rng);
        det.y += cfg.box_jitter_std * gauss(rng);
        det.w = std::max(1.0, det.w + cfg.box_jitter_std * gauss(rng));
        det.h = std::max(1.0, det.h + cfg.box_jitter_std * gauss(rng));
      }
      std::vector<double> app = m.appearance;
      for (double& a : app) a += cfg.appearance_noise_std * gauss(rng);
      const double conf = 0.5 + 0.5 * unit(rng);
      if (!kept) continue;
      s.truth.push_back({frame, id, truth, m.shape});
      if (dropped) continue;

      Detection d;
      d.node_id = int(s.detections.size());
      d.frame = frame;
      d.box = det;
      d.confidence = conf;
      d.gt_identity = id;
      d.gt_mask = render_shape(m.shape, truth, det, cfg.roi_height, cfg.roi_width);
      d.roi_grid = make_roi(cfg, &*d.gt_mask, app, rng);
      d.appearance = std::move(app);
      s.detections.push_back(std::move(d));
    }

    const int spurious = cfg.false_positive_rate > 0.0 ? fp_count(rng) : 0;
    for (int k = 0; k < spurious; ++k) {
      Box b;
      b.w = cfg.min_box_width + (cfg.max_box_width - cfg.min_box_width) * unit(rng);
      b.h = b.w * cfg.aspect_ratio;
      b.x = (cfg.image_width - b.w) * unit(rng);
      b.y = (cfg.image_height - b.h) * unit(rng);
      std::vector<double> app(cfg.appearance_dim);
      for (double& a : app) a = gauss(rng);
      const double conf = 0.3 + 0.5 * unit(rng);
      if (!kept) continue;
      Detection d;
      d.node_id = int(s.detections.size());
      d.frame = frame;
      d.box = b;
      d.confidence = conf;
      d.roi_grid = make_roi(cfg, nullptr, app, rng);
      d.appearance = std::move(app);
      s.detections.push_back(std::move(d));
    }
  }
  s.gt_trajectories = trajectories_from_identities(s.detections);
  return s;
}

// ---- parsing helpers ------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& text, std::size_t line, const char* what) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ParseError(std::string("bad ") + what + " '" + t + "'", line);
  }
  return v;
}

long parse_int(const std::string& text, std::size_t line, const char* what) {
  const double v = parse_real(text, line, what);
  if (v != std::floor(v)) throw ParseError(std::string("non-integer ") + what, line);
  return long(v);
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

// Calls fn(fields, line_number) for every non-empty line.
template <typename Fn>
void for_each_record(const fs::path& path, Fn&& fn) {
  auto is = open_in(path);
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (trim(line).empty()) continue;
    fn(split_csv(line), number);
  }
}

std::map<int, std::vector<double>> read_keyed_rows(const fs::path& path) {
  std::map<int, std::vector<double>> rows;
  for_each_record(path, [&](const std::vector<std::string>& f, std::size_t line) {
    const int id = int(parse_int(f[0], line, "node_id"));
    std::vector<double> v;
    for (std::size_t i = 1; i < f.size(); ++i) v.push_back(parse_real(f[i], line, "value"));
    if (!rows.emplace(id, std::move(v)).second) {
      throw ParseError("duplicate node_id " + std::to_string(id), line);
    }
  });
  return rows;
}

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
  return s;
}

}  // namespace

std::vector<Detection> load_mot_detections(const fs::path& path) {
  std::vector<Detection> out;
  for_each_record(path, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() < 7) throw ParseError("expected at least 7 comma-separated fields", line);
    Detection d;
    d.node_id = int(out.size());
    d.frame = int(parse_int(f[0], line, "frame"));
    const long id = parse_int(f[1], line, "id");
    d.box = {parse_real(f[2], line, "bb_left"), parse_real(f[3], line, "bb_top"),
             parse_real(f[4], line, "bb_width"), parse_real(f[5], line, "bb_height")};
    d.confidence = parse_real(f[6], line, "conf");
    if (d.frame < 0) throw ParseError("negative frame", line);
    if (!(d.box.w > 0.0) || !(d.box.h > 0.0)) throw ParseError("nonpositive box width/height", line);
    if (id >= 0) d.gt_identity = int(id);
    out.push_back(std::move(d));
  });
  return out;
}

void write_mot_detections(const std::vector<Detection>& dets, const fs::path& path) {
  auto os = open_out(path);
  for (const auto& d : dets) {
    os << d.frame << ',' << (d.gt_identity ? *d.gt_identity : -1) << ',' << d.box.x << ','
       << d.box.y << ',' << d.box.w << ',' << d.box.h << ',' << d.confidence << ",-1,-1,-1\n";
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void attach_embeddings(std::vector<Detection>& dets, const fs::path& path) {
  const auto rows = read_keyed_rows(path);
  std::optional<std::size_t> dim;
  for (const auto& [id, v] : rows) {
    if (v.empty()) throw ParseError("empty embedding for node_id " + std::to_string(id));
    if (dim && *dim != v.size()) {
      throw ParseError("embedding dimension mismatch: node_id " + std::to_string(id) + " has " +
                       std::to_string(v.size()) + " values, expected " + std::to_string(*dim));
    }
    dim = v.size();
  }
  std::vector<int> missing;
  for (const auto& d : dets) {
    if (!rows.count(d.node_id)) missing.push_back(d.node_id);
  }
  if (!missing.empty()) throw ParseError("missing embeddings for node_id " + join_ids(missing));
  for (auto& d : dets) d.appearance = rows.at(d.node_id);
}

void write_embeddings(const std::vector<Detection>& dets, const fs::path& path) {
  auto os = open_out(path);
  for (const auto& d : dets) {
    os << d.node_id;
    for (double v : d.appearance) os << ',' << v;
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void attach_rois(std::vector<Detection>& dets, const fs::path& path) {
  const auto rows = read_keyed_rows(path);
  std::vector<int> missing;
  for (auto& d : dets) {
    auto it = rows.find(d.node_id);
    if (it == rows.end()) {
      missing.push_back(d.node_id);
      continue;
    }
    const auto& v = it->second;
    if (v.size() < 3) throw ParseError("short RoI row for node_id " + std::to_string(d.node_id));
    Grid g(static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2]));
    if (v.size() != 3 + g.data.size()) {
      throw ParseError("RoI row for node_id " + std::to_string(d.node_id) + " has wrong length");
    }
    std::copy(v.begin() + 3, v.end(), g.data.begin());
    d.roi_grid = std::move(g);
  }
  if (!missing.empty()) throw ParseError("missing RoI grids for node_id " + join_ids(missing));
}

void write_rois(const std::vector<Detection>& dets, const fs::path& path) {
  auto os = open_out(path);
  for (const auto& d : dets) {
    if (d.roi_grid.empty()) continue;
    os << d.node_id << ',' << d.roi_grid.height << ',' << d.roi_grid.width << ','
       << d.roi_grid.channels;
    for (double v : d.roi_grid.data) os << ',' << v;
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void attach_masks(std::vector<Detection>& dets, const fs::path& path) {
  const auto rows = read_keyed_rows(path);
  for (auto& d : dets) {
    auto it = rows.find(d.node_id);
    if (it == rows.end()) continue;  // no mask: background detection
    const auto& v = it->second;
    if (v.size() < 2) throw ParseError("short mask row for node_id " + std::to_string(d.node_id));
    Grid g(static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), 1);
    if (v.size() != 2 + g.data.size()) {
      throw ParseError("mask row for node_id " + std::to_string(d.node_id) + " has wrong length");
    }
    std::copy(v.begin() + 2, v.end(), g.data.begin());
    if (!d.roi_grid.empty() && (g.height != d.roi_grid.height || g.width != d.roi_grid.width)) {
      throw ParseError("mask and RoI grid sizes differ for node_id " + std::to_string(d.node_id));
    }
    d.gt_mask = std::move(g);
  }
}

void write_masks(const std::vector<Detection>& dets, const fs::path& path) {
  auto os = open_out(path);
  for (const auto& d : dets) {
    if (!d.gt_mask) continue;
    os << d.node_id << ',' << d.gt_mask->height << ',' << d.gt_mask->width;
    for (double v : d.gt_mask->data) os << ',' << v;
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void write_results(const std::vector<TrackSequence>& tracks, const fs::path& path,
                   std::size_t min_length) {
  std::vector<std::size_t> order;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    if (!tracks[t].empty() && tracks[t].size() >= min_length) order.push_back(t);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return tracks[a].front().frame < tracks[b].front().frame;
  });
  struct Row {
    int frame;
    int id;
    const TrackPoint* p;
  };
  std::vector<Row> rows;
  for (std::size_t k = 0; k < order.size(); ++k) {
    for (const auto& p : tracks[order[k]]) rows.push_back({p.frame, int(k) + 1, &p});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << r.frame << ',' << r.id << ',' << r.p->box.x << ',' << r.p->box.y << ',' << r.p->box.w
       << ',' << r.p->box.h << ',' << r.p->confidence << ",-1,-1,-1\n";
  }
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<LabeledBox> load_labeled_boxes(const fs::path& path) {
  std::vector<LabeledBox> out;
  for (const auto& d : load_mot_detections(path)) {
    out.push_back({d.frame, d.gt_identity ? *d.gt_identity : -1, d.box});
  }
  return out;
}

void write_truth(const std::vector<TruthBox>& truth, const fs::path& path) {
  auto os = open_out(path);
  for (const auto& t : truth) {
    // column 8 carries the rendered shape: 1 ellipse, 2 rectangle
    os << t.frame << ',' << t.identity << ',' << t.box.x << ',' << t.box.y << ',' << t.box.w << ','
       << t.box.h << ",1," << (t.shape == ShapeKind::ellipse ? 1 : 2) << ",1\n";
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void save_scenario_dir(const Scenario& s, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_mot_detections(s.detections, dir / "det.txt");
  write_truth(s.truth, dir / "gt.txt");
  write_embeddings(s.detections, dir / "embeddings.csv");
  const bool rois = std::any_of(s.detections.begin(), s.detections.end(),
                                [](const Detection& d) { return !d.roi_grid.empty(); });
  if (rois) write_rois(s.detections, dir / "rois.csv");
  const bool masks = std::any_of(s.detections.begin(), s.detections.end(),
                                 [](const Detection& d) { return d.gt_mask.has_value(); });
  if (masks) write_masks(s.detections, dir / "masks.csv");
}

Scenario load_scenario_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("scenario directory not found: " + dir.string());
  Scenario s;
  s.detections = load_mot_detections(dir / "det.txt");
  attach_embeddings(s.detections, dir / "embeddings.csv");
  if (fs::exists(dir / "rois.csv")) attach_rois(s.detections, dir / "rois.csv");
  if (fs::exists(dir / "masks.csv")) attach_masks(s.detections, dir / "masks.csv");
  s.gt_trajectories = trajectories_from_identities(s.detections);
  if (fs::exists(dir / "gt.txt")) {
    for_each_record(dir / "gt.txt", [&](const std::vector<std::string>& f, std::size_t line) {
      if (f.size() < 6) throw ParseError("expected at least 6 fields in gt.txt", line);
      TruthBox t;
      t.frame = int(parse_int(f[0], line, "frame"));
      t.identity = int(parse_int(f[1], line, "id"));
      t.box = {parse_real(f[2], line, "bb_left"), parse_real(f[3], line, "bb_top"),
               parse_real(f[4], line, "bb_width"), parse_real(f[5], line, "bb_height")};
      if (f.size() >= 8 && parse_int(f[7], line, "class") == 2) t.shape = ShapeKind::rectangle;
      s.truth.push_back(t);
    });
  }
  return s;
}

}  // namespace mpnflow
