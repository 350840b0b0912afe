#pragma once

// Synthetic tracking scenarios and MOTChallenge-style text files.
//
// Detection files:  frame,id,bb_left,bb_top,bb_width,bb_height,conf[,...]
//   id is the ground-truth identity or -1. A detection's node_id is its
//   0-based line index among non-empty lines.
// Result files:     frame,track_id,bb_left,bb_top,bb_width,bb_height,conf,-1,-1,-1
// Embedding files:  node_id,v_0,...,v_{d-1}
// RoI files:        node_id,H,W,C,v_0,...   (H*W*C values, row-major H x W x C)
// Mask files:       node_id,H,W,m_0,...     (H*W values in {0,1})

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mpnflow {

/// Axis-aligned box, top-left corner plus size, in image pixels.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  bool operator==(const Box&) const = default;
};

double box_iou(const Box& a, const Box& b);

/// Dense H x W x C grid, row-major with channels innermost.
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  bool empty() const { return data.empty(); }
  double& at(std::size_t r, std::size_t c, std::size_t ch = 0) {
    return data[(r * width + c) * channels + ch];
  }
  double at(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return data[(r * width + c) * channels + ch];
  }
  bool operator==(const Grid&) const = default;
};

struct Detection {
  int node_id = 0;
  int frame = 0;
  Box box;
  double confidence = 1.0;
  std::vector<double> appearance;
  Grid roi_grid;  // empty when absent
  std::optional<int> gt_identity;
  std::optional<Grid> gt_mask;  // single channel, values in {0,1}

  bool operator==(const Detection&) const = default;
};

enum class ShapeKind { ellipse, rectangle };

struct ScenarioConfig {
  int num_frames = 60;
  int num_identities = 4;
  int image_width = 640;
  int image_height = 480;

  double max_speed = 4.0;             // |velocity| per axis, pixels/frame
  double position_noise_std = 0.0;    // added to the true position each frame
  double min_box_width = 30.0;
  double max_box_width = 60.0;
  double aspect_ratio = 2.0;          // height / width

  double detection_dropout = 0.0;     // probability a true detection is missed
  double false_positive_rate = 0.0;   // expected spurious detections per frame
  double box_jitter_std = 0.0;        // detector noise on x, y, w, h

  int appearance_dim = 16;
  double appearance_noise_std = 0.3;

  int roi_height = 8;
  int roi_width = 8;
  int roi_channels = 4;
  double roi_noise_std = 0.1;
  double ellipse_probability = 0.5;   // per-identity chance of an elliptic shape

  int frame_stride = 1;               // keep every k-th frame
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// True object placement, whether or not it was detected.
struct TruthBox {
  int frame = 0;
  int identity = 0;
  Box box;
  ShapeKind shape = ShapeKind::ellipse;

  bool operator==(const TruthBox&) const = default;
};

struct Scenario {
  std::vector<Detection> detections;
  std::map<int, std::vector<int>> gt_trajectories;  // identity -> node ids, frame-ordered
  std::vector<TruthBox> truth;

  bool operator==(const Scenario&) const = default;
};

/// One output track point; `interpolated` marks boxes filled across gaps.
struct TrackPoint {
  int frame = 0;
  Box box;
  double confidence = 1.0;
  bool interpolated = false;
  int node_id = -1;
};

using TrackSequence = std::vector<TrackPoint>;

/// Box-level labelled object: a ground-truth object or a tracker output.
struct LabeledBox {
  int frame = 0;
  int id = 0;
  Box box;
};

// ---- generation ---------------------------------------------------------------

Scenario generate_scenario(const ScenarioConfig& config);

/// Whether pixel location (px, py) lies inside `shape` drawn in `object_box`.
bool shape_contains(ShapeKind shape, const Box& object_box, double px, double py);

/// Rasterizes a shape into a rows x cols grid laid over `roi_box`
/// (cell centres tested against the shape drawn in `object_box`).
Grid render_shape(ShapeKind shape, const Box& object_box, const Box& roi_box, std::size_t rows,
                  std::size_t cols);

/// Rebuilds identity -> frame-ordered node ids from the detections' gt_identity.
std::map<int, std::vector<int>> trajectories_from_identities(const std::vector<Detection>& dets);

// ---- files --------------------------------------------------------------------

std::vector<Detection> load_mot_detections(const std::filesystem::path& path);

/// Full-precision detection file (lossless reload).
void write_mot_detections(const std::vector<Detection>& dets, const std::filesystem::path& path);

/// Fills every detection's appearance from an embedding file.
void attach_embeddings(std::vector<Detection>& dets, const std::filesystem::path& path);
void write_embeddings(const std::vector<Detection>& dets, const std::filesystem::path& path);

void attach_rois(std::vector<Detection>& dets, const std::filesystem::path& path);
void write_rois(const std::vector<Detection>& dets, const std::filesystem::path& path);
void attach_masks(std::vector<Detection>& dets, const std::filesystem::path& path);
void write_masks(const std::vector<Detection>& dets, const std::filesystem::path& path);

/// Writes tracks in the result format, 2 decimal places. Track ids are 1..m in
/// order of first appearance (first frame, then input order). Tracks shorter
/// than `min_length` points are skipped.
void write_results(const std::vector<TrackSequence>& tracks, const std::filesystem::path& path,
                   std::size_t min_length = 1);

/// Reads a ground-truth or result file as labelled boxes (id column kept).
std::vector<LabeledBox> load_labeled_boxes(const std::filesystem::path& path);
void write_truth(const std::vector<TruthBox>& truth, const std::filesystem::path& path);

/// Scenario directory: det.txt, gt.txt, embeddings.csv and, when present,
/// rois.csv and masks.csv.
void save_scenario_dir(const Scenario& s, const std::filesystem::path& dir);
Scenario load_scenario_dir(const std::filesystem::path& dir);

}  // namespace mpnflow
