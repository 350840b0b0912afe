#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpnflow/graph.hpp"
#include "mpnflow/synthdata.hpp"

namespace mpnflow {

struct ClearMot {
  double mota = 0.0;
  std::size_t gt = 0;  // ground-truth objects over all frames
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t idsw = 0;
  std::size_t gt_tracks = 0;
  std::size_t mostly_tracked = 0;  // matched in more than 80% of their frames
  std::size_t mostly_lost = 0;     // matched in less than 20%
  double similarity_sum = 0.0;     // summed IoU over matches
};

/// CLEAR MOT with IoU matching. Per frame, previous assignments are kept while
/// their IoU stays >= iou_threshold; the rest is completed by a maximum-IoU
/// bipartite matching. Throws NumericError for empty ground truth.
ClearMot clear_mot(std::span<const LabeledBox> gt, std::span<const LabeledBox> pred,
                   double iou_threshold = 0.5);

struct IdMeasures {
  double idf1 = 1.0;
  std::size_t idtp = 0;
  std::size_t idfp = 0;
  std::size_t idfn = 0;
};

/// Global trajectory-level matching maximizing the number of frames with
/// IoU >= iou_threshold; IDF1 = 1 when both sides are empty.
IdMeasures idf1(std::span<const LabeledBox> gt, std::span<const LabeledBox> pred,
                double iou_threshold = 0.5);

/// Binary mask placed on the image pixel lattice: pixel (x0 + c, y0 + r).
struct PixelMask {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major height x width

  std::size_t area() const;
  bool at(int x, int y) const;
};

double mask_iou(const PixelMask& a, const PixelMask& b);

/// Lays a probability grid over `box` and thresholds it; a pixel takes the
/// grid cell containing its centre.
PixelMask paste_grid(const Grid& grid, const Box& box, double threshold = 0.5);

/// IoU of two thresholded single-channel grids of equal size (1 when both are
/// empty). Throws ShapeError on size mismatch.
double grid_mask_iou(const Grid& pred, const Grid& gt, double threshold = 0.5);

struct MaskObject {
  int frame = 0;
  int id = 0;
  PixelMask mask;
};

struct MotsMeasures {
  double motsa = 0.0;
  double smotsa = 0.0;
  double mean_iou = 0.0;  // over true positives
  ClearMot counts;
};

/// CLEAR matching on mask IoU (threshold 0.5). Predictions with empty masks
/// are not objects.
MotsMeasures mots_metrics(std::span<const MaskObject> gt, std::span<const MaskObject> pred,
                          double iou_threshold = 0.5);

/// Percentage of satisfied flow constraints.
double constraint_rate(const TrackGraph& graph, const EdgeLabels& y);
double mean_rate(std::span<const double> rates);

struct MetricsReport {
  ClearMot clear;
  IdMeasures id;
  std::optional<double> constraint_satisfaction;  // percent
  std::optional<MotsMeasures> mots;
  std::optional<double> mean_mask_iou;
};

std::string format_report(const MetricsReport& r);
void write_report_csv(const MetricsReport& r, const std::filesystem::path& path);

/// Keeps only boxes whose frame lies in both inputs' frame ranges. Returns
/// true when something was dropped.
bool restrict_to_common_frames(std::vector<LabeledBox>& gt, std::vector<LabeledBox>& pred);

}  // namespace mpnflow
