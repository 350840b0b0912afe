#include "mpnflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mpnflow/error.hpp"
#include "mpnflow/infer.hpp"
#include "mpnflow/kernels.hpp"
#include "mpnflow/matching.hpp"

namespace mpnflow {

namespace {

// One frame of the CLEAR engine: object ids plus gt x pred similarities.
struct FrameData {
  std::vector<int> gt_ids;
  std::vector<int> pred_ids;
  std::vector<double> sim;  // gt-major
};

ClearMot clear_engine(const std::map<int, FrameData>& frames, double thr) {
  ClearMot r;
  std::map<int, int> last_match;  // gt id -> pred id of its latest match
  std::map<int, std::pair<std::size_t, std::size_t>> coverage;  // gt id -> (present, matched)

  for (const auto& [frame, fd] : frames) {
    const std::size_t G = fd.gt_ids.size(), P = fd.pred_ids.size();
    r.gt += G;
    std::vector<int> gt_to(G, -1);
    std::vector<char> pred_taken(P, 0);

    std::vector<std::size_t> gorder(G);
    for (std::size_t g = 0; g < G; ++g) gorder[g] = g;
    std::sort(gorder.begin(), gorder.end(),
              [&](std::size_t a, std::size_t b) { return fd.gt_ids[a] < fd.gt_ids[b]; });
    for (std::size_t g : gorder) {
      auto it = last_match.find(fd.gt_ids[g]);
      if (it == last_match.end()) continue;
      for (std::size_t p = 0; p < P; ++p) {
        if (fd.pred_ids[p] == it->second && !pred_taken[p] && fd.sim[g * P + p] >= thr) {
          gt_to[g] = int(p);
          pred_taken[p] = 1;
          break;
        }
      }
    }

    std::vector<std::size_t> free_g, free_p;
    for (std::size_t g : gorder) {
      if (gt_to[g] < 0) free_g.push_back(g);
    }
    std::vector<std::size_t> porder(P);
    for (std::size_t p = 0; p < P; ++p) porder[p] = p;
    std::sort(porder.begin(), porder.end(),
              [&](std::size_t a, std::size_t b) { return fd.pred_ids[a] < fd.pred_ids[b]; });
    for (std::size_t p : porder) {
      if (!pred_taken[p]) free_p.push_back(p);
    }
    std::vector<double> w(free_g.size() * free_p.size(), 0.0);
    for (std::size_t a = 0; a < free_g.size(); ++a) {
      for (std::size_t b = 0; b < free_p.size(); ++b) {
        const double s = fd.sim[free_g[a] * P + free_p[b]];
        if (s >= thr) w[a * free_p.size() + b] = s;
      }
    }
    const Matching m = max_weight_matching(w, free_g.size(), free_p.size());
    for (std::size_t a = 0; a < free_g.size(); ++a) {
      if (m.row_to_col[a] >= 0) {
        gt_to[free_g[a]] = int(free_p[std::size_t(m.row_to_col[a])]);
      }
    }

    std::size_t matches = 0;
    for (std::size_t g = 0; g < G; ++g) {
      auto& cov = coverage[fd.gt_ids[g]];
      ++cov.first;
      if (gt_to[g] < 0) continue;
      ++matches;
      ++cov.second;
      const int pid = fd.pred_ids[std::size_t(gt_to[g])];
      r.similarity_sum += fd.sim[g * P + std::size_t(gt_to[g])];
      auto it = last_match.find(fd.gt_ids[g]);
      if (it != last_match.end() && it->second != pid) ++r.idsw;
      last_match[fd.gt_ids[g]] = pid;
    }
    r.tp += matches;
    r.fn += G - matches;
    r.fp += P - matches;
  }
  r.gt_tracks = coverage.size();
  for (const auto& [id, cov] : coverage) {
    const double ratio = double(cov.second) / double(cov.first);
    if (ratio > 0.8) ++r.mostly_tracked;
    if (ratio < 0.2) ++r.mostly_lost;
  }
  if (r.gt == 0) throw NumericError("no ground-truth objects: MOTA is undefined");
  r.mota = 1.0 - double(r.fp + r.fn + r.idsw) / double(r.gt);
  return r;
}

template <class Obj, class Sim>
std::map<int, FrameData> build_frames(std::span<const Obj> gt, std::span<const Obj> pred, Sim sim) {
  std::map<int, std::vector<const Obj*>> g_by, p_by;
  for (const auto& o : gt) g_by[o.frame].push_back(&o);
  for (const auto& o : pred) p_by[o.frame].push_back(&o);
  std::set<int> frames;
  for (const auto& [f, v] : g_by) frames.insert(f);
  for (const auto& [f, v] : p_by) frames.insert(f);
  std::map<int, FrameData> out;
  for (int f : frames) {
    FrameData fd;
    const auto& gs = g_by[f];
    const auto& ps = p_by[f];
    for (const Obj* o : gs) fd.gt_ids.push_back(o->id);
    for (const Obj* o : ps) fd.pred_ids.push_back(o->id);
    fd.sim.resize(gs.size() * ps.size());
    for (std::size_t a = 0; a < gs.size(); ++a) {
      for (std::size_t b = 0; b < ps.size(); ++b) fd.sim[a * ps.size() + b] = sim(*gs[a], *ps[b]);
    }
    out.emplace(f, std::move(fd));
  }
  return out;
}

void require_threshold(double thr) {
  if (!(thr > 0.0 && thr < 1.0)) throw ConfigError("iou_threshold must lie in (0, 1)");
}

}  // namespace

ClearMot clear_mot(std::span<const LabeledBox> gt, std::span<const LabeledBox> pred,
                   double iou_threshold) {
  require_threshold(iou_threshold);
  return clear_engine(
      build_frames(gt, pred, [](const LabeledBox& a, const LabeledBox& b) { return box_iou(a.box, b.box); }),
      iou_threshold);
}

IdMeasures idf1(std::span<const LabeledBox> gt, std::span<const LabeledBox> pred,
                double iou_threshold) {
  require_threshold(iou_threshold);
  IdMeasures r;
  if (gt.empty() && pred.empty()) return r;
  std::map<int, std::size_t> grow, pcol;
  for (const auto& o : gt) grow[o.id] = 0;
  for (const auto& o : pred) pcol[o.id] = 0;
  std::size_t k = 0;
  for (auto& [id, idx] : grow) idx = k++;
  k = 0;
  for (auto& [id, idx] : pcol) idx = k++;

  std::vector<double> hits(grow.size() * pcol.size(), 0.0);
  std::map<int, std::vector<const LabeledBox*>> p_by;
  for (const auto& o : pred) p_by[o.frame].push_back(&o);
  for (const auto& g : gt) {
    auto it = p_by.find(g.frame);
    if (it == p_by.end()) continue;
    for (const LabeledBox* p : it->second) {
      if (box_iou(g.box, p->box) >= iou_threshold) hits[grow[g.id] * pcol.size() + pcol[p->id]] += 1.0;
    }
  }
  const Matching m = max_weight_matching(hits, grow.size(), pcol.size());
  r.idtp = std::size_t(std::llround(m.total));
  r.idfn = gt.size() - r.idtp;
  r.idfp = pred.size() - r.idtp;
  r.idf1 = 2.0 * double(r.idtp) / double(gt.size() + pred.size());
  return r;
}

std::size_t PixelMask::area() const {
  return std::size_t(std::count(bits.begin(), bits.end(), std::uint8_t(1)));
}

bool PixelMask::at(int x, int y) const {
  if (x < x0 || y < y0 || x >= x0 + width || y >= y0 + height) return false;
  return bits[std::size_t(y - y0) * std::size_t(width) + std::size_t(x - x0)] != 0;
}

double mask_iou(const PixelMask& a, const PixelMask& b) {
  const int xa = std::max(a.x0, b.x0), xb = std::min(a.x0 + a.width, b.x0 + b.width);
  const int ya = std::max(a.y0, b.y0), yb = std::min(a.y0 + a.height, b.y0 + b.height);
  std::size_t inter = 0;
  for (int y = ya; y < yb; ++y) {
    for (int x = xa; x < xb; ++x) inter += (a.at(x, y) && b.at(x, y)) ? 1 : 0;
  }
  const std::size_t uni = a.area() + b.area() - inter;
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

PixelMask paste_grid(const Grid& grid, const Box& box, double threshold) {
  if (grid.empty()) throw ShapeError("paste_grid: empty grid");
  PixelMask m;
  m.x0 = int(std::floor(box.x));
  m.y0 = int(std::floor(box.y));
  m.width = std::max(0, int(std::ceil(box.x + box.w)) - m.x0);
  m.height = std::max(0, int(std::ceil(box.y + box.h)) - m.y0);
  m.bits.assign(std::size_t(m.width) * std::size_t(m.height), 0);
  for (int r = 0; r < m.height; ++r) {
    const double v = (m.y0 + r + 0.5 - box.y) / box.h;
    if (v < 0.0 || v >= 1.0) continue;
    const auto row = std::min(grid.height - 1, std::size_t(v * double(grid.height)));
    for (int c = 0; c < m.width; ++c) {
      const double u = (m.x0 + c + 0.5 - box.x) / box.w;
      if (u < 0.0 || u >= 1.0) continue;
      const auto col = std::min(grid.width - 1, std::size_t(u * double(grid.width)));
      if (grid.at(row, col, 0) >= threshold) {
        m.bits[std::size_t(r) * std::size_t(m.width) + std::size_t(c)] = 1;
      }
    }
  }
  return m;
}

double grid_mask_iou(const Grid& pred, const Grid& gt, double threshold) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("mask grids differ in size: " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t r = 0; r < gt.height; ++r) {
    for (std::size_t c = 0; c < gt.width; ++c) {
      const bool a = pred.at(r, c, 0) >= threshold;
      const bool b = gt.at(r, c, 0) >= 0.5;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

MotsMeasures mots_metrics(std::span<const MaskObject> gt, std::span<const MaskObject> pred,
                          double iou_threshold) {
  require_threshold(iou_threshold);
  std::vector<MaskObject> kept;
  for (const auto& p : pred) {
    if (p.mask.area() > 0) kept.push_back(p);
  }
  MotsMeasures r;
  r.counts = clear_engine(
      build_frames<MaskObject>(gt, kept,
                               [](const MaskObject& a, const MaskObject& b) { return mask_iou(a.mask, b.mask); }),
      iou_threshold);
  const auto& c = r.counts;
  r.motsa = c.mota;
  r.smotsa = (c.similarity_sum - double(c.fp) - double(c.idsw)) / double(c.gt);
  r.mean_iou = c.tp == 0 ? 0.0 : c.similarity_sum / double(c.tp);
  return r;
}

double constraint_rate(const TrackGraph& graph, const EdgeLabels& y) {
  return 100.0 * check_constraints(graph, y).satisfaction_rate;
}

double mean_rate(std::span<const double> rates) {
  if (rates.empty()) return 100.0;
  std::vector<double> v(rates.begin(), rates.end());
  return kernels::order_invariant_sum(v) / double(v.size());
}

namespace {
std::vector<std::pair<std::string, std::string>> report_rows(const MetricsReport& r) {
  auto fmt = [](double v, int prec) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(prec);
    s << v;
    return s.str();
  };
  std::vector<std::pair<std::string, std::string>> rows{
      {"MOTA", fmt(r.clear.mota, 4)},
      {"IDF1", fmt(r.id.idf1, 4)},
      {"MT", std::to_string(r.clear.mostly_tracked)},
      {"ML", std::to_string(r.clear.mostly_lost)},
      {"FP", std::to_string(r.clear.fp)},
      {"FN", std::to_string(r.clear.fn)},
      {"IDSW", std::to_string(r.clear.idsw)},
      {"GT", std::to_string(r.clear.gt)},
      {"GT_tracks", std::to_string(r.clear.gt_tracks)},
  };
  if (r.constraint_satisfaction) rows.push_back({"Constr", fmt(*r.constraint_satisfaction, 2)});
  if (r.mots) {
    rows.push_back({"MOTSA", fmt(r.mots->motsa, 4)});
    rows.push_back({"sMOTSA", fmt(r.mots->smotsa, 4)});
  }
  if (r.mean_mask_iou) rows.push_back({"MaskIoU", fmt(*r.mean_mask_iou, 4)});
  return rows;
}
}  // namespace

std::string format_report(const MetricsReport& r) {
  const auto rows = report_rows(r);
  std::ostringstream head, vals;
  for (const auto& [k, v] : rows) {
    const std::size_t w = std::max(k.size(), v.size()) + 2;
    head << std::string(w - k.size(), ' ') << k;
    vals << std::string(w - v.size(), ' ') << v;
  }
  return head.str() + "\n" + vals.str() + "\n";
}

void write_report_csv(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  const auto rows = report_rows(r);
  for (std::size_t k = 0; k < rows.size(); ++k) f << (k ? "," : "") << rows[k].first;
  f << '\n';
  for (std::size_t k = 0; k < rows.size(); ++k) f << (k ? "," : "") << rows[k].second;
  f << '\n';
  if (!f) throw IoError("error writing " + path.string());
}

bool restrict_to_common_frames(std::vector<LabeledBox>& gt, std::vector<LabeledBox>& pred) {
  if (gt.empty() || pred.empty()) return false;
  auto range = [](const std::vector<LabeledBox>& v) {
    auto [lo, hi] = std::minmax_element(v.begin(), v.end(), [](const auto& a, const auto& b) {
      return a.frame < b.frame;
    });
    return std::pair{lo->frame, hi->frame};
  };
  const auto [g0, g1] = range(gt);
  const auto [p0, p1] = range(pred);
  const int lo = std::max(g0, p0), hi = std::min(g1, p1);
  const std::size_t before = gt.size() + pred.size();
  auto outside = [&](const LabeledBox& b) { return b.frame < lo || b.frame > hi; };
  std::erase_if(gt, outside);
  std::erase_if(pred, outside);
  return gt.size() + pred.size() != before;
}

}  // namespace mpnflow
