#include "utt/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "utt/assignment.hpp"
#include "utt/errors.hpp"

namespace utt {

using json = nlohmann::json;

namespace {

Eigen::Vector2d center(const Box& b) { return {0.5 * (b(0) + b(2)), 0.5 * (b(1) + b(3))}; }

void check_unique_ids(const FrameAnnotations& frame, std::size_t index, const char* what) {
  std::set<int> seen;
  for (const auto& a : frame) {
    if (!seen.insert(a.id).second) {
      throw UsageError(std::string("mot_metrics: duplicate ") + what + " id " + std::to_string(a.id) +
                       " in frame " + std::to_string(index + 1));
    }
  }
}

double safe_ratio(double num, double den, double empty) { return den > 0.0 ? num / den : empty; }

}  // namespace

std::vector<double> success_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 20; ++i) t.push_back(i / 20.0);
  return t;
}

SotReport sot_metrics(const std::vector<Box>& preds, const std::vector<Box>& gts,
                      double precision_radius) {
  if (preds.size() != gts.size()) {
    throw UsageError("sot_metrics: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(gts.size()) + " ground-truth frames");
  }
  SotReport r;
  const auto thresholds = success_thresholds();
  r.success_curve.assign(thresholds.size(), 0.0);
  if (preds.empty()) return r;
  long precise = 0, over75 = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double v = box_iou<double>(preds[i], gts[i]);
    const double err = (center(preds[i]) - center(gts[i])).norm();
    r.ious.push_back(v);
    r.center_errors.push_back(err);
    if (err <= precision_radius) ++precise;
    if (v > 0.75) ++over75;
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      // Strict IoU > tau, except that the last threshold (tau = 1) counts exact
      // overlaps so that a perfect tracker scores 1.
      const bool hit = k + 1 < thresholds.size() ? v > thresholds[k] : v >= thresholds[k];
      if (hit) r.success_curve[k] += 1.0;
    }
  }
  const double n = static_cast<double>(preds.size());
  double area = 0.0;
  for (double& s : r.success_curve) {
    s /= n;
    area += s;
  }
  r.success_auc = area / static_cast<double>(thresholds.size());
  r.precision = precise / n;
  r.op75 = over75 / n;
  return r;
}

SotReport mean_sot_report(const std::vector<SotReport>& reports) {
  SotReport out;
  out.success_curve.assign(success_thresholds().size(), 0.0);
  if (reports.empty()) return out;
  for (const auto& r : reports) {
    out.success_auc += r.success_auc;
    out.precision += r.precision;
    out.op75 += r.op75;
    for (std::size_t k = 0; k < out.success_curve.size() && k < r.success_curve.size(); ++k)
      out.success_curve[k] += r.success_curve[k];
    out.ious.insert(out.ious.end(), r.ious.begin(), r.ious.end());
    out.center_errors.insert(out.center_errors.end(), r.center_errors.begin(), r.center_errors.end());
  }
  const double n = static_cast<double>(reports.size());
  out.success_auc /= n;
  out.precision /= n;
  out.op75 /= n;
  for (double& s : out.success_curve) s /= n;
  return out;
}

void MotReport::finalize() {
  mota = 1.0 - static_cast<double>(fn + fp + idsw) / static_cast<double>(std::max<long>(num_gt, 1));
  if (num_gt == 0) mota = fp == 0 ? 1.0 : -static_cast<double>(fp);
  motp = safe_ratio(iou_sum, static_cast<double>(num_matches), 0.0);
  const bool nothing = num_gt == 0 && num_hyp == 0;
  idp = safe_ratio(static_cast<double>(idtp), static_cast<double>(idtp + idfp), nothing ? 1.0 : 0.0);
  idr = safe_ratio(static_cast<double>(idtp), static_cast<double>(idtp + idfn), nothing ? 1.0 : 0.0);
  idf1 = safe_ratio(2.0 * static_cast<double>(idtp), static_cast<double>(2 * idtp + idfp + idfn),
                    nothing ? 1.0 : 0.0);
}

MotReport mot_metrics(const SequenceAnnotations& results, const SequenceAnnotations& gt,
                      double iou_gate) {
  const std::size_t frames = std::max(results.size(), gt.size());
  const FrameAnnotations empty;
  MotReport r;

  std::map<int, int> current;     // gt id -> hyp id matched in the previous frame
  std::map<int, int> last_match;  // gt id -> hyp id of its latest match
  std::map<int, long> gt_present, gt_matched;
  std::map<int, std::size_t> gt_index, hyp_index;

  // Trajectory overlap counts for the identity metrics.
  std::map<std::pair<int, int>, long> overlap;

  for (std::size_t t = 0; t < frames; ++t) {
    const FrameAnnotations& g = t < gt.size() ? gt[t] : empty;
    const FrameAnnotations& h = t < results.size() ? results[t] : empty;
    check_unique_ids(g, t, "ground-truth");
    check_unique_ids(h, t, "result");
    r.num_gt += static_cast<long>(g.size());
    r.num_hyp += static_cast<long>(h.size());

    Eigen::MatrixXd ov(g.size(), h.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      gt_present[g[i].id] += 1;
      gt_index.emplace(g[i].id, gt_index.size());
      for (std::size_t j = 0; j < h.size(); ++j) {
        ov(i, j) = box_iou<double>(g[i].box, h[j].box);
        if (ov(i, j) >= iou_gate) overlap[{g[i].id, h[j].id}] += 1;
      }
    }
    for (const auto& a : h) hyp_index.emplace(a.id, hyp_index.size());

    std::vector<int> g_to_h(g.size(), -1);
    std::vector<char> h_taken(h.size(), 0);
    // Keep last frame's correspondences that are still valid.
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto it = current.find(g[i].id);
      if (it == current.end()) continue;
      for (std::size_t j = 0; j < h.size(); ++j) {
        if (h[j].id == it->second && !h_taken[j] && ov(i, j) >= iou_gate) {
          g_to_h[i] = static_cast<int>(j);
          h_taken[j] = 1;
        }
      }
    }
    // Optimal matching of the rest.
    std::vector<std::size_t> free_g, free_h;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g_to_h[i] < 0) free_g.push_back(i);
    for (std::size_t j = 0; j < h.size(); ++j)
      if (!h_taken[j]) free_h.push_back(j);
    if (!free_g.empty() && !free_h.empty()) {
      Eigen::MatrixXd score(free_g.size(), free_h.size());
      for (std::size_t a = 0; a < free_g.size(); ++a) {
        for (std::size_t b = 0; b < free_h.size(); ++b) {
          const double v = ov(free_g[a], free_h[b]);
          score(a, b) = v >= iou_gate ? v : 0.0;
        }
      }
      const auto assign = solve_max_assignment(score);
      for (std::size_t a = 0; a < free_g.size(); ++a) {
        if (assign[a] < 0) continue;
        const std::size_t i = free_g[a];
        const std::size_t j = free_h[static_cast<std::size_t>(assign[a])];
        if (ov(i, j) < iou_gate) continue;
        g_to_h[i] = static_cast<int>(j);
        h_taken[j] = 1;
        auto prev = last_match.find(g[i].id);
        if (prev != last_match.end() && prev->second != h[j].id) ++r.idsw;
      }
    }

    current.clear();
    long matches = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g_to_h[i] < 0) continue;
      const auto j = static_cast<std::size_t>(g_to_h[i]);
      current[g[i].id] = h[j].id;
      last_match[g[i].id] = h[j].id;
      gt_matched[g[i].id] += 1;
      r.iou_sum += ov(i, j);
      ++matches;
    }
    r.num_matches += matches;
    r.fn += static_cast<long>(g.size()) - matches;
    r.fp += static_cast<long>(h.size()) - matches;
  }

  r.num_trajectories = static_cast<long>(gt_present.size());
  for (const auto& [id, present] : gt_present) {
    const double ratio = static_cast<double>(gt_matched[id]) / static_cast<double>(present);
    if (ratio >= 0.8) ++r.mt;
    if (ratio < 0.2) ++r.ml;
  }

  // Identity metrics: one-to-one trajectory matching maximizing co-detected frames.
  if (!gt_index.empty() && !hyp_index.empty()) {
    Eigen::MatrixXd score = Eigen::MatrixXd::Zero(gt_index.size(), hyp_index.size());
    for (const auto& [key, count] : overlap) {
      score(gt_index.at(key.first), hyp_index.at(key.second)) = static_cast<double>(count);
    }
    const auto assign = solve_max_assignment(score);
    for (std::size_t i = 0; i < assign.size(); ++i) {
      if (assign[i] >= 0) r.idtp += static_cast<long>(score(i, assign[i]));
    }
  }
  r.idfn = r.num_gt - r.idtp;
  r.idfp = r.num_hyp - r.idtp;
  r.finalize();
  return r;
}

MotReport combine_reports(const std::vector<MotReport>& reports) {
  MotReport out;
  for (const auto& r : reports) {
    out.fp += r.fp;
    out.fn += r.fn;
    out.idsw += r.idsw;
    out.mt += r.mt;
    out.ml += r.ml;
    out.num_gt += r.num_gt;
    out.num_hyp += r.num_hyp;
    out.num_matches += r.num_matches;
    out.num_trajectories += r.num_trajectories;
    out.iou_sum += r.iou_sum;
    out.idtp += r.idtp;
    out.idfp += r.idfp;
    out.idfn += r.idfn;
  }
  out.finalize();
  return out;
}

std::string to_json(const SotReport& r, bool per_frame) {
  json j = {{"success_auc", r.success_auc},
            {"precision_20px", r.precision},
            {"op75", r.op75},
            {"frames", r.ious.size()},
            {"success_curve", r.success_curve}};
  if (per_frame) {
    j["ious"] = r.ious;
    j["center_errors"] = r.center_errors;
  }
  return j.dump(2);
}

std::string to_json(const MotReport& r) {
  json j = {{"mota", r.mota},   {"motp", r.motp},     {"idf1", r.idf1},       {"idp", r.idp},
            {"idr", r.idr},     {"fp", r.fp},         {"fn", r.fn},           {"idsw", r.idsw},
            {"mt", r.mt},       {"ml", r.ml},         {"num_gt", r.num_gt},   {"num_hyp", r.num_hyp},
            {"num_matches", r.num_matches},           {"num_trajectories", r.num_trajectories}};
  return j.dump(2);
}

std::string to_text(const SotReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %-12s %-8s %s\n%-12.4f %-12.4f %-8.4f %zu\n", "Success",
                "Precision", "OP75", "Frames", r.success_auc, r.precision, r.op75, r.ious.size());
  return buf;
}

std::string to_text(const MotReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%-8s %-8s %-8s %-8s %-8s %-5s %-5s %-7s %-7s %-6s\n"
                "%-8.4f %-8.4f %-8.4f %-8.4f %-8.4f %-5ld %-5ld %-7ld %-7ld %-6ld\n",
                "MOTA", "IDF1", "MOTP", "IDP", "IDR", "MT", "ML", "FP", "FN", "IDSW", r.mota, r.idf1,
                r.motp, r.idp, r.idr, r.mt, r.ml, r.fp, r.fn, r.idsw);
  return buf;
}

}  // namespace utt
