// Single-object (Success / Precision / OP75) and CLEAR-MOT + identity metrics.
#pragma once

#include <string>
#include <vector>

#include "utt/annotation.hpp"

namespace utt {

struct SotReport {
  double success_auc = 0.0;
  double precision = 0.0;  // center error <= 20 px
  double op75 = 0.0;
  std::vector<double> ious;
  std::vector<double> center_errors;
  std::vector<double> success_curve;  // fraction with IoU > tau for each threshold
};

/// 21 thresholds 0, 0.05, ..., 1 with strict IoU > tau.
std::vector<double> success_thresholds();

SotReport sot_metrics(const std::vector<Box>& preds, const std::vector<Box>& gts,
                      double precision_radius = 20.0);

/// Per-sequence reports averaged with equal weight per sequence.
SotReport mean_sot_report(const std::vector<SotReport>& reports);

struct MotReport {
  double mota = 0.0;
  double motp = 0.0;  // mean IoU over matches
  double idf1 = 0.0;
  double idp = 0.0;
  double idr = 0.0;
  long fp = 0;
  long fn = 0;
  long idsw = 0;
  long mt = 0;
  long ml = 0;
  long num_gt = 0;
  long num_hyp = 0;
  long num_matches = 0;
  long num_trajectories = 0;
  double iou_sum = 0.0;
  long idtp = 0;
  long idfp = 0;
  long idfn = 0;

  /// Recomputes the ratio metrics from the counts.
  void finalize();
};

/// CLEAR-MOT with match persistence and optimal per-frame matching at
/// IoU >= iou_gate; identity metrics from trajectory-level optimal matching.
/// Throws UsageError on duplicate ids within one frame.
MotReport mot_metrics(const SequenceAnnotations& results, const SequenceAnnotations& gt,
                      double iou_gate = 0.5);

/// Sums counts over sequences and recomputes the ratios.
MotReport combine_reports(const std::vector<MotReport>& reports);

std::string to_json(const SotReport& r, bool per_frame = false);
std::string to_json(const MotReport& r);
std::string to_text(const SotReport& r);
std::string to_text(const MotReport& r);

}  // namespace utt
