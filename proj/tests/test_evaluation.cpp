#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "utt/assignment.hpp"
#include "utt/bench.hpp"
#include "utt/errors.hpp"
#include "utt/evaluation.hpp"

namespace utt {
namespace {

Annotation ann(int id, double x1, double y1, double x2, double y2) {
  Annotation a;
  a.id = id;
  a.box = make_box(x1, y1, x2, y2);
  return a;
}

// --- SOT -------------------------------------------------------------------

TEST(SotMetrics, TwoFrameSweepMatchesOracle) {
  const Box gt = make_box(0, 0, 10, 10);
  const std::vector<Box> preds{make_box(0, 0, 5, 10), make_box(0, 0, 7, 10)};  // IoU 0.5, 0.7
  const std::vector<double> ious{0.5, 0.7};
  double oracle = 0.0;
  for (int k = 0; k <= 20; ++k) {
    const double tau = k / 20.0;
    double hit = 0;
    for (double v : ious) hit += (k < 20 ? v > tau : v >= tau) ? 1 : 0;
    oracle += hit / 2.0;
  }
  oracle /= 21.0;
  const auto r = sot_metrics(preds, {gt, gt});
  EXPECT_NEAR(r.success_auc, oracle, 1e-12);
  EXPECT_NEAR(r.success_auc, 12.0 / 21.0, 1e-12);
  EXPECT_EQ(r.op75, 0.0);
  EXPECT_EQ(r.precision, 1.0);  // centers off by 2.5 and 1.5 px
  EXPECT_EQ(r.success_curve.size(), 21u);
}

TEST(SotMetrics, PerfectAndPrecisionRadius) {
  const std::vector<Box> gts{make_box(0, 0, 10, 10), make_box(5, 5, 15, 15)};
  const auto perfect = sot_metrics(gts, gts);
  EXPECT_EQ(perfect.success_auc, 1.0);
  EXPECT_EQ(perfect.op75, 1.0);
  const std::vector<Box> far{make_box(30, 0, 40, 10), make_box(5, 5, 15, 15)};
  const auto r = sot_metrics(far, gts);
  EXPECT_EQ(r.precision, 0.5);  // 30 px away
  EXPECT_NEAR(r.center_errors[0], 30.0, 1e-12);
  EXPECT_EQ(sot_metrics(far, gts, 30.0).precision, 1.0);  // boundary is inclusive
  EXPECT_THROW(sot_metrics(far, {gts[0]}), UsageError);
}

TEST(SotMetrics, MeanWeightsSequencesEqually) {
  const Box g = make_box(0, 0, 10, 10);
  const auto a = sot_metrics({g}, {g});
  const auto b = sot_metrics({make_box(50, 50, 60, 60), make_box(50, 50, 60, 60), make_box(50, 50, 60, 60)}, {g, g, g});
  EXPECT_NEAR(mean_sot_report({a, b}).success_auc, 0.5, 1e-12);
}

// --- MOT -------------------------------------------------------------------

// Brute-force identity F1: tries every injective map from ground-truth ids to
// hypothesis ids (or nothing) and keeps the best total of matched boxes.
double brute_force_idf1(const SequenceAnnotations& res, const SequenceAnnotations& gt, double gate = 0.5) {
  std::set<int> gset, hset;
  long n_gt = 0, n_hyp = 0;
  for (const auto& f : gt) {
    for (const auto& a : f) gset.insert(a.id), ++n_gt;
  }
  for (const auto& f : res) {
    for (const auto& a : f) hset.insert(a.id), ++n_hyp;
  }
  const std::vector<int> gids(gset.begin(), gset.end()), hids(hset.begin(), hset.end());
  auto overlap = [&](int g, int h) {
    long n = 0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
      for (const auto& a : gt[t]) {
        for (const auto& b : res[t]) {
          if (a.id == g && b.id == h && box_iou<double>(a.box, b.box) >= gate) ++n;
        }
      }
    }
    return n;
  };
  long best = 0;
  std::vector<char> used(hids.size(), 0);
  std::function<void(std::size_t, long)> rec = [&](std::size_t i, long acc) {
    if (i == gids.size()) {
      best = std::max(best, acc);
      return;
    }
    rec(i + 1, acc);
    for (std::size_t j = 0; j < hids.size(); ++j) {
      if (used[j]) continue;
      used[j] = 1;
      rec(i + 1, acc + overlap(gids[i], hids[j]));
      used[j] = 0;
    }
  };
  rec(0, 0);
  return n_gt + n_hyp == 0 ? 1.0 : 2.0 * best / static_cast<double>(n_gt + n_hyp);
}

SequenceAnnotations two_walkers(int frames) {
  SequenceAnnotations gt(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    gt[static_cast<std::size_t>(t)] = {ann(1, 2.0 * t, 0, 2.0 * t + 10, 10), ann(2, 40, 2.0 * t, 50, 2.0 * t + 10)};
  }
  return gt;
}

TEST(MotMetrics, PerfectResults) {
  const auto gt = two_walkers(5);
  const auto r = mot_metrics(gt, gt);
  EXPECT_EQ(r.mota, 1.0);
  EXPECT_EQ(r.idsw, 0);
  EXPECT_EQ(r.idf1, 1.0);
  EXPECT_EQ(r.motp, 1.0);
  EXPECT_EQ(r.mt, 2);
  EXPECT_EQ(r.ml, 0);
}

TEST(MotMetrics, OneMissOneFalsePositiveOneSwitch) {
  const auto gt = two_walkers(5);  // 10 ground-truth boxes
  auto res = gt;
  res[2].erase(res[2].begin() + 1);      // object 2 missed at frame 2
  for (int t = 3; t < 5; ++t) res[static_cast<std::size_t>(t)][1].id = 3;  // and resumes under a new id
  res[4].push_back(ann(9, 90, 90, 99, 99));  // spurious box
  const auto r = mot_metrics(res, gt);
  EXPECT_EQ(r.fn, 1);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(r.idsw, 1);
  EXPECT_EQ(r.num_gt, 10);
  EXPECT_NEAR(r.mota, 0.7, 1e-12);
  EXPECT_NEAR(r.idf1, brute_force_idf1(res, gt), 1e-12);
}

TEST(MotMetrics, SwappedIdsMidSequence) {
  const auto gt = two_walkers(4);
  auto res = gt;
  for (int t = 2; t < 4; ++t) std::swap(res[static_cast<std::size_t>(t)][0].id, res[static_cast<std::size_t>(t)][1].id);
  const auto r = mot_metrics(res, gt);
  EXPECT_EQ(r.idsw, 2);
  EXPECT_LT(r.idf1, 1.0);
  EXPECT_NEAR(r.idf1, brute_force_idf1(res, gt), 1e-12);
  EXPECT_NEAR(r.idf1, 0.5, 1e-12);
  EXPECT_NEAR(r.mota, 1.0 - 2.0 / 8.0, 1e-12);
}

TEST(MotMetrics, IdentityMetricsAgreeWithBruteForceOnRandomCases) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> id(1, 4);
  std::uniform_real_distribution<double> jitter(-3, 3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto gt = two_walkers(5);
    SequenceAnnotations res(gt.size());
    for (std::size_t t = 0; t < gt.size(); ++t) {
      std::set<int> used;
      for (const auto& a : gt[t]) {
        if (rng() % 5 == 0) continue;
        int h = id(rng);
        while (!used.insert(h).second) h = id(rng);
        Annotation b = a;
        b.id = h;
        b.box += Box::Constant(jitter(rng));
        res[t].push_back(b);
      }
    }
    const auto r = mot_metrics(res, gt);
    EXPECT_NEAR(r.idf1, brute_force_idf1(res, gt), 1e-12) << "trial " << trial;
    EXPECT_LE(r.mota, 1.0);
    EXPECT_NEAR(r.idf1, 2 * r.idp * r.idr / std::max(r.idp + r.idr, 1e-300), 1e-12);
  }
}

TEST(MotMetrics, InvariantToConsistentIdRelabeling) {
  const auto gt = two_walkers(6);
  auto res = gt;
  res[3].erase(res[3].begin());
  res[4][1].id = 7;
  auto relabeled = res;
  for (auto& f : relabeled) {
    for (auto& a : f) a.id = 100 - a.id;
  }
  const auto a = mot_metrics(res, gt), b = mot_metrics(relabeled, gt);
  EXPECT_EQ(a.mota, b.mota);
  EXPECT_EQ(a.motp, b.motp);
  EXPECT_EQ(a.idf1, b.idf1);
}

TEST(MotMetrics, RemovingOneTruePositiveCostsOneOverGt) {
  const auto gt = two_walkers(5);
  auto res = gt;
  res[4].pop_back();
  EXPECT_NEAR(mot_metrics(res, gt).mota, 1.0 - 1.0 / 10.0, 1e-12);
}

TEST(MotMetrics, EmptyResultsAndEdgeCases) {
  const auto gt = two_walkers(3);
  const auto r = mot_metrics(SequenceAnnotations(3), gt);
  EXPECT_EQ(r.fn, 6);
  EXPECT_EQ(r.mota, 0.0);
  EXPECT_EQ(r.ml, 2);
  SequenceAnnotations dup(1);
  dup[0] = {ann(1, 0, 0, 1, 1), ann(1, 5, 5, 6, 6)};
  EXPECT_THROW(mot_metrics(dup, SequenceAnnotations(1)), UsageError);
  const auto nothing = mot_metrics(SequenceAnnotations(2), SequenceAnnotations(2));
  EXPECT_EQ(nothing.mota, 1.0);
}

TEST(MotMetrics, MatchPersistenceKeepsPriorCorrespondence) {
  // Hypothesis 1 follows object 1; at frame 1 hypothesis 2 overlaps object 1
  // slightly better, but the earlier match is still valid and is kept.
  SequenceAnnotations gt(2), res(2);
  gt[0] = {ann(1, 0, 0, 10, 10)};
  gt[1] = {ann(1, 0, 0, 10, 10)};
  res[0] = {ann(1, 0, 0, 10, 10)};
  res[1] = {ann(1, 1, 0, 11, 10), ann(2, 0, 0, 10, 10)};
  const auto r = mot_metrics(res, gt);
  EXPECT_EQ(r.idsw, 0);
  EXPECT_EQ(r.fp, 1);
}

TEST(MotMetrics, CombineSumsCounts) {
  const auto gt = two_walkers(5);
  auto res = gt;
  res[0].pop_back();
  const auto a = mot_metrics(res, gt), b = mot_metrics(gt, gt);
  const auto c = combine_reports({a, b});
  EXPECT_EQ(c.num_gt, 20);
  EXPECT_EQ(c.fn, 1);
  EXPECT_NEAR(c.mota, 1.0 - 1.0 / 20.0, 1e-12);
  EXPECT_NE(to_json(c).find("\"mota\""), std::string::npos);
}

// --- assignment --------------------------------------------------------------

double brute_force_min_cost(const Eigen::MatrixXd& c) {
  const bool transpose = c.rows() > c.cols();
  const Eigen::MatrixXd m = transpose ? Eigen::MatrixXd(c.transpose()) : c;
  std::vector<int> cols(static_cast<std::size_t>(m.cols()));
  std::iota(cols.begin(), cols.end(), 0);
  double best = 1e300;
  do {
    double s = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) s += m(i, cols[static_cast<std::size_t>(i)]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

TEST(Assignment, MatchesBruteForceOnRandomMatrices) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 10);
  for (int trial = 0; trial < 60; ++trial) {
    const int rows = 1 + static_cast<int>(rng() % 5), cols = 1 + static_cast<int>(rng() % 5);
    Eigen::MatrixXd c(rows, cols);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = std::floor(u(rng));  // ties included
    const auto a = solve_assignment(c);
    ASSERT_EQ(a.size(), static_cast<std::size_t>(rows));
    double total = 0;
    std::set<int> used;
    int assigned = 0;
    for (int i = 0; i < rows; ++i) {
      if (a[static_cast<std::size_t>(i)] < 0) continue;
      EXPECT_TRUE(used.insert(a[static_cast<std::size_t>(i)]).second);
      total += c(i, a[static_cast<std::size_t>(i)]);
      ++assigned;
    }
    EXPECT_EQ(assigned, std::min(rows, cols));
    EXPECT_NEAR(total, brute_force_min_cost(c), 1e-9);
  }
}

TEST(Assignment, MaximizeAndEmpty) {
  Eigen::MatrixXd s(2, 2);
  s << 0.9, 0.8, 0.85, 0.1;
  const auto a = solve_max_assignment(s);
  EXPECT_EQ(a, (std::vector<int>{1, 0}));
  EXPECT_TRUE(solve_assignment(Eigen::MatrixXd(0, 3)).empty());
  EXPECT_EQ(solve_assignment(Eigen::MatrixXd(2, 0)), (std::vector<int>{-1, -1}));
}

// --- benchmark -----------------------------------------------------------------

TEST(Bench, FlopModel) {
  EXPECT_EQ(cross_attention_flops(16, 16, 2, 4), 524288.0);
  EXPECT_EQ(corr_attention_flops(3, 2, 4), 648.0);
  EXPECT_NEAR(cross_attention_flops(16, 16, 2, 4) / corr_attention_flops(3, 2, 4), 809.1, 0.05);
  EXPECT_EQ(cross_attention_flops(32, 32, 2, 4), 16 * cross_attention_flops(16, 16, 2, 4));
  EXPECT_NEAR(cross_attention_flops(64, 64, 8, 64) / corr_attention_flops(7, 8, 64), 4096.0 * 4096.0 / 2401.0, 1e-9);
}

TEST(Bench, SlopeFit) {
  EXPECT_NEAR(fit_slope({1, 2, 3, 4}, {3, 5, 7, 9}), 2.0, 1e-12);
  EXPECT_THROW(fit_slope({1}, {1}), UsageError);
}

TEST(Bench, SmallSweepProducesRows) {
  BenchOptions opt;
  opt.samples = 3;
  opt.min_sample_ms = 0.2;
  const auto r = bench_attention(bench_grid({4, 8}, {1, 2}, 8, 3), opt);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) {
    EXPECT_GT(row.time_cross_ms, 0.0);
    EXPECT_GT(row.time_corr_ms, 0.0);
    EXPECT_EQ(row.flops_corr, corr_attention_flops(3, row.config.targets, 8));
  }
  EXPECT_EQ(r.cross_slope.size(), 2u);
  EXPECT_EQ(r.corr_spread.size(), 2u);
  EXPECT_NE(bench_csv(r).find("time_cross_ms"), std::string::npos);
}

}  // namespace
}  // namespace utt
