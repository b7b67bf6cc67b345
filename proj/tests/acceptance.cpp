// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// if any fails. The training-based checks take roughly half an hour on one core.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "utt/bench.hpp"
#include "utt/config.hpp"
#include "utt/evaluation.hpp"
#include "utt/harness.hpp"
#include "utt/neural_core.hpp"
#include "utt/online_tracking.hpp"
#include "utt/training.hpp"

namespace {

using namespace utt;
using testing::MatD;
using testing::random_mat;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int number, const std::string& name, Verdict& v) {
  if (!v.pass) ++failures;
  std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << number << " (" << name << "):" << v.detail.str()
            << std::endl;
}

// --- 1: gradients -------------------------------------------------------------

TrackerConfig tiny_tracker() {
  TrackerConfig cfg;
  cfg.backbone.widths = {6};
  cfg.backbone.stride = 4;
  cfg.backbone.output_dim = 8;
  cfg.attention = AttentionConfig{8, 2, 16};
  cfg.pool_size = 2;
  cfg.iterations = 2;
  cfg.init_seed = 7;
  cfg.detach_proposals = false;  // the detached path is skipped by backward on purpose
  return cfg;
}

Image textured(int size, std::uint64_t seed, int bx, int by) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0F, 0.4F);
  Image img(size, size);
  for (auto& v : img.data) v = u(rng);
  for (int y = by; y < by + 6; ++y) {
    for (int x = bx; x < bx + 6; ++x) img.at(y, x, 0) = 0.9F;
  }
  return img;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  Verdict v;
  std::vector<std::pair<std::string, double>> errs;
  std::mt19937_64 rng(1);

  {
    MatD a(3, 4), b(3, 4);
    a << 0.1, 0.2, 2.3, 2.1, 1.0, 1.5, 4.2, 3.3, 0.0, 0.0, 1.0, 1.2;
    b << 0.5, 0.4, 2.9, 2.6, 2.2, 0.3, 5.1, 4.4, 2.0, 2.5, 3.1, 3.3;
    auto va = ad::parameter<double>(a), vb = ad::parameter<double>(b);
    const MatD w = random_mat(3, 1, rng);
    errs.emplace_back("giou", testing::gradient_error({va, vb}, [&] { return testing::project(ad::giou(va, vb), w); }));
  }
  {
    const int h = 8, w = 8, c = 3, k = 3;
    auto feat = ad::parameter<double>(random_mat(h * w, c, rng));
    MatD b(2, 4);
    b << 0.41, 1.21, 5.63, 6.18, 2.9, 0.45, 7.7, 4.35;  // no sample on an integer coordinate
    auto boxes = ad::parameter<double>(b);
    const MatD proj = random_mat(2 * k * k, c, rng);
    errs.emplace_back("roi_align", testing::gradient_error(
                                       {feat, boxes},
                                       [&] { return testing::project(ad::roi_align(feat, h, w, boxes, k), proj); },
                                       1e-6, 200));
  }
  {
    auto logits = ad::parameter<double>(random_mat(4, 30, rng));
    const MatD proj = random_mat(2, 4, rng);
    errs.emplace_back("soft_argmax_box", testing::gradient_error({logits}, [&] {
                        return testing::project(ad::soft_argmax_box(ad::softmax_rows(logits), 5, 6), proj);
                      }));
  }
  {
    // mca -> norm -> ffn -> norm on N=2 targets, P=6 context tokens, C=4.
    Initializer init(11);
    MultiHeadAttention<double> mca(AttentionConfig{4, 2, 8}, init);
    FeedForward<double> ffn(4, 8, init);
    Norm<double> n1(4), n2(4);
    auto q = ad::parameter<double>(random_mat(2, 4, rng)), ctx = ad::parameter<double>(random_mat(6, 4, rng));
    const MatD w = random_mat(2, 4, rng);
    std::vector<ad::Var<double>> inputs{q, ctx, mca.query.weight, mca.key.weight, mca.value.weight,
                                        mca.output.weight, ffn.expand.weight, ffn.project.weight, n1.gamma, n2.beta};
    errs.emplace_back("mca-norm-ffn", testing::gradient_error(inputs, [&] {
                        const auto t = n1(ad::add(q, mca.cross(q, ctx)));
                        return testing::project(n2(ad::add(t, ffn(t))), w);
                      }));
  }
  {
    UnifiedTracker<double> model(tiny_tracker());
    for (auto& layer : model.mutable_transformer().mutable_layers())
      layer.box_head.out.weight.mutable_value() = random_mat(8, 4, rng, 0.05);
    std::vector<ad::Var<double>> params;
    for (const auto& [name, p] : model.parameters()) params.push_back(p);
    const Image a = textured(16, 1, 2, 2), b = textured(16, 2, 5, 4);
    MatD ref(2, 4), gt(2, 4), prop(2, 4);
    ref << 2.3, 2.1, 8.2, 8.4, 7.5, 6.2, 14.1, 13.3;
    gt << 5.1, 3.7, 11.2, 10.3, 8.2, 7.1, 14.6, 14.2;
    prop << 4.4, 3.1, 10.6, 9.9, 8.9, 6.3, 15.2, 13.8;
    errs.emplace_back("sot_loss", testing::gradient_error(
                                      params,
                                      [&] {
                                        const auto f0 = model.features(a), f1 = model.features(b);
                                        return sot_loss(model.forward(f1, f0, MatD(ref.topRows(1)), TrackMode::kSot).boxes,
                                                        MatD(gt.topRows(1)), LossWeights{}, 16, 16)
                                            .total;
                                      },
                                      1e-6, 8));
    errs.emplace_back("mot_loss", testing::gradient_error(
                                      params,
                                      [&] {
                                        const auto f0 = model.features(a), f1 = model.features(b);
                                        return mot_loss(model.forward(f1, f0, ref, TrackMode::kMot, prop).boxes, gt,
                                                        LossWeights{}, 16, 16)
                                            .total;
                                      },
                                      1e-6, 8));
  }
  for (const auto& [name, e] : errs) {
    v.detail << " " << name << "=" << e;
    v.check(e < 1e-3, name + " rel. err < 1e-3");
  }
  const double secs = seconds_since(t0);
  v.detail << " time=" << secs << "s";
  v.check(secs < 120.0, "runtime < 2 min");
  report(1, "gradient suite", v);
}

// --- 2: oracles ---------------------------------------------------------------

// Covered length of [a0,a1] by cells of width `step` whose centres fall inside.
long cells(double a0, double a1, double step) {
  if (a1 <= a0) return 0;
  return std::max(0L, static_cast<long>(std::floor(a1 / step - 0.5)) - static_cast<long>(std::ceil(a0 / step - 0.5)) + 1);
}

std::pair<double, double> pixel_iou_giou(const Box& a, const Box& b, double step) {
  // Rectangles are separable, so counting cells per axis counts the grid.
  auto area = [&](double x0, double y0, double x1, double y1) {
    return static_cast<double>(cells(x0, x1, step)) * static_cast<double>(cells(y0, y1, step));
  };
  const double aa = area(a(0), a(1), a(2), a(3)), ab = area(b(0), b(1), b(2), b(3));
  const double inter = area(std::max(a(0), b(0)), std::max(a(1), b(1)), std::min(a(2), b(2)), std::min(a(3), b(3)));
  const double uni = aa + ab - inter;
  const double hull = area(std::min(a(0), b(0)), std::min(a(1), b(1)), std::max(a(2), b(2)), std::max(a(3), b(3)));
  return {inter / uni, inter / uni - (hull - uni) / hull};
}

MatD brute_attention(const MultiHeadAttention<double>& m, const MatD& q_in, const MatD& kv) {
  auto lin = [](const Linear<double>& l, const MatD& x) {
    MatD y(x.rows(), l.weight.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index o = 0; o < y.cols(); ++o) {
        double s = l.bias.value()(0, o);
        for (Eigen::Index c = 0; c < x.cols(); ++c) s += x(i, c) * l.weight.value()(c, o);
        y(i, o) = s;
      }
    }
    return y;
  };
  const MatD q = lin(m.query, q_in), k = lin(m.key, kv), val = lin(m.value, kv);
  const Eigen::Index dim = q.cols() / m.heads;
  MatD concat = MatD::Zero(q.rows(), q.cols());
  for (int h = 0; h < m.heads; ++h) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      std::vector<double> w(static_cast<std::size_t>(k.rows()));
      double z = 0;
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        double dot = 0;
        for (Eigen::Index d = 0; d < dim; ++d) dot += q(i, h * dim + d) * k(j, h * dim + d);
        z += (w[static_cast<std::size_t>(j)] = std::exp(dot / std::sqrt(static_cast<double>(dim))));
      }
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        for (Eigen::Index d = 0; d < dim; ++d) concat(i, h * dim + d) += w[static_cast<std::size_t>(j)] / z * val(j, h * dim + d);
      }
    }
  }
  return lin(m.output, concat);
}

Annotation ann(int id, double x1, double y1, double x2, double y2) {
  Annotation a;
  a.id = id;
  a.box = make_box(x1, y1, x2, y2);
  return a;
}

SequenceAnnotations two_walkers(int frames) {
  SequenceAnnotations gt(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t)
    gt[static_cast<std::size_t>(t)] = {ann(1, 2.0 * t, 0, 2.0 * t + 10, 10), ann(2, 40, 2.0 * t, 50, 2.0 * t + 10)};
  return gt;
}

void criterion_oracles() {
  Verdict v;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> corner(0.0, 8.0), side(0.2, 4.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double ax = corner(rng), ay = corner(rng), bx = corner(rng), by = corner(rng);
    const Box a = make_box(ax, ay, ax + side(rng), ay + side(rng));
    const Box b = make_box(bx, by, bx + side(rng), by + side(rng));
    const auto [iou, giou] = pixel_iou_giou(a, b, 1e-4);
    worst = std::max({worst, std::abs(iou - box_iou<double>(a, b)), std::abs(giou - ad::giou(ad::constant<double>(MatD(a)), ad::constant<double>(MatD(b))).value()(0, 0))});
  }
  v.detail << " iou/giou max|d|=" << worst;
  v.check(worst < 1e-3, "iou/giou within 1e-3 of the pixel oracle");

  double attn = 0.0;
  for (int heads : {1, 2, 4}) {
    Initializer init(static_cast<std::uint64_t>(heads));
    MultiHeadAttention<double> m(AttentionConfig{4, heads, 8}, init);
    const MatD q = random_mat(3, 4, rng), kv = random_mat(4, 4, rng);
    attn = std::max(attn, (m.cross(ad::constant<double>(q), ad::constant<double>(kv)).value() - brute_attention(m, q, kv))
                              .cwiseAbs()
                              .maxCoeff());
  }
  v.detail << " attention max|d|=" << attn;
  v.check(attn < 1e-12, "attention equals the loop oracle");

  // Scripted MOT scenarios with hand-computed counts.
  const auto gt5 = two_walkers(5);
  const auto perfect = mot_metrics(gt5, gt5);
  v.check(perfect.mota == 1.0 && perfect.idsw == 0 && perfect.idf1 == 1.0, "perfect scenario");

  auto res = gt5;
  res[2].erase(res[2].begin() + 1);
  for (int t = 3; t < 5; ++t) res[static_cast<std::size_t>(t)][1].id = 3;
  res[4].push_back(ann(9, 90, 90, 99, 99));
  const auto mixed = mot_metrics(res, gt5);
  // 10 GT, 1 FN, 1 FP, 1 switch: 1 - 3/10. IDF1: 7 id-TP of (10 + 10) boxes, 2*7/20.
  v.check(mixed.fn == 1 && mixed.fp == 1 && mixed.idsw == 1 && mixed.mota == 1.0 - 3.0 / 10.0,
          "miss/false-positive/switch scenario");
  v.check(std::abs(mixed.idf1 - 14.0 / 20.0) < 1e-12, "miss scenario IDF1 = 0.7");

  const auto gt4 = two_walkers(4);
  auto swapped = gt4;
  for (int t = 2; t < 4; ++t)
    std::swap(swapped[static_cast<std::size_t>(t)][0].id, swapped[static_cast<std::size_t>(t)][1].id);
  const auto sw = mot_metrics(swapped, gt4);
  v.check(sw.idsw == 2 && sw.mota == 1.0 - 2.0 / 8.0 && sw.idf1 == 0.5, "swap scenario");
  v.detail << " mot scenarios: mota " << perfect.mota << "/" << mixed.mota << "/" << sw.mota << " idf1 " << mixed.idf1
           << "/" << sw.idf1;
  report(2, "oracle equivalence", v);
}

// Predicts that nothing moves.
class StaticPredictor : public BoxPredictor {
 public:
  void begin_frame(const Image&, int) override {}
  std::vector<Box> predict(const std::vector<Box>& ref, const std::vector<Box>&) override { return ref; }
};

// --- 3: structural invariants --------------------------------------------------

void criterion_invariants() {
  Verdict v;
  auto cfg = tiny_tracker();
  cfg.detach_proposals = true;
  UnifiedTracker<double> model(cfg);
  const auto f0 = model.features(textured(16, 1, 2, 2)), f1 = model.features(textured(16, 2, 4, 3));
  MatD ref(3, 4), prop(3, 4);
  ref << 2, 2, 8, 8, 6, 6, 14, 12, 1, 8, 7, 15;
  prop << 3, 2, 9, 9, 5, 7, 13, 13, 0, 9, 8, 15;

  // Zero-initialised box heads pass the proposals through.
  const auto zero = model.forward(f1, f0, ref, TrackMode::kMot, prop);
  double passthrough = 0.0;
  for (const auto& b : zero.boxes) passthrough = std::max(passthrough, (b.value() - prop).cwiseAbs().maxCoeff());
  v.detail << " zero-head max|d|=" << passthrough;
  v.check(passthrough == 0.0, "zero box head returns proposals exactly");

  std::mt19937_64 rng(3);
  for (auto& layer : model.mutable_transformer().mutable_layers())
    layer.box_head.out.weight.mutable_value() = random_mat(8, 4, rng, 0.05);
  const std::vector<Eigen::Index> perm{2, 0, 1};
  MatD ref_p(3, 4), prop_p(3, 4);
  for (Eigen::Index i = 0; i < 3; ++i) {
    ref_p.row(i) = ref.row(perm[static_cast<std::size_t>(i)]);
    prop_p.row(i) = prop.row(perm[static_cast<std::size_t>(i)]);
  }
  double equiv = 0.0;
  for (TrackMode mode : {TrackMode::kMot, TrackMode::kSot}) {
    const auto a = model.forward(f1, f0, ref, mode, prop), b = model.forward(f1, f0, ref_p, mode, prop_p);
    for (std::size_t k = 0; k < a.boxes.size(); ++k) {
      for (Eigen::Index i = 0; i < 3; ++i) {
        equiv = std::max(equiv, (b.boxes[k].value().row(i) - a.boxes[k].value().row(perm[static_cast<std::size_t>(i)]))
                                    .cwiseAbs()
                                    .maxCoeff());
      }
    }
  }
  // Summation order inside matrix products differs with row order, so
  // "exact" is taken at round-off level.
  v.detail << " permutation max|d|=" << equiv;
  v.check(equiv < 1e-12, "permutation equivariance");

  const auto sot = model.forward(f1, f0, ref, TrackMode::kSot);
  const double heat = (sot.heatmaps->values.value().rowwise().sum().array() - 1.0).abs().maxCoeff();
  v.detail << " heatmap |sum-1|=" << heat;
  v.check(heat <= 1e-5, "heatmaps normalised");

  // Ids: unique per frame, never reused, minted in increasing order.
  SceneSpec spec;
  spec.seed = 21;
  spec.frames = 40;
  const auto seq = generate_sequence(spec);
  NoisyDetectorOptions nopt;
  nopt.jitter = 2.0;
  nopt.drop_rate = 0.2;
  nopt.false_positive_rate = 1.0;
  nopt.seed = 4;
  NoisyDetector det(seq.gt, seq.width, seq.height, nopt);
  StaticPredictor pred;
  MotTrackerOptions opt;
  opt.max_lost_age = 2;
  MotTracker tracker(opt);
  std::set<int> retired, alive;
  int last_next = tracker.next_id();
  bool ids_ok = true;
  for (int f = 0; f < seq.length(); ++f) {
    tracker.step(seq.frames[static_cast<std::size_t>(f)], f, det, pred);
    std::set<int> now;
    for (const auto& t : tracker.tracks()) {
      ids_ok &= now.insert(t.id).second;
      ids_ok &= retired.count(t.id) == 0;
      if (!alive.count(t.id)) ids_ok &= t.id >= last_next;
    }
    ids_ok &= tracker.next_id() >= last_next;
    for (int id : alive) {
      if (!now.count(id)) retired.insert(id);
    }
    alive = now;
    last_next = tracker.next_id();
  }
  v.detail << " ids minted=" << last_next - 1;
  v.check(ids_ok, "track ids unique and monotone");
  report(3, "structural invariants", v);
}

// --- shared experiment setup ---------------------------------------------------

ExperimentConfig experiment(const std::vector<std::string>& overrides) {
  nlohmann::ordered_json tree = nlohmann::ordered_json::object();
  for (const auto& o : overrides) apply_override(tree, o);
  return validate_config(tree);
}

struct Trained {
  UnifiedTracker<double> model;
  double seconds;
};

Trained train(const ExperimentConfig& c, const std::vector<AnnotatedSequence>& data, const std::string& label) {
  const auto t0 = Clock::now();
  auto model = train_model(c, data);
  const double s = seconds_since(t0);
  std::cout << "  trained " << label << " (" << c.train.iterations << " iterations) in " << s << "s" << std::endl;
  return {std::move(model), s};
}

double sot_auc(const UnifiedTracker<double>& model, const std::vector<AnnotatedSequence>& data) {
  return evaluate_sot(track_sot(model, data), data).success_auc;
}

// --- 4a: single-pair overfit ---------------------------------------------------

void criterion_overfit_pair() {
  Verdict v;
  SceneSpec spec;
  spec.seed = 5;
  spec.frames = 2;
  const auto data = generate_dataset(spec, 1);
  TrackerConfig cfg = experiment_tracker();
  cfg.init_seed = 1;
  UnifiedTracker<double> model(cfg);
  TrainOptions opt;
  opt.mode = TrainMode::kSotOnly;
  opt.iterations = 300;
  opt.augment = false;
  opt.max_frame_interval = 1;
  opt.seed = 1;
  Trainer<double> trainer(model, &data, &data, opt);
  const auto t0 = Clock::now();
  trainer.train_to_end();

  const auto& s = data[0];
  ad::NoGradGuard guard;
  double sum = 0.0;
  int n = 0;
  for (auto [r, t] : {std::pair{0, 1}, std::pair{1, 0}}) {
    const auto out = model.forward(model.features(s.frames[static_cast<std::size_t>(t)]),
                                   model.features(s.frames[static_cast<std::size_t>(r)]), *s.box_of(s.sot_target, r),
                                   TrackMode::kSot);
    sum += box_iou<double>(out.boxes.back().value().row(0), *s.box_of(s.sot_target, t));
    ++n;
  }
  const double mean = sum / n;
  v.detail << " mean IoU=" << mean << " time=" << seconds_since(t0) << "s";
  v.check(mean >= 0.9, "mean IoU >= 0.9");
  report(4, "overfit (a) single SOT pair", v);
}

}  // namespace

int main() {
  std::cout.precision(4);
  criterion_gradients();
  criterion_oracles();
  criterion_invariants();
  criterion_overfit_pair();

  // 20 training sequences, 5 held out; defaults otherwise.
  const auto base = experiment({});
  const auto train_data = train_sequences(base);
  const auto eval_data = eval_sequences(base);

  auto sot_only = train(experiment({"mode=sot_only"}), train_data, "SOT-only");
  const double auc_sot_only = sot_auc(sot_only.model, eval_data);
  {
    Verdict v;
    v.detail << " held-out AUC=" << auc_sot_only << " train time=" << sot_only.seconds << "s";
    v.check(auc_sot_only >= 0.6, "Success AUC >= 0.6");
    v.check(sot_only.seconds < 15 * 60, "runtime < 15 min");
    report(4, "overfit (b) sequence tracking", v);
  }

  auto unified = train(base, train_data, "unified");
  auto mot_only = train(experiment({"mode=mot_only"}), train_data, "MOT-only");
  const double auc_unified = sot_auc(unified.model, eval_data);
  const double auc_mot_only = sot_auc(mot_only.model, eval_data);
  const double mota_unified = evaluate_mot(track_mot(unified.model, eval_data, base), eval_data).mota;
  const double mota_mot_only = evaluate_mot(track_mot(mot_only.model, eval_data, base), eval_data).mota;
  {
    Verdict v;
    v.detail << " AUC unified/SOT-only/MOT-only=" << auc_unified << "/" << auc_sot_only << "/" << auc_mot_only
             << " MOTA unified/MOT-only=" << mota_unified << "/" << mota_mot_only;
    // Doing better than the single-task model is not a miss.
    v.check(auc_unified >= auc_sot_only - 0.05, "unified SOT within 0.05 of SOT-only");
    v.check(mota_unified >= mota_mot_only - 0.05, "unified MOTA within 0.05 of MOT-only");
    v.check(auc_mot_only <= auc_unified - 0.3, "MOT-only SOT at least 0.3 below unified");
    report(5, "unified vs single-task", v);
  }

  {
    Verdict v;
    const auto t0 = Clock::now();
    BenchOptions opt;
    const auto r = bench_attention(bench_grid({16, 32, 64}, {1, 8}, 64, 7), opt);
    for (const auto& [n, slope] : r.cross_slope) {
      v.detail << " N=" << n << " cross slope=" << slope << " corr spread=" << r.corr_spread.at(n);
      v.check(std::abs(slope - 2.0) <= 0.3, "cross-attention slope 2.0 +- 0.3 at N=" + std::to_string(n));
      v.check(r.corr_spread.at(n) < 0.25, "correlation time varies < 25% at N=" + std::to_string(n));
    }
    const double ratio = cross_attention_flops(64, 64, 8, 64) / corr_attention_flops(7, 8, 64);
    const double expected = 4096.0 * 4096.0 / 2401.0;
    v.detail << " flop ratio=" << ratio << " time=" << seconds_since(t0) << "s";
    v.check(std::abs(ratio - expected) <= 1e-9 * expected && std::abs(ratio - 6988.0) < 0.5, "flop ratio ~6988");
    report(6, "complexity", v);
  }

  {
    Verdict v;
    auto k3 = train(experiment({"model.pool_size=3"}), train_data, "K=3");
    auto l1 = train(experiment({"model.iterations=1"}), train_data, "L=1");
    const double auc_k3 = sot_auc(k3.model, eval_data), auc_l1 = sot_auc(l1.model, eval_data);
    v.detail << " AUC K=7/K=3=" << auc_unified << "/" << auc_k3 << " L=3/L=1=" << auc_unified << "/" << auc_l1;
    v.check(auc_unified >= auc_k3 - 0.02, "K=7 not worse than K=3 by more than 0.02");
    v.check(auc_unified >= auc_l1, "L=3 >= L=1");
    report(7, "ablation direction", v);
  }

  {
    Verdict v;
    std::vector<AnnotatedSequence> all = train_data;
    all.insert(all.end(), eval_data.begin(), eval_data.end());
    int exact = 0;
    for (const auto& seq : all) {
      OracleDetector det(seq.gt);
      PerfectPredictor pred(seq.gt);
      const auto r = mot_metrics(track_mot_sequence(seq.frames, det, pred, base.tracking), seq.gt);
      if (r.mota == 1.0 && r.idsw == 0) {
        ++exact;
      } else {
        v.detail << " " << seq.name << ": mota=" << r.mota << " idsw=" << r.idsw;
      }
    }
    v.detail << " " << exact << "/" << all.size() << " sequences exact";
    v.check(exact == static_cast<int>(all.size()), "MOTA 1 and IDSW 0 everywhere");
    report(8, "pipeline exactness", v);
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
