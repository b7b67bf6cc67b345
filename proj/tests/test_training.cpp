#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "test_support.hpp"
#include "utt/training.hpp"

namespace utt {
namespace {

using testing::MatD;

MatD row(double a, double b, double c, double d) { return (MatD(1, 4) << a, b, c, d).finished(); }

TEST(Loss, HandEvaluatedDisjointPair) {
  // GIoU = 0 - (9 - 2) / 9; every |coordinate error| is 2 on a unit canvas.
  const auto pred = ad::parameter<double>(row(0, 0, 1, 1));
  const auto l = box_loss<double>({pred}, row(2, 2, 3, 3), LossWeights{}, 1.0, 1.0);
  EXPECT_NEAR(l.total.item(), 32.0 / 9.0 + 10.0, 1e-12);
  EXPECT_NEAR(l.giou, 16.0 / 9.0, 1e-12);
  EXPECT_NEAR(l.l1, 2.0, 1e-12);
}

TEST(Loss, L1IsNormalizedByImageSize) {
  const auto pred = ad::parameter<double>(row(10, 0, 20, 10));
  // x errors of 4 over width 40, no y error: mean = (0.1 + 0 + 0.1 + 0) / 4.
  const auto l = box_loss<double>({pred}, row(14, 0, 24, 10), LossWeights{0.0, 1.0}, 40.0, 20.0);
  EXPECT_NEAR(l.total.item(), 0.05, 1e-12);
}

TEST(Loss, SumsOverIterationsAndWeights) {
  const auto a = ad::parameter<double>(row(0, 0, 4, 4));
  const auto b = ad::parameter<double>(row(1, 1, 5, 5));
  const MatD gt = row(1, 1, 5, 5);
  const LossWeights w{3.0, 7.0};
  const auto both = sot_loss<double>({a, b}, gt, w, 8, 8);
  const auto first = sot_loss<double>({a}, gt, w, 8, 8);
  EXPECT_NEAR(both.total.item(), first.total.item(), 1e-12);  // perfect second box adds zero
  const double iou = 9.0 / 23.0, enclosure = 25.0;
  const double giou = iou - (enclosure - 23.0) / enclosure;
  EXPECT_NEAR(first.total.item(), 3.0 * (1.0 - giou) + 7.0 * (1.0 / 8.0), 1e-12);
}

TEST(Loss, EdgeCases) {
  EXPECT_EQ(box_loss<double>({ad::parameter<double>(MatD(0, 4))}, MatD(0, 4), LossWeights{}, 8, 8).total.item(), 0.0);
  EXPECT_THROW(mot_loss<double>({}, row(0, 0, 1, 1), LossWeights{}, 8, 8), UsageError);
  EXPECT_THROW(sot_loss<double>({}, row(0, 0, 1, 1), LossWeights{}, 8, 8), UsageError);
  EXPECT_THROW(box_loss<double>({ad::parameter<double>(MatD::Zero(2, 4))}, row(0, 0, 1, 1), LossWeights{}, 8, 8),
               std::invalid_argument);
  EXPECT_THROW((LossWeights{0.0, 0.0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{-1.0, 1.0}.validate()), ConfigError);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const auto a = ad::parameter<double>(row(1.2, 2.3, 6.1, 7.7));
  const auto b = ad::parameter<double>(row(0.4, 1.9, 5.5, 8.3));
  const MatD gt = row(1.0, 2.0, 6.0, 8.0) + testing::random_mat(1, 4, rng, 0.01);
  EXPECT_LT(testing::gradient_error({a, b}, [&] { return sot_loss<double>({a, b}, gt, LossWeights{}, 16, 12).total; }),
            1e-3);
}

// Independent scalar AdamW with decoupled decay and global-norm clipping.
struct AdamOracle {
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g, double lr, double wd, double clip_scale) {
    ++t;
    g *= clip_scale;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    return p * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

TEST(AdamW, MatchesScalarOracleWithDecayAndClip) {
  auto p = ad::parameter<double>((MatD(1, 3) << 0.5, -1.0, 2.0).finished());
  ParameterList<double> params{{"p", p}};
  AdamW<double>::Options opt;
  opt.weight_decay = 0.1;
  opt.grad_clip = 1.0;
  AdamW<double> adam(params, opt);
  std::vector<AdamOracle> oracle(3);
  MatD expected = p.value();
  for (int it = 0; it < 6; ++it) {
    p.zero_grad();
    // loss = sum(c * p^2) with c = (1, 2, 3)
    const MatD c = (MatD(1, 3) << 1, 2, 3).finished();
    ad::backward(ad::sum(ad::mul(ad::constant<double>(c), ad::mul(p, p))));
    const MatD g = 2.0 * c.cwiseProduct(expected);
    const double norm = g.norm();
    const double scale = norm > 1.0 ? 1.0 / norm : 1.0;
    const double lr = 0.01 * (it + 1);
    EXPECT_NEAR(adam.step(lr), norm, 1e-12);
    for (int j = 0; j < 3; ++j) expected(0, j) = oracle[j].step(expected(0, j), g(0, j), lr, 0.1, scale);
    EXPECT_LT((p.value() - expected).cwiseAbs().maxCoeff(), 1e-12) << "step " << it;
  }
  EXPECT_EQ(adam.steps(), 6);
}

TEST(AdamW, ZeroGradientStillDecays) {
  auto p = ad::parameter<double>(MatD::Constant(1, 2, 4.0));
  AdamW<double>::Options opt;
  opt.weight_decay = 0.5;
  AdamW<double> adam({{"p", p}}, opt);
  adam.step(0.1);
  EXPECT_NEAR(p.value()(0, 0), 4.0 * 0.95, 1e-12);
}

TEST(CosineLr, WarmupPeakAndFloor) {
  EXPECT_NEAR(cosine_lr(0, 100, 1.0, 0.1, 10), 0.1, 1e-12);
  EXPECT_NEAR(cosine_lr(9, 100, 1.0, 0.1, 10), 1.0, 1e-12);
  EXPECT_NEAR(cosine_lr(10, 100, 1.0, 0.1, 10), 1.0, 1e-12);
  EXPECT_NEAR(cosine_lr(55, 100, 1.0, 0.1, 10), 0.55, 1e-12);
  EXPECT_NEAR(cosine_lr(100, 100, 1.0, 0.1, 10), 0.1, 1e-12);
  EXPECT_NEAR(cosine_lr(500, 100, 1.0, 0.1, 0), 0.1, 1e-12);
  double prev = 2.0;
  for (long i = 0; i <= 100; ++i) {
    const double lr = cosine_lr(i, 100, 1.0, 0.0);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(NoisyProposals, MeetMinimumIouOverManyDraws) {
  std::mt19937_64 rng(1);
  MatD gt(3, 4);
  gt << 10, 10, 30, 40, 50, 20, 58, 26, 0, 0, 100, 60;
  int fallbacks = 0;
  for (int i = 0; i < 10000 / 3 + 1; ++i) {
    const MatD p = noisy_proposals(gt, 0.5, rng, 0.1, 50);
    for (Eigen::Index r = 0; r < 3; ++r) {
      const Box b = p.row(r), g = gt.row(r);
      EXPECT_GE(box_iou<double>(b, g), 0.1);
      if (b == g) ++fallbacks;
    }
  }
  EXPECT_LT(fallbacks, 10);
}

TEST(NoisyProposals, DeterministicAndFallback) {
  MatD gt(1, 4);
  gt << 5, 5, 25, 15;
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(noisy_proposals(gt, 0.2, a), noisy_proposals(gt, 0.2, b));
  std::mt19937_64 c(7);
  EXPECT_EQ(noisy_proposals(gt, 5.0, c, 0.999, 1), gt);
  EXPECT_THROW(noisy_proposals(gt, 0.0, c), ConfigError);
}

TEST(PairAugment, MirrorKeepsBoxOnTheObject) {
  Image img(4, 10);
  for (int y = 1; y < 3; ++y) {
    for (int x = 2; x < 5; ++x) img.at(y, x, 0) = 1.0F;
  }
  PairAugment aug;
  aug.mirror = true;
  const Image out = aug.apply(img);
  const MatD box = aug.apply(row(2, 1, 5, 3), 10);
  EXPECT_EQ(box, row(5, 1, 8, 3));
  for (int x = 0; x < 10; ++x) EXPECT_EQ(out.at(1, x, 0), (x >= 5 && x < 8) ? 1.0F : 0.0F);
  PairAugment id;
  EXPECT_EQ(id.apply(img), img);
  EXPECT_EQ(id.apply(row(2, 1, 5, 3), 10), row(2, 1, 5, 3));
}

SceneSpec tiny_scene(std::uint64_t seed) {
  SceneSpec s;
  s.canvas_width = 32;
  s.canvas_height = 32;
  s.min_objects = 2;
  s.max_objects = 3;
  s.frames = 6;
  s.min_size = 7;
  s.max_size = 10;
  s.max_speed = 1.0;
  s.seed = seed;
  return s;
}

TrackerConfig tiny_tracker() {
  TrackerConfig cfg;
  cfg.backbone.widths = {6};
  cfg.backbone.stride = 4;
  cfg.backbone.output_dim = 8;
  cfg.attention = AttentionConfig{8, 2, 16};
  cfg.pool_size = 2;
  cfg.iterations = 2;
  cfg.init_seed = 5;
  return cfg;
}

TrainOptions tiny_options(TrainMode mode) {
  TrainOptions o;
  o.mode = mode;
  o.iterations = 6;
  o.lr = 1e-3;
  o.lr_min = 1e-4;
  o.warmup = 2;
  o.grad_clip = 1.0;
  o.seed = 9;
  return o;
}

TEST(Sampling, SotPairsStayWithinInterval) {
  const auto data = generate_dataset(tiny_scene(1), 3);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto p = sample_sot_pair(data, 2, rng);
    const auto& seq = *std::find_if(data.begin(), data.end(),
                                    [&](const AnnotatedSequence& s) { return &s.frames.front() <= p.reference && p.reference <= &s.frames.back(); });
    EXPECT_LE(std::abs(p.search - p.reference), 2);
    EXPECT_EQ(Box(p.reference_box), *seq.box_of(seq.sot_target, static_cast<int>(p.reference - seq.frames.data())));
  }
}

TEST(Sampling, MotPairsShareIds) {
  const auto data = generate_dataset(tiny_scene(1), 3);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto p = sample_mot_pair(data, 3, rng);
    EXPECT_LT(p.reference, p.search);
    EXPECT_LE(p.search - p.reference, 3);
    EXPECT_EQ(p.reference_boxes.rows(), static_cast<Eigen::Index>(p.ids.size()));
    EXPECT_EQ(p.search_boxes.rows(), static_cast<Eigen::Index>(p.ids.size()));
  }
}

TEST(Trainer, SameSeedSameChecksum) {
  const auto data = generate_dataset(tiny_scene(1), 2);
  std::uint64_t sums[2];
  for (auto& s : sums) {
    UnifiedTracker<double> model(tiny_tracker());
    Trainer<double> trainer(model, &data, &data, tiny_options(TrainMode::kUnified));
    trainer.train(3);
    s = trainer.checksum();
    EXPECT_EQ(trainer.state().updates, 6);
  }
  EXPECT_EQ(sums[0], sums[1]);
  UnifiedTracker<double> model(tiny_tracker());
  auto opt = tiny_options(TrainMode::kUnified);
  opt.seed = 10;
  Trainer<double> other(model, &data, &data, opt);
  other.train(3);
  EXPECT_NE(other.checksum(), sums[0]);
}

TEST(Trainer, ResumeIsBitExact) {
  const auto data = generate_dataset(tiny_scene(2), 2);
  const auto dir = std::filesystem::path(::testing::TempDir()) / "utt_resume";
  std::filesystem::remove_all(dir);
  std::uint64_t straight = 0;
  {
    UnifiedTracker<double> model(tiny_tracker());
    Trainer<double> trainer(model, &data, &data, tiny_options(TrainMode::kUnified));
    trainer.train(6);
    straight = trainer.checksum();
  }
  {
    UnifiedTracker<double> model(tiny_tracker());
    Trainer<double> trainer(model, &data, &data, tiny_options(TrainMode::kUnified));
    trainer.train(3);
    trainer.save(dir);
  }
  auto cfg = tiny_tracker();
  cfg.init_seed = 99;  // weights come from the checkpoint
  UnifiedTracker<double> model(cfg);
  Trainer<double> resumed(model, &data, &data, tiny_options(TrainMode::kUnified));
  resumed.load(dir);
  EXPECT_EQ(resumed.state().iteration, 3);
  resumed.train(3);
  EXPECT_EQ(resumed.checksum(), straight);
}

TEST(Trainer, ModesUseTheirStreams) {
  const auto data = generate_dataset(tiny_scene(3), 2);
  for (auto mode : {TrainMode::kSotOnly, TrainMode::kMotOnly}) {
    UnifiedTracker<double> model(tiny_tracker());
    Trainer<double> trainer(model, &data, &data, tiny_options(mode));
    const auto recs = trainer.unified_train_step();
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].task, mode == TrainMode::kSotOnly ? "sot" : "mot");
    EXPECT_TRUE(std::isfinite(recs[0].loss));
  }
  UnifiedTracker<double> model(tiny_tracker());
  EXPECT_THROW(Trainer<double>(model, nullptr, &data, tiny_options(TrainMode::kUnified)), UsageError);
  EXPECT_THROW(Trainer<double>(model, &data, nullptr, tiny_options(TrainMode::kMotOnly)), UsageError);
  EXPECT_EQ(parse_train_mode("unified"), TrainMode::kUnified);
  EXPECT_THROW(parse_train_mode("both"), ConfigError);
}

TEST(Trainer, DivergenceStopsWithDiagnostics) {
  const auto data = generate_dataset(tiny_scene(4), 2);
  const auto dir = std::filesystem::path(::testing::TempDir()) / "utt_diverge";
  std::filesystem::remove_all(dir);
  UnifiedTracker<double> model(tiny_tracker());
  auto opt = tiny_options(TrainMode::kUnified);
  opt.divergence_threshold = 1e-6;
  opt.diagnostics_dir = dir;
  Trainer<double> trainer(model, &data, &data, opt);
  EXPECT_THROW(trainer.unified_train_step(), DivergenceError);
  std::ifstream in(dir / "divergence.json");
  ASSERT_TRUE(in.good());
  const auto dump = nlohmann::json::parse(in);
  EXPECT_EQ(dump.at("task"), "sot");
  EXPECT_EQ(dump.at("iteration"), 0);
}

TEST(Trainer, LogsOneJsonLinePerUpdate) {
  const auto data = generate_dataset(tiny_scene(5), 2);
  UnifiedTracker<double> model(tiny_tracker());
  Trainer<double> trainer(model, &data, &data, tiny_options(TrainMode::kUnified));
  std::ostringstream log;
  trainer.set_log(&log);
  trainer.train(2);
  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("task"), n % 2 == 0 ? "sot" : "mot");
    ++n;
  }
  EXPECT_EQ(n, 4);
}

TEST(Trainer, OptionValidation) {
  auto o = tiny_options(TrainMode::kUnified);
  o.lr_min = 1.0;
  EXPECT_THROW(o.validate(), ConfigError);
  o = tiny_options(TrainMode::kUnified);
  o.sot_batch = 0;
  EXPECT_THROW(o.validate(), ConfigError);
  o = tiny_options(TrainMode::kUnified);
  o.proposal_sigma = -1;
  EXPECT_THROW(o.validate(), ConfigError);
}

}  // namespace
}  // namespace utt
