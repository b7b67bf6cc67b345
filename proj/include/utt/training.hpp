// Box losses, noisy proposals, AdamW and the alternating SOT / MOT training loop.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "utt/annotation.hpp"
#include "utt/checkpoint.hpp"
#include "utt/data.hpp"
#include "utt/model_io.hpp"
#include "utt/track_transformer.hpp"

namespace utt {

struct LossWeights {
  double lambda_giou = 2.0;
  double lambda_l1 = 5.0;

  void validate() const {
    if (lambda_giou < 0.0 || lambda_l1 < 0.0) throw ConfigError("loss: weights must be >= 0");
    if (lambda_giou == 0.0 && lambda_l1 == 0.0) throw ConfigError("loss: weights cannot both be zero");
  }
};

template <typename Scalar>
struct LossTerms {
  ad::Var<Scalar> total;
  double giou = 0.0;  // sum over iterations of mean(1 - giou)
  double l1 = 0.0;    // sum over iterations of the normalized mean |.|
};

/// Sum over `preds` of lambda_G * mean(1 - giou) + lambda_1 * mean |pred - gt|,
/// where the L1 term divides x by `image_width`, y by `image_height` and
/// averages over boxes and the four coordinates.
template <typename Scalar>
LossTerms<Scalar> box_loss(const std::vector<ad::Var<Scalar>>& preds, const Mat<Scalar>& gt,
                           const LossWeights& w, double image_width, double image_height) {
  LossTerms<Scalar> out;
  out.total = ad::constant<Scalar>(Mat<Scalar>::Zero(1, 1));
  if (gt.rows() == 0) return out;
  const auto target = ad::constant<Scalar>(gt);
  Mat<Scalar> norm(gt.rows(), 4);
  norm.col(0).setConstant(static_cast<Scalar>(1.0 / image_width));
  norm.col(1).setConstant(static_cast<Scalar>(1.0 / image_height));
  norm.col(2).setConstant(static_cast<Scalar>(1.0 / image_width));
  norm.col(3).setConstant(static_cast<Scalar>(1.0 / image_height));
  const auto scale = ad::constant<Scalar>(norm);
  for (const auto& pred : preds) {
    if (pred.rows() != gt.rows() || pred.cols() != 4)
      throw std::invalid_argument("box_loss: prediction and ground truth shapes differ");
    auto g = ad::add_scalar(ad::scale(ad::mean(ad::giou(pred, target)), Scalar(-1)), Scalar(1));
    auto l1 = ad::mean(ad::abs(ad::mul(ad::sub(pred, target), scale)));
    out.giou += static_cast<double>(g.item());
    out.l1 += static_cast<double>(l1.item());
    out.total = ad::add(out.total, ad::add(ad::scale(g, static_cast<Scalar>(w.lambda_giou)),
                                           ad::scale(l1, static_cast<Scalar>(w.lambda_l1))));
  }
  return out;
}

/// Multi-object loss over the L refinement outputs.
template <typename Scalar>
LossTerms<Scalar> mot_loss(const std::vector<ad::Var<Scalar>>& preds, const Mat<Scalar>& gt,
                           const LossWeights& w, double image_width, double image_height) {
  if (preds.empty()) throw UsageError("mot_loss: need at least one iteration");
  return box_loss(preds, gt, w, image_width, image_height);
}

/// Single-object loss; index 0 is the proposal-decoder output.
template <typename Scalar>
LossTerms<Scalar> sot_loss(const std::vector<ad::Var<Scalar>>& preds, const Mat<Scalar>& gt,
                           const LossWeights& w, double image_width, double image_height) {
  if (preds.empty()) throw UsageError("sot_loss: the proposal (index 0) is required");
  return box_loss(preds, gt, w, image_width, image_height);
}

/// Gaussian-jittered copies of `gt`: center offsets ~ N(0, sigma * size),
/// log-size offsets ~ N(0, sigma). Each box is redrawn until its IoU with the
/// ground truth reaches `min_iou`; after `max_attempts` the ground truth is used.
inline Mat<double> noisy_proposals(const Mat<double>& gt, double sigma, std::mt19937_64& rng,
                                   double min_iou = 0.1, int max_attempts = 50) {
  if (!(sigma > 0.0)) throw ConfigError("noisy_proposals: sigma must be > 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat<double> out = gt;
  for (Eigen::Index i = 0; i < gt.rows(); ++i) {
    const Box g = gt.row(i);
    const double w = g(2) - g(0), h = g(3) - g(1);
    const double cx = 0.5 * (g(0) + g(2)), cy = 0.5 * (g(1) + g(3));
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
      const double ncx = cx + sigma * w * normal(rng);
      const double ncy = cy + sigma * h * normal(rng);
      const double nw = w * std::exp(sigma * normal(rng));
      const double nh = h * std::exp(sigma * normal(rng));
      const Box cand = make_box(ncx - 0.5 * nw, ncy - 0.5 * nh, ncx + 0.5 * nw, ncy + 0.5 * nh);
      if (box_iou<double>(cand, g) >= min_iou) {
        out.row(i) = cand;
        break;
      }
    }
  }
  return out;
}

/// AdamW with decoupled weight decay.
template <typename Scalar>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-3;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
  };

  AdamW() = default;
  AdamW(ParameterList<Scalar> params, Options options) : params_(std::move(params)), options_(options) {
    for (const auto& [name, p] : params_) {
      m_.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
      v_.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
    }
  }

  /// Applies one update from the accumulated gradients; returns the gradient norm.
  double step(double lr) {
    ++steps_;
    double norm2 = 0.0;
    for (const auto& [name, p] : params_) {
      if (p.has_grad()) norm2 += static_cast<double>(p.grad().squaredNorm());
    }
    const double norm = std::sqrt(norm2);
    const double clip = options_.grad_clip > 0.0 && norm > options_.grad_clip ? options_.grad_clip / norm : 1.0;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    const auto b1 = static_cast<Scalar>(options_.beta1), b2 = static_cast<Scalar>(options_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& p = params_[i].second;
      Mat<Scalar> g = p.has_grad() ? p.grad() : Mat<Scalar>::Zero(p.rows(), p.cols());
      if (clip != 1.0) g *= static_cast<Scalar>(clip);
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      Mat<Scalar>& value = p.mutable_value();
      value *= static_cast<Scalar>(1.0 - lr * options_.weight_decay);
      const auto denom = (v_[i].array() / static_cast<Scalar>(bc2)).sqrt() + static_cast<Scalar>(options_.eps);
      value.array() -= static_cast<Scalar>(lr / bc1) * m_[i].array() / denom;
    }
    return norm;
  }

  long steps() const { return steps_; }
  const ParameterList<Scalar>& parameters() const { return params_; }
  const Options& options() const { return options_; }

  void append_state(Checkpoint& ckpt) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ckpt.tensors.push_back(to_record("optimizer.m." + params_[i].first, m_[i]));
      ckpt.tensors.push_back(to_record("optimizer.v." + params_[i].first, v_[i]));
    }
  }

  void load_state(const Checkpoint& ckpt, long steps) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto* m = ckpt.find("optimizer.m." + params_[i].first);
      const auto* v = ckpt.find("optimizer.v." + params_[i].first);
      if (!m || !v) throw FormatError("checkpoint: missing optimizer moments for " + params_[i].first);
      m_[i] = from_record<Scalar>(*m);
      v_[i] = from_record<Scalar>(*v);
    }
    steps_ = steps;
  }

  std::uint64_t hash(std::uint64_t seed) const {
    std::uint64_t h = fnv1a(&steps_, sizeof(steps_), seed);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      h = fnv1a(m_[i].data(), sizeof(Scalar) * static_cast<std::size_t>(m_[i].size()), h);
      h = fnv1a(v_[i].data(), sizeof(Scalar) * static_cast<std::size_t>(v_[i].size()), h);
    }
    return h;
  }

 private:
  ParameterList<Scalar> params_;
  Options options_;
  std::vector<Mat<Scalar>> m_, v_;
  long steps_ = 0;
};

/// Cosine decay from `lr` to `lr_min` over `total` iterations after a linear warm-up.
inline double cosine_lr(long iteration, long total, double lr, double lr_min, long warmup = 0) {
  if (warmup > 0 && iteration < warmup) return lr * static_cast<double>(iteration + 1) / static_cast<double>(warmup);
  if (total <= warmup) return lr_min;
  const double t = std::clamp(static_cast<double>(iteration - warmup) / static_cast<double>(total - warmup), 0.0, 1.0);
  return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

enum class TrainMode { kSotOnly, kMotOnly, kUnified };

inline std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kSotOnly: return "sot_only";
    case TrainMode::kMotOnly: return "mot_only";
    case TrainMode::kUnified: return "unified";
  }
  return "unified";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "sot_only" || s == "sot") return TrainMode::kSotOnly;
  if (s == "mot_only" || s == "mot") return TrainMode::kMotOnly;
  if (s == "unified") return TrainMode::kUnified;
  throw ConfigError("mode must be one of sot_only, mot_only, unified; got '" + s + "'");
}

struct TrainOptions {
  TrainMode mode = TrainMode::kUnified;
  long iterations = 2000;
  // Desk-scale recipe: the short budget needs a hotter, clipped start.
  double lr = 5e-4;
  double lr_min = 5e-6;
  long warmup = 50;
  double weight_decay = 5e-3;
  double grad_clip = 1.0;
  int sot_batch = 4;
  int mot_batch = 1;
  int max_frame_interval = 200;  // SOT reference / search frame distance
  int mot_frame_interval = 1;    // MOT reference frame precedes the search frame by 1..this
  double proposal_sigma = 0.15;
  double min_proposal_iou = 0.1;
  int proposal_attempts = 50;
  bool augment = true;  // SOT pairs: shared channel shuffle, gain and mirror
  LossWeights loss;
  double divergence_threshold = 1e4;
  double ema_decay = 0.95;
  std::uint64_t seed = 0;
  std::filesystem::path diagnostics_dir;  // divergence dumps; empty = none

  void validate() const {
    if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (!(lr > 0.0) || lr_min < 0.0 || lr_min > lr) throw ConfigError("train: need 0 <= lr_min <= lr, lr > 0");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (sot_batch < 1 || mot_batch < 1) throw ConfigError("train: batch sizes must be >= 1");
    if (max_frame_interval < 0 || mot_frame_interval < 1) throw ConfigError("train: invalid frame interval");
    if (!(proposal_sigma > 0.0)) throw ConfigError("train: proposal_sigma must be > 0");
    if (min_proposal_iou < 0.0 || min_proposal_iou > 1.0) throw ConfigError("train: min_proposal_iou must be in [0, 1]");
    if (proposal_attempts < 1) throw ConfigError("train: proposal_attempts must be >= 1");
    loss.validate();
  }
};

/// One optimizer update's bookkeeping.
struct StepRecord {
  long iteration = 0;
  std::string task;
  double loss = 0.0;
  double giou = 0.0;
  double l1 = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  int targets = 0;
  int expanded = 0;

  std::string to_json() const {
    return nlohmann::json{{"iteration", iteration}, {"task", task},       {"loss", loss},
                          {"giou", giou},           {"l1", l1},           {"lr", lr},
                          {"grad_norm", grad_norm}, {"targets", targets}, {"expanded", expanded}}
        .dump();
  }
};

struct SotPair {
  const Image* reference = nullptr;
  const Image* search = nullptr;
  Mat<double> reference_box;  // 1 x 4
  Mat<double> search_box;
};

struct MotPair {
  const Image* reference = nullptr;
  const Image* search = nullptr;
  Mat<double> reference_boxes;  // N x 4
  Mat<double> search_boxes;
  std::vector<int> ids;
};

/// Frame pairs around the single-object target, at most `max_interval` apart.
inline SotPair sample_sot_pair(const std::vector<AnnotatedSequence>& data, int max_interval, std::mt19937_64& rng) {
  if (data.empty()) throw UsageError("training: empty SOT data stream");
  const auto& seq = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
  const int last = seq.length() - 1;
  const int r = std::uniform_int_distribution<int>(0, last)(rng);
  const int t = std::uniform_int_distribution<int>(std::max(0, r - max_interval), std::min(last, r + max_interval))(rng);
  const auto rb = seq.box_of(seq.sot_target, r);
  const auto tb = seq.box_of(seq.sot_target, t);
  if (!rb || !tb) throw UsageError("training: SOT target missing from a frame of " + seq.name);
  return {&seq.frames[static_cast<std::size_t>(r)], &seq.frames[static_cast<std::size_t>(t)], *rb, *tb};
}

/// Consecutive-ish frame pairs with every object present in both frames.
inline MotPair sample_mot_pair(const std::vector<AnnotatedSequence>& data, int max_interval, std::mt19937_64& rng) {
  if (data.empty()) throw UsageError("training: empty MOT data stream");
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto& seq = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
    if (seq.length() < 2) continue;
    const int t = std::uniform_int_distribution<int>(1, seq.length() - 1)(rng);
    const int r = std::max(0, t - std::uniform_int_distribution<int>(1, max_interval)(rng));
    MotPair pair{&seq.frames[static_cast<std::size_t>(r)], &seq.frames[static_cast<std::size_t>(t)], {}, {}, {}};
    std::vector<Box> rb, tb;
    for (const auto& a : seq.gt[static_cast<std::size_t>(r)]) {
      if (auto b = seq.box_of(a.id, t)) {
        rb.push_back(a.box);
        tb.push_back(*b);
        pair.ids.push_back(a.id);
      }
    }
    if (pair.ids.empty()) continue;
    pair.reference_boxes.resize(static_cast<Eigen::Index>(rb.size()), 4);
    pair.search_boxes.resize(static_cast<Eigen::Index>(tb.size()), 4);
    for (std::size_t i = 0; i < rb.size(); ++i) {
      pair.reference_boxes.row(static_cast<Eigen::Index>(i)) = rb[i];
      pair.search_boxes.row(static_cast<Eigen::Index>(i)) = tb[i];
    }
    return pair;
  }
  throw UsageError("training: MOT data stream has no frame pair with shared objects");
}

/// The same random photometric change and horizontal mirror applied to both
/// frames of a pair, so appearance must be matched rather than memorized.
struct PairAugment {
  int perm[3] = {0, 1, 2};
  float gain[3] = {1.0F, 1.0F, 1.0F};
  bool mirror = false;

  static PairAugment draw(std::mt19937_64& rng) {
    PairAugment a;
    std::shuffle(a.perm, a.perm + 3, rng);
    std::uniform_real_distribution<float> g(0.7F, 1.3F);
    for (float& v : a.gain) v = g(rng);
    a.mirror = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    return a;
  }

  Image apply(const Image& in) const {
    Image out(in.height, in.width, in.channels);
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        const int sx = mirror ? in.width - 1 - x : x;
        for (int c = 0; c < in.channels; ++c) {
          const int k = c < 3 ? perm[c] : c;
          out.at(y, x, c) = std::clamp(in.at(y, sx, k) * (c < 3 ? gain[c] : 1.0F), 0.0F, 1.0F);
        }
      }
    }
    return out;
  }

  Mat<double> apply(const Mat<double>& box, int width) const {
    if (!mirror) return box;
    Mat<double> out = box;
    out.col(0) = (width - box.col(2).array()).matrix();
    out.col(2) = (width - box.col(0).array()).matrix();
    return out;
  }
};

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

inline void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream ss(state);
  ss >> rng;
  if (!ss) throw FormatError("checkpoint: malformed RNG state");
}

template <typename Scalar>
struct TrainState {
  long iteration = 0;
  long updates = 0;
  AdamW<Scalar> optimizer;
  std::mt19937_64 sot_rng;
  std::mt19937_64 mot_rng;
  std::mt19937_64 noise_rng;
  double ema_sot = std::numeric_limits<double>::quiet_NaN();
  double ema_mot = std::numeric_limits<double>::quiet_NaN();
};

/// Alternating trainer: each unified step runs one SOT update then one MOT
/// update, as separate optimizer steps.
template <typename Scalar>
class Trainer {
 public:
  Trainer(UnifiedTracker<Scalar>& model, const std::vector<AnnotatedSequence>* sot_data,
          const std::vector<AnnotatedSequence>* mot_data, TrainOptions options)
      : model_(model), sot_data_(sot_data), mot_data_(mot_data), options_(std::move(options)) {
    options_.validate();
    if (uses_sot() && (!sot_data_ || sot_data_->empty()))
      throw UsageError("training: mode " + train_mode_name(options_.mode) + " needs SOT sequences");
    if (uses_mot() && (!mot_data_ || mot_data_->empty()))
      throw UsageError("training: mode " + train_mode_name(options_.mode) + " needs MOT sequences");
    typename AdamW<Scalar>::Options adam;
    adam.weight_decay = options_.weight_decay;
    adam.grad_clip = options_.grad_clip;
    state_.optimizer = AdamW<Scalar>(model_.parameters(), adam);
    std::seed_seq seq{static_cast<std::uint32_t>(options_.seed), static_cast<std::uint32_t>(options_.seed >> 32)};
    std::uint32_t seeds[6];
    seq.generate(seeds, seeds + 6);
    state_.sot_rng.seed((static_cast<std::uint64_t>(seeds[0]) << 32) | seeds[1]);
    state_.mot_rng.seed((static_cast<std::uint64_t>(seeds[2]) << 32) | seeds[3]);
    state_.noise_rng.seed((static_cast<std::uint64_t>(seeds[4]) << 32) | seeds[5]);
  }

  bool uses_sot() const { return options_.mode != TrainMode::kMotOnly; }
  bool uses_mot() const { return options_.mode != TrainMode::kSotOnly; }

  const TrainState<Scalar>& state() const { return state_; }
  const TrainOptions& options() const { return options_; }
  void set_log(std::ostream* log) { log_ = log; }

  double learning_rate() const {
    return cosine_lr(state_.iteration, options_.iterations, options_.lr, options_.lr_min, options_.warmup);
  }

  /// One SOT update over `sot_batch` pairs: the reference self-pair and the
  /// (reference, search) pair both contribute their full iteration losses.
  StepRecord sot_iteration() {
    model_.zero_grad();
    StepRecord rec;
    rec.task = "sot";
    ad::Var<Scalar> total = ad::constant<Scalar>(Mat<Scalar>::Zero(1, 1));
    for (int b = 0; b < options_.sot_batch; ++b) {
      const SotPair pair = sample_sot_pair(*sot_data_, options_.max_frame_interval, state_.sot_rng);
      const int image_width = pair.reference->width;
      std::optional<PairAugment> aug;
      if (options_.augment) aug = PairAugment::draw(state_.sot_rng);
      const auto ref = model_.features(aug ? aug->apply(*pair.reference) : *pair.reference);
      const auto search = model_.features(aug ? aug->apply(*pair.search) : *pair.search);
      const Mat<Scalar> ref_box = (aug ? aug->apply(pair.reference_box, image_width) : pair.reference_box).cast<Scalar>();
      const Mat<Scalar> search_box = (aug ? aug->apply(pair.search_box, image_width) : pair.search_box).cast<Scalar>();
      const auto self = model_.forward(ref, ref, ref_box, TrackMode::kSot);
      const auto cross = model_.forward(search, ref, ref_box, TrackMode::kSot);
      const double width = pair.reference->width, height = pair.reference->height;
      auto l_self = sot_loss(self.boxes, ref_box, options_.loss, width, height);
      auto l_cross = sot_loss(cross.boxes, search_box, options_.loss, width, height);
      total = ad::add(total, ad::add(l_self.total, l_cross.total));
      rec.giou += (l_self.giou + l_cross.giou) / options_.sot_batch;
      rec.l1 += (l_self.l1 + l_cross.l1) / options_.sot_batch;
      rec.targets += 1;
      rec.expanded += self.expanded_proposals + cross.expanded_proposals;
    }
    total = ad::scale(total, static_cast<Scalar>(1.0 / options_.sot_batch));
    finish_update(total, rec, state_.ema_sot);
    return rec;
  }

  /// One MOT update: all objects shared by a frame pair, starting from noisy
  /// copies of their search-frame boxes.
  StepRecord mot_iteration() {
    model_.zero_grad();
    StepRecord rec;
    rec.task = "mot";
    ad::Var<Scalar> total = ad::constant<Scalar>(Mat<Scalar>::Zero(1, 1));
    for (int b = 0; b < options_.mot_batch; ++b) {
      const MotPair pair = sample_mot_pair(*mot_data_, options_.mot_frame_interval, state_.mot_rng);
      const Mat<double> proposals = noisy_proposals(pair.search_boxes, options_.proposal_sigma, state_.noise_rng,
                                                    options_.min_proposal_iou, options_.proposal_attempts);
      const auto ref = model_.features(*pair.reference);
      const auto search = model_.features(*pair.search);
      const Mat<Scalar> gt = pair.search_boxes.cast<Scalar>();
      const auto out = model_.forward(search, ref, pair.reference_boxes.cast<Scalar>(), TrackMode::kMot,
                                      Mat<Scalar>(proposals.cast<Scalar>()));
      auto l = mot_loss(out.boxes, gt, options_.loss, pair.search->width, pair.search->height);
      total = ad::add(total, l.total);
      rec.giou += l.giou / options_.mot_batch;
      rec.l1 += l.l1 / options_.mot_batch;
      rec.targets += static_cast<int>(gt.rows());
      rec.expanded += out.expanded_proposals;
    }
    total = ad::scale(total, static_cast<Scalar>(1.0 / options_.mot_batch));
    finish_update(total, rec, state_.ema_mot);
    return rec;
  }

  /// One unified step: an SOT update then an MOT update (per mode).
  std::vector<StepRecord> unified_train_step() {
    std::vector<StepRecord> records;
    if (uses_sot()) records.push_back(sot_iteration());
    if (uses_mot()) records.push_back(mot_iteration());
    ++state_.iteration;
    return records;
  }

  void train(long steps) {
    for (long i = 0; i < steps; ++i) unified_train_step();
  }

  void train_to_end() {
    while (state_.iteration < options_.iterations) unified_train_step();
  }

  /// Hash of parameters, optimizer moments, counters, RNG streams and EMAs.
  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a(&state_.iteration, sizeof(state_.iteration));
    h = fnv1a(&state_.updates, sizeof(state_.updates), h);
    for (const auto& [name, p] : model_.parameters()) {
      h = fnv1a(p.value().data(), sizeof(Scalar) * static_cast<std::size_t>(p.size()), h);
    }
    h = state_.optimizer.hash(h);
    for (const auto* rng : {&state_.sot_rng, &state_.mot_rng, &state_.noise_rng}) {
      const std::string s = rng_state(*rng);
      h = fnv1a(s.data(), s.size(), h);
    }
    h = fnv1a(&state_.ema_sot, sizeof(double), h);
    return fnv1a(&state_.ema_mot, sizeof(double), h);
  }

  /// Full training state at float64 so a resumed run continues bit-exactly.
  void save(const std::filesystem::path& dir) const {
    Checkpoint ckpt;
    ckpt.dtype = TensorDType::kFloat64;
    nlohmann::json meta = {{"kind", "train_state"},
                           {"tracker", tracker_config_to_json(model_.config())},
                           {"iteration", state_.iteration},
                           {"updates", state_.updates},
                           {"optimizer_steps", state_.optimizer.steps()},
                           {"mode", train_mode_name(options_.mode)},
                           {"sot_rng", rng_state(state_.sot_rng)},
                           {"mot_rng", rng_state(state_.mot_rng)},
                           {"noise_rng", rng_state(state_.noise_rng)}};
    ckpt.metadata = meta.dump();
    append_parameters(ckpt, model_.parameters());
    state_.optimizer.append_state(ckpt);
    Mat<double> ema(1, 2);
    ema << state_.ema_sot, state_.ema_mot;
    ckpt.tensors.push_back(to_record<double>("state.loss_ema", ema));
    write_checkpoint(dir, ckpt);
  }

  void load(const std::filesystem::path& dir) {
    const Checkpoint ckpt = read_checkpoint(dir);
    const auto meta = nlohmann::json::parse(ckpt.metadata);
    if (meta.value("kind", "") != "train_state") throw FormatError("checkpoint: " + dir.string() + " is not a training state");
    load_parameters(ckpt, model_.parameters());
    state_.iteration = meta.at("iteration").get<long>();
    state_.updates = meta.at("updates").get<long>();
    state_.optimizer.load_state(ckpt, meta.at("optimizer_steps").get<long>());
    set_rng_state(state_.sot_rng, meta.at("sot_rng").get<std::string>());
    set_rng_state(state_.mot_rng, meta.at("mot_rng").get<std::string>());
    set_rng_state(state_.noise_rng, meta.at("noise_rng").get<std::string>());
    const auto* ema = ckpt.find("state.loss_ema");
    if (!ema || ema->values.size() != 2) throw FormatError("checkpoint: missing loss EMAs");
    state_.ema_sot = ema->values[0];
    state_.ema_mot = ema->values[1];
  }

 private:
  void finish_update(const ad::Var<Scalar>& total, StepRecord& rec, double& ema) {
    rec.iteration = state_.iteration;
    rec.loss = static_cast<double>(total.item());
    rec.lr = learning_rate();
    if (!std::isfinite(rec.loss) || rec.loss > options_.divergence_threshold) dump_divergence(rec);
    ad::backward(total);
    rec.grad_norm = state_.optimizer.step(rec.lr);
    ++state_.updates;
    ema = std::isnan(ema) ? rec.loss : options_.ema_decay * ema + (1.0 - options_.ema_decay) * rec.loss;
    if (log_) *log_ << rec.to_json() << "\n";
  }

  [[noreturn]] void dump_divergence(const StepRecord& rec) const {
    std::string where;
    if (!options_.diagnostics_dir.empty()) {
      std::filesystem::create_directories(options_.diagnostics_dir);
      const auto path = options_.diagnostics_dir / "divergence.json";
      nlohmann::json dump = nlohmann::json::parse(rec.to_json());
      dump["ema_sot"] = std::isnan(state_.ema_sot) ? nlohmann::json() : nlohmann::json(state_.ema_sot);
      dump["ema_mot"] = std::isnan(state_.ema_mot) ? nlohmann::json() : nlohmann::json(state_.ema_mot);
      dump["updates"] = state_.updates;
      dump["threshold"] = options_.divergence_threshold;
      std::ofstream(path) << dump.dump(2) << "\n";
      where = " (diagnostics in " + path.string() + ")";
    }
    throw DivergenceError("training diverged at iteration " + std::to_string(rec.iteration) + " on the " + rec.task +
                          " task: loss " + std::to_string(rec.loss) + where);
  }

  UnifiedTracker<Scalar>& model_;
  const std::vector<AnnotatedSequence>* sot_data_;
  const std::vector<AnnotatedSequence>* mot_data_;
  TrainOptions options_;
  TrainState<Scalar> state_;
  std::ostream* log_ = nullptr;
};

}  // namespace utt
