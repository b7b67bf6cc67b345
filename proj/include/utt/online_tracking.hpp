// Inference loops: single-object tracking against a fixed first frame, and
// the detect / track / associate loop with identity management.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "utt/annotation.hpp"
#include "utt/data.hpp"
#include "utt/image.hpp"
#include "utt/track_transformer.hpp"

namespace utt {

struct Association {
  std::vector<std::pair<int, int>> matches;  // (track index, detection index)
  std::vector<int> unmatched_tracks;
  std::vector<int> unmatched_detections;
};

/// Optimal one-to-one matching maximizing total IoU, then pairs with
/// IoU < threshold are dropped. Threshold must lie in (0, 1].
Association associate(const std::vector<Box>& tracked, const std::vector<Box>& detections, double threshold);

enum class TrackStatus { kActive, kLost };

struct Track {
  int id = 0;
  Box box = Box::Zero();
  TrackStatus status = TrackStatus::kActive;
  int lost_age = 0;
  double score = 1.0;
};

struct Detections {
  std::vector<Box> boxes;
  std::vector<double> scores;
};

/// Produces detections for a frame.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual Detections detect(const Image& image, int frame_index) = 0;
};

/// Ground truth as detections.
class OracleDetector : public Detector {
 public:
  explicit OracleDetector(const SequenceAnnotations& gt) : gt_(gt) {}
  Detections detect(const Image& image, int frame_index) override;

 private:
  const SequenceAnnotations& gt_;
};

struct NoisyDetectorOptions {
  double jitter = 1.0;             // pixel std-dev on each corner
  double drop_rate = 0.0;          // probability a true object is missed
  double false_positive_rate = 0.0;  // expected spurious boxes per frame
  std::uint64_t seed = 0;
};

/// Ground truth with corner jitter, misses and false positives; the draw for
/// each frame depends only on the seed and the frame index.
class NoisyDetector : public Detector {
 public:
  NoisyDetector(const SequenceAnnotations& gt, int width, int height, NoisyDetectorOptions options)
      : gt_(gt), width_(width), height_(height), options_(options) {}
  Detections detect(const Image& image, int frame_index) override;

 private:
  const SequenceAnnotations& gt_;
  int width_, height_;
  NoisyDetectorOptions options_;
};

/// Predicts where each reference box is in the current frame.
class BoxPredictor {
 public:
  virtual ~BoxPredictor() = default;
  /// Called once per frame, before predict(); `image` becomes the new current frame.
  virtual void begin_frame(const Image& image, int frame_index) = 0;
  /// Boxes of the previous frame (reference) and proposals in the current frame.
  virtual std::vector<Box> predict(const std::vector<Box>& reference_boxes, const std::vector<Box>& proposals) = 0;
};

/// Track transformer in MOT mode with the previous frame as reference.
template <typename Scalar>
class ModelPredictor : public BoxPredictor {
 public:
  explicit ModelPredictor(const UnifiedTracker<Scalar>& model) : model_(model) {}

  void begin_frame(const Image& image, int) override {
    ad::NoGradGuard guard;
    previous_ = std::move(current_);
    current_ = model_.features(image);
    width_ = image.width;
    height_ = image.height;
  }

  std::vector<Box> predict(const std::vector<Box>& reference_boxes, const std::vector<Box>& proposals) override {
    if (reference_boxes.empty()) return {};
    if (!previous_ || !current_) throw UsageError("predictor: no reference frame yet");
    ad::NoGradGuard guard;
    Mat<Scalar> ref(static_cast<Eigen::Index>(reference_boxes.size()), 4);
    Mat<Scalar> prop(ref.rows(), 4);
    for (std::size_t i = 0; i < reference_boxes.size(); ++i) {
      ref.row(static_cast<Eigen::Index>(i)) = reference_boxes[i].cast<Scalar>();
      prop.row(static_cast<Eigen::Index>(i)) = proposals[i].cast<Scalar>();
    }
    const auto out = model_.forward(*current_, *previous_, ref, TrackMode::kMot, prop);
    const Mat<Scalar>& final_boxes = out.boxes.back().value();
    std::vector<Box> boxes;
    for (Eigen::Index i = 0; i < final_boxes.rows(); ++i) {
      boxes.push_back(clip_box(final_boxes.row(i).template cast<double>(), width_, height_));
    }
    return boxes;
  }

 private:
  const UnifiedTracker<Scalar>& model_;
  std::optional<FeatureMap<Scalar>> previous_, current_;
  int width_ = 0, height_ = 0;
};

/// Test stub that knows the ground truth: a reference box equal to some
/// object's previous-frame box is replaced by that object's current box;
/// anything else (a lost track, an object that left) is kept.
class PerfectPredictor : public BoxPredictor {
 public:
  explicit PerfectPredictor(const SequenceAnnotations& gt) : gt_(gt) {}
  void begin_frame(const Image& image, int frame_index) override;
  std::vector<Box> predict(const std::vector<Box>& reference_boxes, const std::vector<Box>& proposals) override;

 private:
  const SequenceAnnotations& gt_;
  int frame_ = -1;
};

enum class LostProposal { kLastBox, kPredicted };

struct MotTrackerOptions {
  double match_threshold = 0.9;
  int max_lost_age = 30;
  LostProposal lost_proposal = LostProposal::kLastBox;

  void validate() const {
    if (!(match_threshold > 0.0 && match_threshold <= 1.0)) throw ConfigError("tracking: match_threshold must be in (0, 1]");
    if (max_lost_age < 0) throw ConfigError("tracking: max_lost_age must be >= 0");
  }
};

/// Detect / track / associate with monotone identity assignment.
class MotTracker {
 public:
  explicit MotTracker(MotTrackerOptions options) : options_(options) { options_.validate(); }

  /// Processes one frame and returns its active tracks. Detector failures are
  /// rethrown with the frame index.
  std::vector<Track> step(const Image& image, int frame_index, Detector& detector, BoxPredictor& predictor);

  const std::vector<Track>& tracks() const { return tracks_; }
  int next_id() const { return next_id_; }

 private:
  MotTrackerOptions options_;
  std::vector<Track> tracks_;
  int next_id_ = 1;
};

/// Runs the tracker over a whole sequence and returns per-frame active tracks.
SequenceAnnotations track_mot_sequence(const std::vector<Image>& frames, Detector& detector, BoxPredictor& predictor,
                                       const MotTrackerOptions& options);

/// Single-object tracking with frame 0 and `init_box` as the fixed reference;
/// the final-iteration box is reported for each later frame.
template <typename Scalar>
std::vector<Box> sot_track_sequence(const std::vector<Image>& frames, const Box& init_box,
                                    const UnifiedTracker<Scalar>& model) {
  if (frames.empty()) throw UsageError("sot_track_sequence: empty frame list");
  ad::NoGradGuard guard;
  std::vector<Box> out{init_box};
  const auto reference = model.features(frames.front());
  const Mat<Scalar> ref_box = init_box.cast<Scalar>();
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const auto search = model.features(frames[t]);
    const auto result = model.forward(search, reference, ref_box, TrackMode::kSot);
    const Box b = result.boxes.back().value().row(0).template cast<double>();
    out.push_back(clip_box(b, frames[t].width, frames[t].height));
  }
  return out;
}

}  // namespace utt
