#include "utt/online_tracking.hpp"

#include <algorithm>
#include <stdexcept>

#include "utt/assignment.hpp"

namespace utt {

Association associate(const std::vector<Box>& tracked, const std::vector<Box>& detections, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw UsageError("associate: threshold must be in (0, 1]");
  Association out;
  std::vector<char> det_used(detections.size(), 0);
  std::vector<int> assign(tracked.size(), -1);
  if (!tracked.empty() && !detections.empty()) {
    Eigen::MatrixXd overlap(tracked.size(), detections.size());
    for (std::size_t i = 0; i < tracked.size(); ++i) {
      for (std::size_t j = 0; j < detections.size(); ++j) overlap(i, j) = box_iou<double>(tracked[i], detections[j]);
    }
    assign = solve_max_assignment(overlap);
    for (std::size_t i = 0; i < tracked.size(); ++i) {
      if (assign[i] >= 0 && overlap(i, assign[i]) < threshold) assign[i] = -1;
    }
  }
  for (std::size_t i = 0; i < tracked.size(); ++i) {
    if (assign[i] >= 0) {
      out.matches.emplace_back(static_cast<int>(i), assign[i]);
      det_used[static_cast<std::size_t>(assign[i])] = 1;
    } else {
      out.unmatched_tracks.push_back(static_cast<int>(i));
    }
  }
  for (std::size_t j = 0; j < detections.size(); ++j) {
    if (!det_used[j]) out.unmatched_detections.push_back(static_cast<int>(j));
  }
  return out;
}

Detections OracleDetector::detect(const Image&, int frame_index) {
  Detections d;
  if (frame_index < 0 || frame_index >= static_cast<int>(gt_.size())) return d;
  for (const auto& a : gt_[static_cast<std::size_t>(frame_index)]) {
    d.boxes.push_back(a.box);
    d.scores.push_back(1.0);
  }
  return d;
}

Detections NoisyDetector::detect(const Image&, int frame_index) {
  Detections d;
  if (frame_index < 0 || frame_index >= static_cast<int>(gt_.size())) return d;
  std::seed_seq seq{static_cast<std::uint32_t>(options_.seed), static_cast<std::uint32_t>(options_.seed >> 32),
                    static_cast<std::uint32_t>(frame_index)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& a : gt_[static_cast<std::size_t>(frame_index)]) {
    if (unit(rng) < options_.drop_rate) continue;
    Box b = a.box;
    for (int k = 0; k < 4; ++k) b(k) += options_.jitter * normal(rng);
    if (b(2) < b(0)) std::swap(b(0), b(2));
    if (b(3) < b(1)) std::swap(b(1), b(3));
    d.boxes.push_back(clip_box(b, width_, height_));
    d.scores.push_back(0.7 + 0.3 * unit(rng));
  }
  std::poisson_distribution<int> spurious(options_.false_positive_rate);
  const int count = options_.false_positive_rate > 0.0 ? spurious(rng) : 0;
  for (int i = 0; i < count; ++i) {
    const double w = 12.0 + 20.0 * unit(rng), h = 12.0 + 20.0 * unit(rng);
    const double x = (width_ - w) * unit(rng), y = (height_ - h) * unit(rng);
    d.boxes.push_back(clip_box(make_box(x, y, x + w, y + h), width_, height_));
    d.scores.push_back(0.3 + 0.3 * unit(rng));
  }
  return d;
}

void PerfectPredictor::begin_frame(const Image&, int frame_index) { frame_ = frame_index; }

std::vector<Box> PerfectPredictor::predict(const std::vector<Box>& reference_boxes, const std::vector<Box>&) {
  std::vector<Box> out;
  const auto previous = frame_ - 1;
  for (const auto& ref : reference_boxes) {
    Box next = ref;
    if (previous >= 0 && previous < static_cast<int>(gt_.size()) && frame_ < static_cast<int>(gt_.size())) {
      // Only a box that is exactly some object's previous position carries an
      // identity; stale boxes of lost tracks stay where they are.
      int id = -1;
      for (const auto& a : gt_[static_cast<std::size_t>(previous)]) {
        if ((a.box - ref).cwiseAbs().maxCoeff() < 1e-9) id = a.id;
      }
      for (const auto& a : gt_[static_cast<std::size_t>(frame_)]) {
        if (id >= 0 && a.id == id) next = a.box;
      }
    }
    out.push_back(next);
  }
  return out;
}

std::vector<Track> MotTracker::step(const Image& image, int frame_index, Detector& detector, BoxPredictor& predictor) {
  predictor.begin_frame(image, frame_index);
  Detections dets;
  try {
    dets = detector.detect(image, frame_index);
  } catch (const std::exception& e) {
    throw std::runtime_error("frame " + std::to_string(frame_index) + ": detector failed: " + e.what());
  }
  if (dets.scores.size() != dets.boxes.size()) dets.scores.resize(dets.boxes.size(), 1.0);
  for (const auto& b : dets.boxes) {
    if (!b.allFinite() || b(2) < b(0) || b(3) < b(1))
      throw std::runtime_error("frame " + std::to_string(frame_index) + ": detector returned an invalid box");
  }

  std::vector<Box> boxes;
  for (const auto& t : tracks_) boxes.push_back(t.box);
  const std::vector<Box> predicted = tracks_.empty() ? std::vector<Box>{} : predictor.predict(boxes, boxes);
  const Association assoc = associate(predicted, dets.boxes, options_.match_threshold);

  for (const auto& [ti, di] : assoc.matches) {
    Track& t = tracks_[static_cast<std::size_t>(ti)];
    t.box = dets.boxes[static_cast<std::size_t>(di)];
    t.score = dets.scores[static_cast<std::size_t>(di)];
    t.status = TrackStatus::kActive;
    t.lost_age = 0;
  }
  for (int ti : assoc.unmatched_tracks) {
    Track& t = tracks_[static_cast<std::size_t>(ti)];
    t.status = TrackStatus::kLost;
    t.lost_age += 1;
    if (options_.lost_proposal == LostProposal::kPredicted) t.box = predicted[static_cast<std::size_t>(ti)];
  }
  tracks_.erase(std::remove_if(tracks_.begin(), tracks_.end(),
                               [&](const Track& t) { return t.lost_age > options_.max_lost_age; }),
                tracks_.end());
  for (int di : assoc.unmatched_detections) {
    Track t;
    t.id = next_id_++;
    t.box = dets.boxes[static_cast<std::size_t>(di)];
    t.score = dets.scores[static_cast<std::size_t>(di)];
    tracks_.push_back(t);
  }

  std::vector<Track> active;
  for (const auto& t : tracks_) {
    if (t.status == TrackStatus::kActive) active.push_back(t);
  }
  return active;
}

SequenceAnnotations track_mot_sequence(const std::vector<Image>& frames, Detector& detector, BoxPredictor& predictor,
                                       const MotTrackerOptions& options) {
  MotTracker tracker(options);
  SequenceAnnotations out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    FrameAnnotations frame;
    for (const auto& t : tracker.step(frames[f], static_cast<int>(f), detector, predictor)) {
      Annotation a;
      a.id = t.id;
      a.box = t.box;
      a.score = t.score;
      frame.push_back(a);
    }
    out.push_back(std::move(frame));
  }
  return out;
}

}  // namespace utt
