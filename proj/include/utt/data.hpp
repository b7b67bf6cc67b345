// Synthetic moving-shape sequences with exact ground truth, plus the
// MOTChallenge-style CSV codec and on-disk sequence layout.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "utt/annotation.hpp"
#include "utt/image.hpp"

namespace utt {

enum class Shape { kRect, kEllipse, kBlob };

Shape parse_shape(const std::string& name);
std::string shape_name(Shape shape);

/// A scripted object; used instead of random sampling when present in a spec.
struct ObjectSpec {
  Shape shape = Shape::kRect;
  double x = 0, y = 0;  // top-left at the spawn frame
  double width = 16, height = 16;
  double vx = 0, vy = 0;  // pixels per frame
  int spawn = 0;
  int despawn = -1;  // exclusive; -1 = end of sequence
  std::uint64_t appearance_seed = 1;
};

struct SceneSpec {
  int canvas_width = 128;
  int canvas_height = 128;
  int min_objects = 2;
  int max_objects = 6;
  int min_frames = 20;
  int max_frames = 60;
  double min_size = 12;
  double max_size = 32;
  double max_speed = 3.0;        // pixels per frame
  double velocity_jitter = 0.3;  // std-dev added to the velocity each frame
  std::vector<Shape> palette{Shape::kRect, Shape::kEllipse, Shape::kBlob};
  double texture_amplitude = 0.25;
  double spawn_probability = 0.5;  // chance a non-target object has a late spawn or early exit
  bool allow_occlusion = true;
  std::uint64_t seed = 0;
  std::vector<ObjectSpec> scripted;  // overrides random objects when non-empty
  int frames = 0;                    // fixed length when > 0

  /// Throws SpecError on an impossible or inconsistent spec.
  void validate() const;
};

struct AnnotatedSequence {
  std::string name;
  int width = 0;
  int height = 0;
  std::vector<Image> frames;
  SequenceAnnotations gt;
  /// Id of an object present in every frame; the single-object target.
  int sot_target = 0;

  int length() const { return static_cast<int>(frames.size()); }
  /// Box of `id` in `frame`, if present.
  std::optional<Box> box_of(int id, int frame) const;
  std::vector<int> ids() const;
};

AnnotatedSequence generate_sequence(const SceneSpec& spec);

/// `count` sequences whose seeds derive from `spec.seed`.
std::vector<AnnotatedSequence> generate_dataset(const SceneSpec& spec, int count);

/// MOTChallenge ground truth: frame,id,x,y,w,h,conf,class,vis (1-based frames).
/// Also accepts result files (frame,id,x,y,w,h,score,-1,-1,-1).
SequenceAnnotations read_annotations(const std::string& path);
SequenceAnnotations parse_annotations(const std::string& text);

/// frame,id,x,y,w,h,score,-1,-1,-1 with six decimals.
void write_results(const std::string& path, const SequenceAnnotations& results);
std::string format_results(const SequenceAnnotations& results);
/// Ground-truth flavour: frame,id,x,y,w,h,1,class,visibility.
void write_ground_truth(const std::string& path, const SequenceAnnotations& gt);

/// One x,y,w,h line per frame.
void write_sot_results(const std::string& path, const std::vector<Box>& boxes);
std::vector<Box> read_sot_results(const std::string& path);

/// Writes frames as PNG (img/000001.png ...), gt/gt.txt and manifest.json.
void save_sequence(const std::filesystem::path& dir, const AnnotatedSequence& seq);
AnnotatedSequence load_sequence(const std::filesystem::path& dir);

/// Index of sequence directories written by save_sequence.
void write_dataset_manifest(const std::filesystem::path& dir,
                            const std::vector<std::string>& sequences);
/// Every sequence listed in `dir`/manifest.json, in listed order.
std::vector<AnnotatedSequence> load_dataset(const std::filesystem::path& dir);

}  // namespace utt
