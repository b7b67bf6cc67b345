// Experiment configuration: one JSON tree shared by every subcommand.
#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "utt/bench.hpp"
#include "utt/data.hpp"
#include "utt/online_tracking.hpp"
#include "utt/track_transformer.hpp"
#include "utt/training.hpp"

namespace utt {

enum class DetectorKind { kOracle, kNoisy };

struct DetectorConfig {
  DetectorKind kind = DetectorKind::kOracle;
  NoisyDetectorOptions noisy;
};

struct DataConfig {
  SceneSpec scene;
  int train_sequences = 20;
  int eval_sequences = 5;
  std::uint64_t eval_seed = 1000;  // held-out set; the training set uses scene.seed
  std::filesystem::path dataset_dir;  // load sequences from disk instead of generating
};

struct EvalConfig {
  double iou_gate = 0.5;
  double center_radius = 20.0;
};

struct BenchConfig {
  std::vector<int> sizes{16, 32, 64};
  std::vector<int> targets{1, 8};
  int channels = 64;
  int pool_size = 7;
  BenchOptions options;
};

// At stride 8 the synthetic objects span two or three feature cells, too
// coarse for the crop-based refinement; experiments default to stride 4.
inline TrackerConfig experiment_tracker() {
  TrackerConfig t;
  t.backbone.stride = 4;
  return t;
}

struct ExperimentConfig {
  TrainMode mode = TrainMode::kUnified;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  TrackerConfig tracker = experiment_tracker();
  TrainOptions train;
  long checkpoint_every = 0;  // 0: only the final state
  DataConfig data;
  MotTrackerOptions tracking;
  DetectorConfig detector;
  EvalConfig eval;
  BenchConfig bench;
};

/// Every key with its default value.
nlohmann::ordered_json default_config_tree();

/// Merges `tree` over the defaults, rejecting unknown keys (naming the nearest
/// valid one), type mismatches and out-of-range values with ConfigError.
ExperimentConfig validate_config(const nlohmann::ordered_json& tree);

/// Resolved configuration as a full tree; validate_config(to_json(c)) == c.
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);

/// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::ordered_json& tree, const std::string& assignment);

/// Reads a JSON config file (ParseError with the line on malformed input).
nlohmann::ordered_json read_config_file(const std::filesystem::path& path);

std::size_t edit_distance(const std::string& a, const std::string& b);

}  // namespace utt
