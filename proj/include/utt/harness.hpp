// Experiment orchestration behind the `utt` command line.
#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "utt/config.hpp"
#include "utt/data.hpp"
#include "utt/evaluation.hpp"
#include "utt/track_transformer.hpp"

namespace utt {

/// Training split: generated from data.scene (seed data.scene.seed) or loaded
/// from data.dataset_dir/train.
std::vector<AnnotatedSequence> train_sequences(const ExperimentConfig& config);
/// Held-out split: generated with data.eval_seed or loaded from data.dataset_dir/eval.
std::vector<AnnotatedSequence> eval_sequences(const ExperimentConfig& config);

/// Trains a fresh model for config.train.iterations unified steps.
UnifiedTracker<double> train_model(const ExperimentConfig& config, const std::vector<AnnotatedSequence>& data);

/// Tracks each sequence's SOT target from its first-frame box.
std::vector<std::vector<Box>> track_sot(const UnifiedTracker<double>& model,
                                        const std::vector<AnnotatedSequence>& data);
SotReport evaluate_sot(const std::vector<std::vector<Box>>& predictions, const std::vector<AnnotatedSequence>& data,
                       double center_radius = 20.0, std::vector<SotReport>* per_sequence = nullptr);

/// Online MOT with the configured detector and the model as box predictor.
std::vector<SequenceAnnotations> track_mot(const UnifiedTracker<double>& model,
                                           const std::vector<AnnotatedSequence>& data,
                                           const ExperimentConfig& config);
MotReport evaluate_mot(const std::vector<SequenceAnnotations>& results, const std::vector<AnnotatedSequence>& data,
                       double iou_gate = 0.5, std::vector<MotReport>* per_sequence = nullptr);

/// Output directory after --out and the UTT_OUT_ROOT environment variable.
std::filesystem::path resolve_output_dir(const std::filesystem::path& configured);

/// Runs one subcommand (args exclude the program name). Returns the exit
/// status; a nonzero status always comes with <out>/error.json.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace utt
