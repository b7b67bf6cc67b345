// Saving and restoring whole trackers: architecture in the manifest metadata,
// weights as named tensors.
#pragma once

#include <filesystem>
#include <json.hpp>

#include "utt/checkpoint.hpp"
#include "utt/track_transformer.hpp"

namespace utt {

nlohmann::json tracker_config_to_json(const TrackerConfig& cfg);
/// Missing keys keep their defaults; the result is validated.
TrackerConfig tracker_config_from_json(const nlohmann::json& j);

template <typename Scalar>
void save_model(const std::filesystem::path& dir, const UnifiedTracker<Scalar>& model,
                TensorDType dtype = TensorDType::kFloat32) {
  Checkpoint ckpt;
  ckpt.dtype = dtype;
  ckpt.metadata = nlohmann::json{{"kind", "model"}, {"tracker", tracker_config_to_json(model.config())}}.dump();
  append_parameters(ckpt, model.parameters());
  write_checkpoint(dir, ckpt);
}

template <typename Scalar>
UnifiedTracker<Scalar> load_model(const std::filesystem::path& dir) {
  const Checkpoint ckpt = read_checkpoint(dir);
  const auto meta = nlohmann::json::parse(ckpt.metadata);
  if (!meta.contains("tracker")) throw FormatError("checkpoint: no tracker configuration in " + dir.string());
  UnifiedTracker<Scalar> model(tracker_config_from_json(meta.at("tracker")));
  load_parameters(ckpt, model.parameters());
  return model;
}

}  // namespace utt
