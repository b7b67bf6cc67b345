#include "utt/model_io.hpp"

namespace utt {

using json = nlohmann::json;

json tracker_config_to_json(const TrackerConfig& cfg) {
  return {{"backbone_widths", cfg.backbone.widths},
          {"stride", cfg.backbone.stride},
          {"channels", cfg.attention.model_dim},
          {"heads", cfg.attention.heads},
          {"ffn_hidden", cfg.attention.ffn_hidden},
          {"pool_size", cfg.pool_size},
          {"iterations", cfg.iterations},
          {"decoder_context", cfg.decoder_context == DecoderContext::kTracking ? "tracking" : "reference"},
          {"detach_proposals", cfg.detach_proposals},
          {"max_log_scale", cfg.max_log_scale},
          {"init_seed", cfg.init_seed}};
}

TrackerConfig tracker_config_from_json(const json& j) {
  TrackerConfig cfg;
  cfg.backbone.widths = j.value("backbone_widths", cfg.backbone.widths);
  cfg.backbone.stride = j.value("stride", cfg.backbone.stride);
  cfg.attention.model_dim = j.value("channels", cfg.attention.model_dim);
  cfg.backbone.output_dim = cfg.attention.model_dim;
  cfg.attention.heads = j.value("heads", cfg.attention.heads);
  cfg.attention.ffn_hidden = j.value("ffn_hidden", cfg.attention.ffn_hidden);
  cfg.pool_size = j.value("pool_size", cfg.pool_size);
  cfg.iterations = j.value("iterations", cfg.iterations);
  const std::string context = j.value("decoder_context", std::string("tracking"));
  if (context == "tracking") {
    cfg.decoder_context = DecoderContext::kTracking;
  } else if (context == "reference") {
    cfg.decoder_context = DecoderContext::kReference;
  } else {
    throw ConfigError("decoder_context must be 'tracking' or 'reference', got '" + context + "'");
  }
  cfg.detach_proposals = j.value("detach_proposals", cfg.detach_proposals);
  cfg.max_log_scale = j.value("max_log_scale", cfg.max_log_scale);
  cfg.init_seed = j.value("init_seed", cfg.init_seed);
  cfg.validate();
  return cfg;
}

}  // namespace utt
