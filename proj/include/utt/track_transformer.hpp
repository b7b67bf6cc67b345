// The track transformer: target decoder, proposal decoder and the L-fold
// target transformer with a delta box head.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "utt/autodiff.hpp"
#include "utt/geometry.hpp"
#include "utt/neural_core.hpp"

namespace utt {

enum class TrackMode { kSot, kMot };

/// Which frame the target decoder cross-attends to.
enum class DecoderContext { kTracking, kReference };

struct TrackerConfig {
  BackboneConfig backbone;
  AttentionConfig attention;
  int pool_size = 7;   // K
  int iterations = 3;  // L
  DecoderContext decoder_context = DecoderContext::kTracking;
  bool detach_proposals = true;
  double max_log_scale = 4.0;
  std::uint64_t init_seed = 0;

  int channels() const { return attention.model_dim; }

  void validate() const {
    backbone.validate();
    attention.validate();
    if (backbone.output_dim != attention.model_dim)
      throw ConfigError("tracker: backbone output_dim must equal attention model_dim");
    if (pool_size <= 0) throw ConfigError("tracker: pool_size must be >= 1");
    if (iterations < 0) throw ConfigError("tracker: iterations must be >= 0");
    if (attention.model_dim % 4 != 0)
      throw ConfigError("tracker: model_dim must divide by 4 for positional encoding");
    if (attention.model_dim < 4) throw ConfigError("tracker: model_dim must be >= 4");
  }
};

template <typename Scalar>
struct TrackOutput {
  /// Image-frame N x 4 boxes; index 0 is the proposal in SOT mode.
  std::vector<ad::Var<Scalar>> boxes;
  ad::Var<Scalar> embeddings;
  std::optional<HeatmapPair<Scalar>> heatmaps;
  int expanded_proposals = 0;

  BoxSet<Scalar> final_boxes() const { return BoxSet<Scalar>(boxes.back().value()); }
  BoxSet<Scalar> boxes_at(std::size_t i) const { return BoxSet<Scalar>(boxes.at(i).value()); }
};

template <typename Scalar>
struct TargetDecoder {
  MultiHeadAttention<Scalar> mca;
  Norm<Scalar> norm_context;
  FeedForward<Scalar> ffn;
  Norm<Scalar> norm_out;
  int pool_size = 7;

  TargetDecoder() = default;
  TargetDecoder(const TrackerConfig& cfg, Initializer& init)
      : mca(cfg.attention, init),
        norm_context(cfg.channels()),
        ffn(cfg.channels(), cfg.attention.ffn_hidden, init),
        norm_out(cfg.channels()),
        pool_size(cfg.pool_size) {}

  /// RoI-pooled reference features for image-frame `boxes`, N x C.
  ad::Var<Scalar> pooled(const FeatureMap<Scalar>& ref, const Mat<Scalar>& boxes) const {
    auto grid_boxes = ad::constant<Scalar>(boxes / static_cast<Scalar>(ref.stride));
    auto crops = ad::roi_align(ref.values, ref.height, ref.width, grid_boxes, pool_size);
    return ad::mean_pool_rows(crops, static_cast<Eigen::Index>(pool_size) * pool_size);
  }

  ad::Var<Scalar> operator()(const FeatureMap<Scalar>& ref, const Mat<Scalar>& boxes,
                             const FeatureMap<Scalar>& context) const {
    if (boxes.rows() == 0) return ad::constant<Scalar>(Mat<Scalar>(0, ref.channels()));
    auto f = pooled(ref, boxes);
    auto fc = norm_context(ad::add(f, mca.cross(f, context.values)));
    return norm_out(ad::add(fc, ffn(fc)));
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    mca.collect(out, prefix + ".mca");
    norm_context.collect(out, prefix + ".norm_context");
    ffn.collect(out, prefix + ".ffn");
    norm_out.collect(out, prefix + ".norm_out");
  }
};

template <typename Scalar>
struct ProposalDecoder {
  Conv2d<Scalar> conv_hidden;
  Conv2d<Scalar> conv_out;

  ProposalDecoder() = default;
  ProposalDecoder(const TrackerConfig& cfg, Initializer& init)
      : conv_hidden(cfg.channels(), cfg.channels() / 2, 3, 1, init),
        conv_out(cfg.channels() / 2, 2, 3, 1, init) {}

  /// Corner logits, (N*H*W) x 2. The correlation is scaled by 1/sqrt(C), as
  /// in dot-product attention, before the convolutions.
  ad::Var<Scalar> logits(const ad::Var<Scalar>& targets, const FeatureMap<Scalar>& frame) const {
    const int n = static_cast<int>(targets.rows());
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(targets.cols()));
    auto correlated = ad::scale(ad::corr_att(targets, frame.values), scale);
    int h = 0, w = 0;
    auto hidden = ad::relu(conv_hidden(correlated, n, frame.height, frame.width, &h, &w));
    return conv_out(hidden, n, h, w, &h, &w);
  }

  /// Spatial softmax per target and corner channel.
  static HeatmapPair<Scalar> heatmaps_from_logits(const ad::Var<Scalar>& logits, Eigen::Index n,
                                                  int height, int width) {
    auto per_channel = ad::batched_transpose(logits, n);  // 2N x HW
    return HeatmapPair<Scalar>{ad::softmax_rows(per_channel), height, width};
  }

  /// Returns image-frame proposals (N x 4) and the heatmaps that produced them.
  std::pair<ad::Var<Scalar>, HeatmapPair<Scalar>> operator()(
      const ad::Var<Scalar>& targets, const FeatureMap<Scalar>& frame) const {
    auto heat = heatmaps_from_logits(logits(targets, frame), targets.rows(), frame.height,
                                     frame.width);
    auto grid_boxes = ad::soft_argmax_box(heat.values, frame.height, frame.width);
    return {ad::scale(grid_boxes, static_cast<Scalar>(frame.stride)), heat};
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    conv_hidden.collect(out, prefix + ".conv_hidden");
    conv_out.collect(out, prefix + ".conv_out");
  }
};

template <typename Scalar>
struct BoxHead {
  Linear<Scalar> hidden;
  Linear<Scalar> out;

  BoxHead() = default;
  BoxHead(int channels, Initializer& init)
      : hidden(channels, channels, init), out(channels, 4, init, /*zero=*/true) {}

  ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const { return out(ad::relu(hidden(x))); }

  void collect(ParameterList<Scalar>& out_list, const std::string& prefix) const {
    hidden.collect(out_list, prefix + ".hidden");
    out.collect(out_list, prefix + ".out");
  }
};

template <typename Scalar>
struct TargetTransformerLayer {
  MultiHeadAttention<Scalar> msa;
  Norm<Scalar> norm_attention;
  Linear<Scalar> correlation_fc;  // K*K*C -> C
  Norm<Scalar> norm_correlation;
  FeedForward<Scalar> ffn;
  Norm<Scalar> norm_out;
  BoxHead<Scalar> box_head;
  int pool_size = 7;
  Scalar max_log_scale = Scalar(4);

  TargetTransformerLayer() = default;
  TargetTransformerLayer(const TrackerConfig& cfg, Initializer& init)
      : msa(cfg.attention, init),
        norm_attention(cfg.channels()),
        correlation_fc(cfg.pool_size * cfg.pool_size * cfg.channels(), cfg.channels(), init),
        norm_correlation(cfg.channels()),
        ffn(cfg.channels(), cfg.attention.ffn_hidden, init),
        norm_out(cfg.channels()),
        box_head(cfg.channels(), init),
        pool_size(cfg.pool_size),
        max_log_scale(static_cast<Scalar>(cfg.max_log_scale)) {}

  struct Result {
    ad::Var<Scalar> targets;
    ad::Var<Scalar> boxes;
  };

  /// One refinement: crop K x K search features at the proposals, update the
  /// target embeddings and regress deltas. Proposals narrower than one stride
  /// are widened to one stride first; `expanded` counts them.
  Result operator()(const ad::Var<Scalar>& targets, const ad::Var<Scalar>& proposals,
                    const FeatureMap<Scalar>& frame, int* expanded = nullptr) const {
    const Scalar stride = static_cast<Scalar>(frame.stride);
    int widened = 0;
    auto boxes = ad::enforce_min_size(proposals, stride, &widened);
    if (expanded) *expanded += widened;
    const Eigen::Index n = targets.rows();
    const Eigen::Index bins = static_cast<Eigen::Index>(pool_size) * pool_size;

    auto search = ad::roi_align(frame.values, frame.height, frame.width,
                                ad::scale(boxes, Scalar(1) / stride), pool_size);
    auto pos = ad::constant<Scalar>(sine_pos_encoding(
        BoxSet<Scalar>(boxes.value()), static_cast<int>(targets.cols()),
        static_cast<double>(frame.width) * frame.stride,
        static_cast<double>(frame.height) * frame.stride));
    auto fa = norm_attention(ad::add(targets, msa.self(targets, pos)));
    auto correlated = ad::corr_att_per_target(fa, search, bins);
    auto fd = norm_correlation(
        ad::add(fa, correlation_fc(ad::reshape(correlated, n, bins * targets.cols()))));
    auto fo = norm_out(ad::add(fd, ffn(fd)));
    auto refined = ad::apply_deltas(boxes, box_head(fo), max_log_scale);
    return {fo, refined};
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    msa.collect(out, prefix + ".msa");
    norm_attention.collect(out, prefix + ".norm_attention");
    correlation_fc.collect(out, prefix + ".correlation_fc");
    norm_correlation.collect(out, prefix + ".norm_correlation");
    ffn.collect(out, prefix + ".ffn");
    norm_out.collect(out, prefix + ".norm_out");
    box_head.collect(out, prefix + ".box_head");
  }
};

template <typename Scalar>
class TrackTransformer {
 public:
  TrackTransformer() = default;
  TrackTransformer(const TrackerConfig& cfg, Initializer& init)
      : cfg_(cfg), decoder_(cfg, init), proposal_(cfg, init) {
    for (int i = 0; i < cfg.iterations; ++i) layers_.emplace_back(cfg, init);
  }

  const TrackerConfig& config() const { return cfg_; }
  const TargetDecoder<Scalar>& target_decoder() const { return decoder_; }
  const ProposalDecoder<Scalar>& proposal_decoder() const { return proposal_; }
  const std::vector<TargetTransformerLayer<Scalar>>& layers() const { return layers_; }
  std::vector<TargetTransformerLayer<Scalar>>& mutable_layers() { return layers_; }

  /// Predicts per-iteration boxes for `ref_boxes` (image frame) in the
  /// tracking frame. MOT mode starts from `mot_proposals`; SOT mode starts from
  /// the proposal decoder and records its output at index 0.
  TrackOutput<Scalar> forward(const FeatureMap<Scalar>& track, const FeatureMap<Scalar>& ref,
                              const Mat<Scalar>& ref_boxes, TrackMode mode,
                              const std::optional<Mat<Scalar>>& mot_proposals = std::nullopt) const {
    if (mode == TrackMode::kMot && !mot_proposals)
      throw UsageError("track transformer: MOT mode requires proposals");
    if (mode == TrackMode::kMot && mot_proposals->rows() != ref_boxes.rows())
      throw UsageError("track transformer: one proposal per reference box is required");
    if (track.channels() != ref.channels())
      throw std::invalid_argument("track transformer: feature channel mismatch");

    TrackOutput<Scalar> out;
    const Eigen::Index n = ref_boxes.rows();
    const FeatureMap<Scalar>& context =
        cfg_.decoder_context == DecoderContext::kTracking ? track : ref;
    auto targets = decoder_(ref, ref_boxes, context);
    if (n == 0) {
      const std::size_t count = layers_.size() + (mode == TrackMode::kSot ? 1 : 0);
      out.boxes.assign(count, ad::constant<Scalar>(Mat<Scalar>(0, 4)));
      out.embeddings = targets;
      return out;
    }

    ad::Var<Scalar> proposals;
    if (mode == TrackMode::kSot) {
      auto [boxes, heat] = proposal_(targets, track);
      out.boxes.push_back(boxes);
      out.heatmaps = heat;
      proposals = boxes;
    } else {
      proposals = ad::constant<Scalar>(*mot_proposals);
    }
    for (const auto& layer : layers_) {
      if (cfg_.detach_proposals) proposals = ad::detach(proposals);
      auto step = layer(targets, proposals, track, &out.expanded_proposals);
      targets = step.targets;
      proposals = step.boxes;
      out.boxes.push_back(proposals);
    }
    out.embeddings = targets;
    return out;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    decoder_.collect(out, prefix + ".target_decoder");
    proposal_.collect(out, prefix + ".proposal_decoder");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].collect(out, prefix + ".layer" + std::to_string(i));
    }
  }

 private:
  TrackerConfig cfg_;
  TargetDecoder<Scalar> decoder_;
  ProposalDecoder<Scalar> proposal_;
  std::vector<TargetTransformerLayer<Scalar>> layers_;
};

/// Backbone plus track transformer with a canonical parameter list.
template <typename Scalar>
class UnifiedTracker {
 public:
  explicit UnifiedTracker(const TrackerConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Initializer init(cfg.init_seed);
    backbone_ = Backbone<Scalar>(cfg.backbone, init);
    transformer_ = TrackTransformer<Scalar>(cfg, init);
    backbone_.collect(params_, "backbone");
    transformer_.collect(params_, "transformer");
  }

  // Parameters are shared handles; copies would alias the same weights.
  UnifiedTracker(const UnifiedTracker&) = delete;
  UnifiedTracker& operator=(const UnifiedTracker&) = delete;
  UnifiedTracker(UnifiedTracker&&) noexcept = default;
  UnifiedTracker& operator=(UnifiedTracker&&) noexcept = default;

  const TrackerConfig& config() const { return cfg_; }
  const Backbone<Scalar>& backbone() const { return backbone_; }
  const TrackTransformer<Scalar>& transformer() const { return transformer_; }
  TrackTransformer<Scalar>& mutable_transformer() { return transformer_; }
  const ParameterList<Scalar>& parameters() const { return params_; }

  FeatureMap<Scalar> features(const Image& image) const { return backbone_.forward(image); }

  TrackOutput<Scalar> forward(const FeatureMap<Scalar>& track, const FeatureMap<Scalar>& ref,
                              const Mat<Scalar>& ref_boxes, TrackMode mode,
                              const std::optional<Mat<Scalar>>& mot_proposals = std::nullopt) const {
    return transformer_.forward(track, ref, ref_boxes, mode, mot_proposals);
  }

  void zero_grad() const {
    for (const auto& [name, p] : params_) p.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, p] : params_) total += static_cast<std::size_t>(p.size());
    return total;
  }

 private:
  TrackerConfig cfg_;
  Backbone<Scalar> backbone_;
  TrackTransformer<Scalar> transformer_;
  ParameterList<Scalar> params_;
};

}  // namespace utt
