#include "utt/config.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "utt/errors.hpp"
#include "utt/model_io.hpp"

namespace utt {

using ojson = nlohmann::ordered_json;

namespace {

std::string lost_name(LostProposal p) { return p == LostProposal::kPredicted ? "predicted" : "last_box"; }

ojson object_spec_to_json(const ObjectSpec& o) {
  return {{"shape", shape_name(o.shape)}, {"x", o.x},           {"y", o.y},
          {"width", o.width},             {"height", o.height}, {"vx", o.vx},
          {"vy", o.vy},                   {"spawn", o.spawn},   {"despawn", o.despawn},
          {"appearance_seed", o.appearance_seed}};
}

void collect_paths(const ojson& tree, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : tree.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    out.push_back(path);
    if (value.is_object()) collect_paths(value, path, out);
  }
}

std::string last_segment(const std::string& path) {
  const auto dot = path.rfind('.');
  return dot == std::string::npos ? path : path.substr(dot + 1);
}

std::string parent_of(const std::string& path) {
  const auto dot = path.rfind('.');
  return dot == std::string::npos ? "" : path.substr(0, dot);
}

std::string nearest_key(const std::string& path, const ojson& defaults) {
  std::vector<std::string> candidates;
  collect_paths(defaults, "", candidates);
  const std::string key = last_segment(path), parent = parent_of(path);
  std::string best;
  std::size_t best_score = std::numeric_limits<std::size_t>::max();
  for (const auto& c : candidates) {
    // A sibling with a similar name beats the same name elsewhere in the tree.
    std::size_t score = edit_distance(path, c);
    score = std::min(score, edit_distance(key, last_segment(c)) + (parent_of(c) == parent ? 0 : 1));
    if (score < best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

std::string type_name(const ojson& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_integer()) return "an integer";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_array()) return "a list";
  if (v.is_object()) return "an object";
  return "null";
}

bool compatible(const ojson& def, const ojson& value) {
  if (def.is_boolean()) return value.is_boolean();
  if (def.is_number_integer()) return value.is_number_integer();
  if (def.is_number()) return value.is_number();
  if (def.is_string()) return value.is_string();
  if (def.is_array()) return value.is_array();
  if (def.is_object()) return value.is_object();
  return true;
}

void merge(ojson& target, const ojson& user, const std::string& prefix, const ojson& root) {
  if (!user.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!target.contains(key)) {
      throw ConfigError("config: unknown key '" + path + "'; did you mean '" + nearest_key(path, root) + "'?");
    }
    ojson& slot = target[key];
    if (!compatible(slot, value)) {
      throw ConfigError("config: '" + path + "' expects " + type_name(slot) + ", got " + type_name(value));
    }
    if (slot.is_object()) {
      merge(slot, value, path, root);
    } else {
      slot = value;
    }
  }
}

void require(bool ok, const std::string& key, const std::string& what, const ojson& got) {
  if (!ok) throw ConfigError("config: '" + key + "' " + what + " (got " + got.dump() + ")");
}

template <typename T>
std::vector<T> int_list(const ojson& v, const std::string& key) {
  std::vector<T> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) throw ConfigError("config: '" + key + "' must be a list of integers");
    out.push_back(e.get<T>());
  }
  return out;
}

ObjectSpec object_spec_from_json(const ojson& j, const std::string& key) {
  static const ojson defaults = object_spec_to_json(ObjectSpec{});
  ojson merged = defaults;
  merge(merged, j, key, defaults);
  ObjectSpec o;
  o.shape = parse_shape(merged["shape"].get<std::string>());
  o.x = merged["x"];
  o.y = merged["y"];
  o.width = merged["width"];
  o.height = merged["height"];
  o.vx = merged["vx"];
  o.vy = merged["vy"];
  o.spawn = merged["spawn"];
  o.despawn = merged["despawn"];
  o.appearance_seed = merged["appearance_seed"];
  return o;
}

}  // namespace

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

ojson config_to_json(const ExperimentConfig& c) {
  ojson model;
  const auto tracker = tracker_config_to_json(c.tracker);
  for (const char* key : {"backbone_widths", "stride", "channels", "heads", "ffn_hidden", "pool_size", "iterations",
                          "decoder_context", "detach_proposals", "max_log_scale"}) {
    model[key] = tracker.at(key);
  }

  const TrainOptions& t = c.train;
  ojson train = {{"iterations", t.iterations},
                 {"lr", t.lr},
                 {"lr_min", t.lr_min},
                 {"warmup", t.warmup},
                 {"weight_decay", t.weight_decay},
                 {"grad_clip", t.grad_clip},
                 {"sot_batch", t.sot_batch},
                 {"mot_batch", t.mot_batch},
                 {"max_frame_interval", t.max_frame_interval},
                 {"mot_frame_interval", t.mot_frame_interval},
                 {"proposal_sigma", t.proposal_sigma},
                 {"min_proposal_iou", t.min_proposal_iou},
                 {"proposal_attempts", t.proposal_attempts},
                 {"augment", t.augment},
                 {"lambda_giou", t.loss.lambda_giou},
                 {"lambda_l1", t.loss.lambda_l1},
                 {"divergence_threshold", t.divergence_threshold},
                 {"ema_decay", t.ema_decay},
                 {"checkpoint_every", c.checkpoint_every}};

  const SceneSpec& s = c.data.scene;
  ojson palette = ojson::array();
  for (Shape shape : s.palette) palette.push_back(shape_name(shape));
  ojson scripted = ojson::array();
  for (const auto& o : s.scripted) scripted.push_back(object_spec_to_json(o));
  ojson scene = {{"canvas_width", s.canvas_width},
                 {"canvas_height", s.canvas_height},
                 {"min_objects", s.min_objects},
                 {"max_objects", s.max_objects},
                 {"min_frames", s.min_frames},
                 {"max_frames", s.max_frames},
                 {"frames", s.frames},
                 {"min_size", s.min_size},
                 {"max_size", s.max_size},
                 {"max_speed", s.max_speed},
                 {"velocity_jitter", s.velocity_jitter},
                 {"palette", palette},
                 {"texture_amplitude", s.texture_amplitude},
                 {"spawn_probability", s.spawn_probability},
                 {"allow_occlusion", s.allow_occlusion},
                 {"seed", s.seed},
                 {"scripted", scripted}};
  ojson data = {{"train_sequences", c.data.train_sequences},
                {"eval_sequences", c.data.eval_sequences},
                {"eval_seed", c.data.eval_seed},
                {"dataset_dir", c.data.dataset_dir.string()},
                {"scene", scene}};

  const auto& n = c.detector.noisy;
  ojson tracking = {{"match_threshold", c.tracking.match_threshold},
                    {"max_lost_age", c.tracking.max_lost_age},
                    {"lost_proposal", lost_name(c.tracking.lost_proposal)},
                    {"detector",
                     {{"kind", c.detector.kind == DetectorKind::kNoisy ? "noisy" : "oracle"},
                      {"jitter", n.jitter},
                      {"drop_rate", n.drop_rate},
                      {"false_positive_rate", n.false_positive_rate},
                      {"seed", n.seed}}}};

  ojson bench = {{"sizes", c.bench.sizes},
                 {"targets", c.bench.targets},
                 {"channels", c.bench.channels},
                 {"pool_size", c.bench.pool_size},
                 {"samples", c.bench.options.samples},
                 {"min_sample_ms", c.bench.options.min_sample_ms},
                 {"seed", c.bench.options.seed}};

  return {{"mode", train_mode_name(c.mode)},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"model", model},
          {"train", train},
          {"data", data},
          {"tracking", tracking},
          {"eval", {{"iou_gate", c.eval.iou_gate}, {"center_radius", c.eval.center_radius}}},
          {"bench", bench}};
}

ojson default_config_tree() { return config_to_json(ExperimentConfig{}); }

ExperimentConfig validate_config(const ojson& tree) {
  const ojson defaults = default_config_tree();
  ojson j = defaults;
  merge(j, tree.is_null() ? ojson::object() : tree, "", defaults);

  ExperimentConfig c;
  const std::string mode = j["mode"];
  require(mode == "sot_only" || mode == "mot_only" || mode == "unified", "mode",
          "must be one of sot_only, mot_only, unified", j["mode"]);
  c.mode = parse_train_mode(mode);
  require(j["seed"].is_number_unsigned() || j["seed"].get<long long>() >= 0, "seed", "must be >= 0", j["seed"]);
  c.seed = j["seed"].get<std::uint64_t>();
  c.output_dir = j["output_dir"].get<std::string>();
  require(!c.output_dir.empty(), "output_dir", "must not be empty", j["output_dir"]);

  const ojson& m = j["model"];
  require(m["pool_size"].get<int>() >= 1, "model.pool_size", "must be >= 1", m["pool_size"]);
  require(m["iterations"].get<int>() >= 1, "model.iterations", "must be >= 1", m["iterations"]);
  require(m["channels"].get<int>() >= 4, "model.channels", "must be >= 4", m["channels"]);
  require(m["heads"].get<int>() >= 1, "model.heads", "must be >= 1", m["heads"]);
  require(m["max_log_scale"].get<double>() > 0.0, "model.max_log_scale", "must be > 0", m["max_log_scale"]);
  nlohmann::json tracker = nlohmann::json::parse(m.dump());
  tracker["backbone_widths"] = int_list<int>(m["backbone_widths"], "model.backbone_widths");
  tracker["init_seed"] = c.seed;
  c.tracker = tracker_config_from_json(tracker);

  const ojson& t = j["train"];
  TrainOptions& o = c.train;
  o.mode = c.mode;
  o.seed = c.seed;
  o.iterations = t["iterations"];
  o.lr = t["lr"];
  o.lr_min = t["lr_min"];
  o.warmup = t["warmup"];
  o.weight_decay = t["weight_decay"];
  o.grad_clip = t["grad_clip"];
  o.sot_batch = t["sot_batch"];
  o.mot_batch = t["mot_batch"];
  o.max_frame_interval = t["max_frame_interval"];
  o.mot_frame_interval = t["mot_frame_interval"];
  o.proposal_sigma = t["proposal_sigma"];
  o.min_proposal_iou = t["min_proposal_iou"];
  o.proposal_attempts = t["proposal_attempts"];
  o.augment = t["augment"];
  o.loss.lambda_giou = t["lambda_giou"];
  o.loss.lambda_l1 = t["lambda_l1"];
  o.divergence_threshold = t["divergence_threshold"];
  o.ema_decay = t["ema_decay"];
  c.checkpoint_every = t["checkpoint_every"];
  require(o.iterations >= 0, "train.iterations", "must be >= 0", t["iterations"]);
  require(o.lr > 0.0, "train.lr", "must be > 0", t["lr"]);
  require(o.lr_min >= 0.0 && o.lr_min <= o.lr, "train.lr_min", "must lie in [0, train.lr]", t["lr_min"]);
  require(o.warmup >= 0, "train.warmup", "must be >= 0", t["warmup"]);
  require(o.grad_clip >= 0.0, "train.grad_clip", "must be >= 0", t["grad_clip"]);
  require(o.ema_decay >= 0.0 && o.ema_decay < 1.0, "train.ema_decay", "must lie in [0, 1)", t["ema_decay"]);
  require(o.divergence_threshold > 0.0, "train.divergence_threshold", "must be > 0", t["divergence_threshold"]);
  require(c.checkpoint_every >= 0, "train.checkpoint_every", "must be >= 0", t["checkpoint_every"]);
  o.validate();

  const ojson& d = j["data"];
  c.data.train_sequences = d["train_sequences"];
  c.data.eval_sequences = d["eval_sequences"];
  c.data.eval_seed = d["eval_seed"];
  c.data.dataset_dir = d["dataset_dir"].get<std::string>();
  require(c.data.train_sequences >= 1, "data.train_sequences", "must be >= 1", d["train_sequences"]);
  require(c.data.eval_sequences >= 1, "data.eval_sequences", "must be >= 1", d["eval_sequences"]);
  const ojson& s = d["scene"];
  SceneSpec& sc = c.data.scene;
  sc.canvas_width = s["canvas_width"];
  sc.canvas_height = s["canvas_height"];
  sc.min_objects = s["min_objects"];
  sc.max_objects = s["max_objects"];
  sc.min_frames = s["min_frames"];
  sc.max_frames = s["max_frames"];
  sc.frames = s["frames"];
  sc.min_size = s["min_size"];
  sc.max_size = s["max_size"];
  sc.max_speed = s["max_speed"];
  sc.velocity_jitter = s["velocity_jitter"];
  sc.palette.clear();
  for (const auto& p : s["palette"]) {
    if (!p.is_string()) throw ConfigError("config: 'data.scene.palette' must be a list of shape names");
    try {
      sc.palette.push_back(parse_shape(p.get<std::string>()));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: 'data.scene.palette': ") + e.what());
    }
  }
  sc.texture_amplitude = s["texture_amplitude"];
  sc.spawn_probability = s["spawn_probability"];
  sc.allow_occlusion = s["allow_occlusion"];
  sc.seed = s["seed"];
  sc.scripted.clear();
  for (std::size_t i = 0; i < s["scripted"].size(); ++i) {
    sc.scripted.push_back(object_spec_from_json(s["scripted"][i], "data.scene.scripted[" + std::to_string(i) + "]"));
  }
  try {
    sc.validate();
  } catch (const SpecError& e) {
    throw ConfigError(std::string("config: data.scene: ") + e.what());
  }

  const ojson& tr = j["tracking"];
  c.tracking.match_threshold = tr["match_threshold"];
  c.tracking.max_lost_age = tr["max_lost_age"];
  const std::string lost = tr["lost_proposal"];
  require(lost == "last_box" || lost == "predicted", "tracking.lost_proposal", "must be last_box or predicted",
          tr["lost_proposal"]);
  c.tracking.lost_proposal = lost == "predicted" ? LostProposal::kPredicted : LostProposal::kLastBox;
  require(c.tracking.match_threshold > 0.0 && c.tracking.match_threshold <= 1.0, "tracking.match_threshold",
          "must lie in (0, 1]", tr["match_threshold"]);
  require(c.tracking.max_lost_age >= 0, "tracking.max_lost_age", "must be >= 0", tr["max_lost_age"]);
  const ojson& det = tr["detector"];
  const std::string kind = det["kind"];
  require(kind == "oracle" || kind == "noisy", "tracking.detector.kind", "must be oracle or noisy", det["kind"]);
  c.detector.kind = kind == "noisy" ? DetectorKind::kNoisy : DetectorKind::kOracle;
  c.detector.noisy.jitter = det["jitter"];
  c.detector.noisy.drop_rate = det["drop_rate"];
  c.detector.noisy.false_positive_rate = det["false_positive_rate"];
  c.detector.noisy.seed = det["seed"];
  require(c.detector.noisy.jitter >= 0.0, "tracking.detector.jitter", "must be >= 0", det["jitter"]);
  require(c.detector.noisy.drop_rate >= 0.0 && c.detector.noisy.drop_rate <= 1.0, "tracking.detector.drop_rate",
          "must lie in [0, 1]", det["drop_rate"]);
  require(c.detector.noisy.false_positive_rate >= 0.0, "tracking.detector.false_positive_rate", "must be >= 0",
          det["false_positive_rate"]);

  const ojson& e = j["eval"];
  c.eval.iou_gate = e["iou_gate"];
  c.eval.center_radius = e["center_radius"];
  require(c.eval.iou_gate > 0.0 && c.eval.iou_gate <= 1.0, "eval.iou_gate", "must lie in (0, 1]", e["iou_gate"]);
  require(c.eval.center_radius > 0.0, "eval.center_radius", "must be > 0", e["center_radius"]);

  const ojson& b = j["bench"];
  c.bench.sizes = int_list<int>(b["sizes"], "bench.sizes");
  c.bench.targets = int_list<int>(b["targets"], "bench.targets");
  c.bench.channels = b["channels"];
  c.bench.pool_size = b["pool_size"];
  c.bench.options.samples = b["samples"];
  c.bench.options.min_sample_ms = b["min_sample_ms"];
  c.bench.options.seed = b["seed"];
  require(!c.bench.sizes.empty() && std::all_of(c.bench.sizes.begin(), c.bench.sizes.end(), [](int v) { return v > 0; }),
          "bench.sizes", "must be a non-empty list of positive sizes", b["sizes"]);
  require(!c.bench.targets.empty() &&
              std::all_of(c.bench.targets.begin(), c.bench.targets.end(), [](int v) { return v > 0; }),
          "bench.targets", "must be a non-empty list of positive counts", b["targets"]);
  require(c.bench.channels >= 1, "bench.channels", "must be >= 1", b["channels"]);
  require(c.bench.pool_size >= 1, "bench.pool_size", "must be >= 1", b["pool_size"]);
  require(c.bench.options.samples >= 1, "bench.samples", "must be >= 1", b["samples"]);
  require(c.bench.options.min_sample_ms >= 0.0, "bench.min_sample_ms", "must be >= 0", b["min_sample_ms"]);
  return c;
}

void apply_override(ojson& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  ojson value;
  try {
    value = ojson::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  if (tree.is_null()) tree = ojson::object();
  ojson* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw UsageError("--set: malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    ojson& next = (*node)[part];
    if (next.is_null()) next = ojson::object();
    if (!next.is_object()) throw UsageError("--set: '" + key.substr(0, dot) + "' is not a section");
    node = &next;
    start = dot + 1;
  }
}

ojson read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ParseError(path.string() + ": " + e.what(), line);
  }
}

}  // namespace utt
