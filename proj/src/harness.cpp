#include "utt/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>

#include "utt/bench.hpp"
#include "utt/errors.hpp"
#include "utt/model_io.hpp"
#include "utt/online_tracking.hpp"
#include "utt/render.hpp"
#include "utt/training.hpp"

namespace utt {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::vector<AnnotatedSequence> train_sequences(const ExperimentConfig& config) {
  if (!config.data.dataset_dir.empty()) return load_dataset(config.data.dataset_dir / "train");
  return generate_dataset(config.data.scene, config.data.train_sequences);
}

std::vector<AnnotatedSequence> eval_sequences(const ExperimentConfig& config) {
  if (!config.data.dataset_dir.empty()) return load_dataset(config.data.dataset_dir / "eval");
  SceneSpec spec = config.data.scene;
  spec.seed = config.data.eval_seed;
  return generate_dataset(spec, config.data.eval_sequences);
}

UnifiedTracker<double> train_model(const ExperimentConfig& config, const std::vector<AnnotatedSequence>& data) {
  UnifiedTracker<double> model(config.tracker);
  Trainer<double> trainer(model, &data, &data, config.train);
  trainer.train_to_end();
  return model;
}

std::vector<std::vector<Box>> track_sot(const UnifiedTracker<double>& model,
                                        const std::vector<AnnotatedSequence>& data) {
  std::vector<std::vector<Box>> out;
  for (const auto& seq : data) {
    const auto init = seq.box_of(seq.sot_target, 0);
    if (!init) throw UsageError("sequence " + seq.name + " has no SOT target in its first frame");
    out.push_back(sot_track_sequence(seq.frames, *init, model));
  }
  return out;
}

SotReport evaluate_sot(const std::vector<std::vector<Box>>& predictions, const std::vector<AnnotatedSequence>& data,
                       double center_radius, std::vector<SotReport>* per_sequence) {
  if (predictions.size() != data.size()) throw UsageError("evaluate_sot: one prediction list per sequence is required");
  std::vector<SotReport> reports;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<Box> gts;
    for (int f = 0; f < data[i].length(); ++f) {
      const auto b = data[i].box_of(data[i].sot_target, f);
      if (!b) throw UsageError("sequence " + data[i].name + ": SOT target missing in frame " + std::to_string(f));
      gts.push_back(*b);
    }
    if (predictions[i].size() != gts.size())
      throw FrameMismatchError("sequence " + data[i].name + ": " + std::to_string(predictions[i].size()) +
                               " predictions for " + std::to_string(gts.size()) + " frames");
    reports.push_back(sot_metrics(predictions[i], gts, center_radius));
  }
  if (per_sequence) *per_sequence = reports;
  return mean_sot_report(reports);
}

std::vector<SequenceAnnotations> track_mot(const UnifiedTracker<double>& model,
                                           const std::vector<AnnotatedSequence>& data,
                                           const ExperimentConfig& config) {
  std::vector<SequenceAnnotations> out;
  for (const auto& seq : data) {
    ModelPredictor<double> predictor(model);
    if (config.detector.kind == DetectorKind::kNoisy) {
      NoisyDetector detector(seq.gt, seq.width, seq.height, config.detector.noisy);
      out.push_back(track_mot_sequence(seq.frames, detector, predictor, config.tracking));
    } else {
      OracleDetector detector(seq.gt);
      out.push_back(track_mot_sequence(seq.frames, detector, predictor, config.tracking));
    }
  }
  return out;
}

MotReport evaluate_mot(const std::vector<SequenceAnnotations>& results, const std::vector<AnnotatedSequence>& data,
                       double iou_gate, std::vector<MotReport>* per_sequence) {
  if (results.size() != data.size()) throw UsageError("evaluate_mot: one result set per sequence is required");
  std::vector<MotReport> reports;
  for (std::size_t i = 0; i < data.size(); ++i) {
    SequenceAnnotations r = results[i];
    if (r.size() > data[i].gt.size())
      throw FrameMismatchError("sequence " + data[i].name + ": results extend past the last frame");
    r.resize(data[i].gt.size());
    reports.push_back(mot_metrics(r, data[i].gt, iou_gate));
  }
  if (per_sequence) *per_sequence = reports;
  return combine_reports(reports);
}

fs::path resolve_output_dir(const fs::path& configured) {
  if (configured.is_absolute()) return configured;
  if (const char* root = std::getenv("UTT_OUT_ROOT"); root && *root) return fs::path(root) / configured;
  return configured;
}

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::string checkpoint;
  std::string results;
  std::string task = "sot";
  std::string resume;
  std::string split = "eval";
  std::string sequence;
};

void write_text_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

struct Run {
  ExperimentConfig config;
  fs::path out;
};

Run prepare(const CommonArgs& a, const std::string& command) {
  ojson tree = a.config_path.empty() ? ojson::object() : read_config_file(a.config_path);
  for (const auto& o : a.overrides) apply_override(tree, o);
  if (a.seed) tree["seed"] = *a.seed;
  if (!a.out.empty()) tree["output_dir"] = a.out;
  if (!a.mode.empty()) tree["mode"] = a.mode;
  Run run{validate_config(tree), {}};
  run.out = resolve_output_dir(run.config.output_dir);
  run.config.output_dir = run.out;
  run.config.train.diagnostics_dir = run.out;
  fs::create_directories(run.out);
  ojson resolved = config_to_json(run.config);
  resolved["command"] = command;
  write_text_file(run.out / "resolved_config.json", resolved.dump(2) + "\n");
  return run;
}

fs::path checkpoint_dir(const CommonArgs& a, const Run& run) {
  return a.checkpoint.empty() ? run.out / "checkpoint" : fs::path(a.checkpoint);
}

UnifiedTracker<double> load_checkpoint_model(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw std::runtime_error("checkpoint not found: expected " + (dir / "manifest.json").string());
  return load_model<double>(dir);
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const AnnotatedSequence* find_sequence(const std::vector<AnnotatedSequence>& data, const std::string& key) {
  if (data.empty()) return nullptr;
  if (key.empty()) return &data.front();
  for (const auto& s : data) {
    if (s.name == key) return &s;
  }
  if (!key.empty() && std::all_of(key.begin(), key.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    const auto i = static_cast<std::size_t>(std::stoul(key));
    if (i < data.size()) return &data[i];
  }
  return nullptr;
}

int cmd_train(const CommonArgs& a, std::ostream& out) {
  Run run = prepare(a, "train");
  const auto data = train_sequences(run.config);
  UnifiedTracker<double> model(run.config.tracker);
  Trainer<double> trainer(model, &data, &data, run.config.train);
  if (!a.resume.empty()) trainer.load(a.resume);
  std::ofstream log(run.out / "train_log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  trainer.set_log(&log);
  const long every = run.config.checkpoint_every;
  while (trainer.state().iteration < run.config.train.iterations) {
    trainer.unified_train_step();
    const long it = trainer.state().iteration;
    if (every > 0 && it % every == 0 && it < run.config.train.iterations) {
      char name[32];
      std::snprintf(name, sizeof(name), "iter_%06ld", it);
      trainer.save(run.out / "checkpoints" / name);
    }
  }
  log.flush();
  trainer.save(run.out / "checkpoint");
  const auto hash = checkpoint_hash(run.out / "checkpoint");
  const auto& st = trainer.state();
  ojson summary = {{"mode", train_mode_name(run.config.mode)},
                   {"seed", run.config.seed},
                   {"iterations", st.iteration},
                   {"updates", st.updates},
                   {"checkpoint", (run.out / "checkpoint").string()},
                   {"checkpoint_hash", hex(hash)},
                   {"loss_ema_sot", std::isnan(st.ema_sot) ? ojson() : ojson(st.ema_sot)},
                   {"loss_ema_mot", std::isnan(st.ema_mot) ? ojson() : ojson(st.ema_mot)}};
  write_text_file(run.out / "train_summary.json", summary.dump(2) + "\n");
  out << "trained " << st.iteration << " steps (" << st.updates << " updates), checkpoint "
      << (run.out / "checkpoint").string() << " hash " << hex(hash) << "\n";
  return 0;
}

std::vector<std::vector<Box>> run_track_sot(const CommonArgs& a, const Run& run,
                                            const std::vector<AnnotatedSequence>& data) {
  const auto model = load_checkpoint_model(checkpoint_dir(a, run));
  auto preds = track_sot(model, data);
  fs::create_directories(run.out / "sot_results");
  for (std::size_t i = 0; i < data.size(); ++i)
    write_sot_results((run.out / "sot_results" / (data[i].name + ".txt")).string(), preds[i]);
  return preds;
}

std::vector<SequenceAnnotations> run_track_mot(const CommonArgs& a, const Run& run,
                                               const std::vector<AnnotatedSequence>& data) {
  const auto model = load_checkpoint_model(checkpoint_dir(a, run));
  auto results = track_mot(model, data, run.config);
  fs::create_directories(run.out / "mot_results");
  for (std::size_t i = 0; i < data.size(); ++i)
    write_results((run.out / "mot_results" / (data[i].name + ".txt")).string(), results[i]);
  return results;
}

int cmd_track_sot(const CommonArgs& a, std::ostream& out) {
  Run run = prepare(a, "track-sot");
  const auto data = eval_sequences(run.config);
  run_track_sot(a, run, data);
  out << "wrote " << data.size() << " SOT result files to " << (run.out / "sot_results").string() << "\n";
  return 0;
}

int cmd_track_mot(const CommonArgs& a, std::ostream& out) {
  Run run = prepare(a, "track-mot");
  const auto data = eval_sequences(run.config);
  run_track_mot(a, run, data);
  out << "wrote " << data.size() << " MOT result files to " << (run.out / "mot_results").string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& a, std::ostream& out) {
  if (a.task != "sot" && a.task != "mot") throw UsageError("eval: --task must be sot or mot, got '" + a.task + "'");
  Run run = prepare(a, "eval");
  const auto data = eval_sequences(run.config);
  ojson report;
  if (a.task == "sot") {
    std::vector<std::vector<Box>> preds;
    if (a.results.empty()) {
      preds = run_track_sot(a, run, data);
    } else {
      for (const auto& s : data) preds.push_back(read_sot_results((fs::path(a.results) / (s.name + ".txt")).string()));
    }
    std::vector<SotReport> per;
    const SotReport mean = evaluate_sot(preds, data, run.config.eval.center_radius, &per);
    report = ojson::parse(to_json(mean));
    for (std::size_t i = 0; i < data.size(); ++i) report["sequences"][data[i].name] = ojson::parse(to_json(per[i]));
    write_text_file(run.out / "sot_report.json", report.dump(2) + "\n");
    out << to_text(mean);
  } else {
    std::vector<SequenceAnnotations> results;
    if (a.results.empty()) {
      results = run_track_mot(a, run, data);
    } else {
      for (const auto& s : data) results.push_back(read_annotations((fs::path(a.results) / (s.name + ".txt")).string()));
    }
    std::vector<MotReport> per;
    const MotReport combined = evaluate_mot(results, data, run.config.eval.iou_gate, &per);
    report = ojson::parse(to_json(combined));
    for (std::size_t i = 0; i < data.size(); ++i) report["sequences"][data[i].name] = ojson::parse(to_json(per[i]));
    write_text_file(run.out / "mot_report.json", report.dump(2) + "\n");
    out << to_text(combined);
  }
  return 0;
}

int cmd_bench(const CommonArgs& a, std::ostream& out) {
  Run run = prepare(a, "bench");
  const auto& b = run.config.bench;
  const auto report = bench_attention(bench_grid(b.sizes, b.targets, b.channels, b.pool_size), b.options);
  write_text_file(run.out / "bench.csv", bench_csv(report));
  write_text_file(run.out / "bench.json", bench_json(report) + "\n");
  out << bench_text(report);
  return 0;
}

int cmd_generate(const CommonArgs& a, std::ostream& out) {
  Run run = prepare(a, "generate");
  for (const auto& [split, data] : {std::pair{std::string("train"), train_sequences(run.config)},
                                    std::pair{std::string("eval"), eval_sequences(run.config)}}) {
    std::vector<std::string> names;
    for (const auto& s : data) {
      save_sequence(run.out / "dataset" / split / s.name, s);
      names.push_back(s.name);
    }
    write_dataset_manifest(run.out / "dataset" / split, names);
    out << "wrote " << data.size() << " " << split << " sequences to " << (run.out / "dataset" / split).string()
        << "\n";
  }
  return 0;
}

int cmd_render(const CommonArgs& a, std::ostream& out) {
  if (a.split != "train" && a.split != "eval") throw UsageError("render: --split must be train or eval");
  Run run = prepare(a, "render");
  const auto data = a.split == "train" ? train_sequences(run.config) : eval_sequences(run.config);
  const AnnotatedSequence* seq = find_sequence(data, a.sequence);
  if (!seq) throw UsageError("render: no sequence '" + a.sequence + "' in the " + a.split + " split");
  SequenceAnnotations boxes = seq->gt;
  if (!a.results.empty()) {
    fs::path file = a.results;
    if (fs::is_directory(file)) file /= seq->name + ".txt";
    boxes = read_annotations(file.string());
    if (boxes.size() > seq->frames.size())
      throw FrameMismatchError("render: results extend past the last frame of " + seq->name);
    boxes.resize(seq->frames.size());
  }
  const fs::path dir = run.out / "render" / seq->name;
  fs::create_directories(dir);
  for (std::size_t f = 0; f < seq->frames.size(); ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", f + 1);
    write_png((dir / name).string(), render_frame(seq->frames[f], boxes[f]));
  }
  out << "rendered " << seq->frames.size() << " frames to " << dir.string() << "\n";
  return 0;
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const FrameMismatchError*>(&e)) return "frame_mismatch";
  if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const CLI::Error*>(&e)) return "usage";
  return "runtime";
}

void write_error(const fs::path& dir, const std::string& command, const std::exception& e, std::ostream& err) {
  err << "error: " << e.what() << "\n";
  try {
    fs::create_directories(dir);
    ojson j = {{"command", command}, {"type", error_type(e)}, {"error", e.what()}};
    write_text_file(dir / "error.json", j.dump(2) + "\n");
  } catch (const std::exception& inner) {
    err << "error: could not write error.json: " << inner.what() << "\n";
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unified single- and multi-object tracker"};
  app.require_subcommand(1);
  CommonArgs a;
  const auto common = [&a](CLI::App* cmd) {
    cmd->add_option("--config", a.config_path, "JSON config file");
    cmd->add_option("--set", a.overrides, "key=value override, repeatable")->take_all();
    cmd->add_option("--seed", a.seed, "experiment seed");
    cmd->add_option("--out", a.out, "output directory");
  };
  auto* train = app.add_subcommand("train", "train a model");
  common(train);
  train->add_option("--mode", a.mode, "sot_only, mot_only or unified");
  train->add_option("--resume", a.resume, "training state to continue from");
  auto* track_sot_cmd = app.add_subcommand("track-sot", "track the SOT target of each eval sequence");
  common(track_sot_cmd);
  auto* track_mot_cmd = app.add_subcommand("track-mot", "online MOT over each eval sequence");
  common(track_mot_cmd);
  auto* eval = app.add_subcommand("eval", "score a checkpoint or a result directory");
  common(eval);
  eval->add_option("--task", a.task, "sot or mot");
  eval->add_option("--results", a.results, "directory of <sequence>.txt result files");
  auto* bench = app.add_subcommand("bench", "attention complexity sweep");
  common(bench);
  auto* render = app.add_subcommand("render", "draw boxes and ids onto frames");
  common(render);
  render->add_option("--results", a.results, "MOT result file or directory (default: ground truth)");
  render->add_option("--split", a.split, "train or eval");
  render->add_option("--sequence", a.sequence, "sequence name or index");
  auto* generate = app.add_subcommand("generate", "write the synthetic train/eval splits to disk");
  common(generate);
  for (auto* cmd : {track_sot_cmd, track_mot_cmd, eval, render})
    cmd->add_option("--checkpoint", a.checkpoint, "model or training checkpoint directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  std::string command = args.empty() ? "" : args.front();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const fs::path dir = resolve_output_dir(a.out.empty() ? fs::path("runs/default") : fs::path(a.out));
    write_error(dir, command, e, err);
    err << app.help();
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(a, out);
    if (track_sot_cmd->parsed()) return cmd_track_sot(a, out);
    if (track_mot_cmd->parsed()) return cmd_track_mot(a, out);
    if (eval->parsed()) return cmd_eval(a, out);
    if (bench->parsed()) return cmd_bench(a, out);
    if (render->parsed()) return cmd_render(a, out);
    if (generate->parsed()) return cmd_generate(a, out);
    throw UsageError("no subcommand given");
  } catch (const std::exception& e) {
    // Fall back to the command-line output directory when the config itself failed.
    fs::path dir = a.out.empty() ? fs::path("runs/default") : fs::path(a.out);
    try {
      ojson tree = a.config_path.empty() ? ojson::object() : read_config_file(a.config_path);
      if (!a.out.empty()) tree["output_dir"] = a.out;
      if (tree.contains("output_dir") && tree["output_dir"].is_string()) dir = tree["output_dir"].get<std::string>();
    } catch (const std::exception&) {
    }
    write_error(resolve_output_dir(dir), command, e, err);
    return 1;
  }
}

}  // namespace utt
