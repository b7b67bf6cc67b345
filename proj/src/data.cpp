#include "utt/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "utt/errors.hpp"

namespace utt {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kTextureCell = 4;

struct ObjectTrack {
  ObjectSpec spec;
  std::vector<Box> boxes;  // one per frame in [spawn, despawn)
};

// Constant velocity with per-frame jitter; bounces so the box stays on the canvas.
std::vector<Box> simulate(const ObjectSpec& obj, int despawn, const SceneSpec& spec) {
  std::mt19937_64 rng(obj.appearance_seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> jitter(0.0, 1.0);
  const double max_x = spec.canvas_width - obj.width;
  const double max_y = spec.canvas_height - obj.height;
  double x = std::clamp(obj.x, 0.0, max_x);
  double y = std::clamp(obj.y, 0.0, max_y);
  double vx = obj.vx, vy = obj.vy;
  std::vector<Box> boxes;
  for (int f = obj.spawn; f < despawn; ++f) {
    boxes.push_back(make_box(x, y, x + obj.width, y + obj.height));
    if (spec.velocity_jitter > 0.0) {
      vx += spec.velocity_jitter * jitter(rng);
      vy += spec.velocity_jitter * jitter(rng);
      const double speed = std::hypot(vx, vy);
      if (spec.max_speed > 0.0 && speed > spec.max_speed) {
        vx *= spec.max_speed / speed;
        vy *= spec.max_speed / speed;
      }
    }
    x += vx;
    y += vy;
    if (x < 0.0) { x = -x; vx = -vx; }
    if (x > max_x) { x = 2.0 * max_x - x; vx = -vx; }
    if (y < 0.0) { y = -y; vy = -vy; }
    if (y > max_y) { y = 2.0 * max_y - y; vy = -vy; }
    x = std::clamp(x, 0.0, max_x);
    y = std::clamp(y, 0.0, max_y);
  }
  return boxes;
}

bool overlaps(const ObjectTrack& a, const ObjectTrack& b) {
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    const int f = a.spec.spawn + static_cast<int>(i);
    const int j = f - b.spec.spawn;
    if (j < 0 || j >= static_cast<int>(b.boxes.size())) continue;
    if (box_iou<double>(a.boxes[i], b.boxes[static_cast<std::size_t>(j)]) > 0.0) return true;
  }
  return false;
}

struct Appearance {
  float color[3];
  int cells_x = 0;
  std::vector<float> texture;  // per cell, per channel
  double blob_phase = 0.0;

  Appearance(std::uint64_t seed, const ObjectSpec& obj, double amplitude) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (float& c : color) c = static_cast<float>(0.1 + 0.8 * unit(rng));
    cells_x = static_cast<int>(std::ceil(obj.width / kTextureCell)) + 1;
    const int cells_y = static_cast<int>(std::ceil(obj.height / kTextureCell)) + 1;
    texture.resize(static_cast<std::size_t>(cells_x) * cells_y * 3);
    for (float& t : texture) t = static_cast<float>(amplitude * (2.0 * unit(rng) - 1.0));
    blob_phase = 2.0 * std::numbers::pi * unit(rng);
  }

  float value(double u, double v, int c) const {
    const int cx = static_cast<int>(u / kTextureCell);
    const int cy = static_cast<int>(v / kTextureCell);
    return color[c] + texture[(static_cast<std::size_t>(cy) * cells_x + cx) * 3 + c];
  }
};

// Whether the local point (u, v) in a w x h box is inside the shape.
bool inside(Shape shape, double u, double v, double w, double h, double phase) {
  if (shape == Shape::kRect) return true;
  const double nx = (u / w) * 2.0 - 1.0;
  const double ny = (v / h) * 2.0 - 1.0;
  const double r = std::hypot(nx, ny);
  if (shape == Shape::kEllipse) return r <= 1.0;
  const double theta = std::atan2(ny, nx);
  return r <= std::min(1.0, 0.8 + 0.2 * std::sin(3.0 * theta + phase));
}

std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t\r");
    const auto e = cur.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
  }
  return fields;
}

double to_number(const std::string& field, int line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError("not a number: '" + field + "'", line);
  return v;
}

}  // namespace

Shape parse_shape(const std::string& s) {
  if (s == "rect") return Shape::kRect;
  if (s == "ellipse") return Shape::kEllipse;
  if (s == "blob") return Shape::kBlob;
  throw FormatError("unknown shape '" + s + "'");
}

std::string shape_name(Shape shape) {
  switch (shape) {
    case Shape::kRect: return "rect";
    case Shape::kEllipse: return "ellipse";
    case Shape::kBlob: return "blob";
  }
  return "rect";
}

void SceneSpec::validate() const {
  if (canvas_width <= 0 || canvas_height <= 0) throw SpecError("scene: canvas must be positive");
  if (scripted.empty()) {
    if (min_objects < 1 || max_objects < min_objects)
      throw SpecError("scene: need 1 <= min_objects <= max_objects");
    if (min_size <= 0.0 || max_size < min_size) throw SpecError("scene: need 0 < min_size <= max_size");
    if (max_size > canvas_width || max_size > canvas_height)
      throw SpecError("scene: objects larger than the canvas");
    const double capacity = static_cast<double>(canvas_width) * canvas_height;
    if (static_cast<double>(max_objects) * min_size * min_size > capacity)
      throw SpecError("scene: object count exceeds canvas capacity");
    if (palette.empty()) throw SpecError("scene: empty shape palette");
  }
  if (frames <= 0 && (min_frames < 1 || max_frames < min_frames))
    throw SpecError("scene: need 1 <= min_frames <= max_frames");
  if (max_speed < 0.0 || velocity_jitter < 0.0) throw SpecError("scene: negative motion scale");
  for (const auto& o : scripted) {
    if (o.width <= 0.0 || o.height <= 0.0 || o.width > canvas_width || o.height > canvas_height)
      throw SpecError("scene: scripted object does not fit the canvas");
    if (o.spawn < 0) throw SpecError("scene: negative spawn frame");
  }
}

std::optional<Box> AnnotatedSequence::box_of(int id, int frame) const {
  if (frame < 0 || frame >= static_cast<int>(gt.size())) return std::nullopt;
  for (const auto& a : gt[static_cast<std::size_t>(frame)]) {
    if (a.id == id) return a.box;
  }
  return std::nullopt;
}

std::vector<int> AnnotatedSequence::ids() const {
  std::set<int> s;
  for (const auto& f : gt) {
    for (const auto& a : f) s.insert(a.id);
  }
  return {s.begin(), s.end()};
}

AnnotatedSequence generate_sequence(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int length = spec.frames > 0
                         ? spec.frames
                         : std::uniform_int_distribution<int>(spec.min_frames, spec.max_frames)(rng);

  std::vector<ObjectTrack> objects;
  if (!spec.scripted.empty()) {
    for (const auto& o : spec.scripted) {
      const int despawn = o.despawn < 0 ? length : std::min(o.despawn, length);
      objects.push_back({o, simulate(o, despawn, spec)});
    }
  } else {
    const int count = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
    for (int i = 0; i < count; ++i) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        ObjectSpec o;
        o.shape = spec.palette[std::uniform_int_distribution<std::size_t>(
            0, spec.palette.size() - 1)(rng)];
        o.width = spec.min_size + (spec.max_size - spec.min_size) * unit(rng);
        o.height = spec.min_size + (spec.max_size - spec.min_size) * unit(rng);
        o.x = (spec.canvas_width - o.width) * unit(rng);
        o.y = (spec.canvas_height - o.height) * unit(rng);
        const double angle = 2.0 * std::numbers::pi * unit(rng);
        const double speed = spec.max_speed * unit(rng);
        o.vx = speed * std::cos(angle);
        o.vy = speed * std::sin(angle);
        o.appearance_seed = rng();
        int despawn = length;
        // Object 0 is the single-object target and lives for the whole sequence.
        if (i > 0 && length > 2 && unit(rng) < spec.spawn_probability) {
          if (unit(rng) < 0.5) {
            o.spawn = std::uniform_int_distribution<int>(1, length / 2)(rng);
          } else {
            despawn = std::uniform_int_distribution<int>(length / 2 + 1, length - 1)(rng);
          }
        }
        o.despawn = despawn;
        ObjectTrack track{o, simulate(o, despawn, spec)};
        const bool clash = !spec.allow_occlusion &&
                           std::any_of(objects.begin(), objects.end(),
                                       [&](const ObjectTrack& other) { return overlaps(track, other); });
        if (!clash) {
          objects.push_back(std::move(track));
          break;
        }
        if (attempt == 49) throw SpecError("scene: cannot place objects without occlusion");
      }
    }
  }

  AnnotatedSequence seq;
  seq.width = spec.canvas_width;
  seq.height = spec.canvas_height;
  seq.gt.resize(static_cast<std::size_t>(length));
  seq.sot_target = 1;
  char name[32];
  std::snprintf(name, sizeof(name), "seq_%016llx", static_cast<unsigned long long>(spec.seed));
  seq.name = name;

  // Static textured background.
  Image background(spec.canvas_height, spec.canvas_width);
  {
    std::mt19937_64 bg_rng(spec.seed ^ 0x5bd1e995ULL);
    std::uniform_real_distribution<double> bg(0.0, 1.0);
    const double base = 0.35 + 0.2 * bg(bg_rng);
    for (float& v : background.data) v = static_cast<float>(base + 0.06 * (bg(bg_rng) - 0.5));
  }

  std::vector<Appearance> looks;
  looks.reserve(objects.size());
  for (const auto& o : objects) looks.emplace_back(o.spec.appearance_seed, o.spec, spec.texture_amplitude);

  std::vector<int> owner(static_cast<std::size_t>(spec.canvas_width) * spec.canvas_height);
  std::vector<int> coverage(objects.size());
  for (int f = 0; f < length; ++f) {
    Image frame = background;
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(coverage.begin(), coverage.end(), 0);
    // Higher ids are drawn first so the single-object target stays on top.
    for (std::size_t k = objects.size(); k-- > 0;) {
      const auto& obj = objects[k];
      const int local = f - obj.spec.spawn;
      if (local < 0 || local >= static_cast<int>(obj.boxes.size())) continue;
      const Box& b = obj.boxes[static_cast<std::size_t>(local)];
      const int y0 = std::max(0, static_cast<int>(std::floor(b(1))));
      const int y1 = std::min(spec.canvas_height - 1, static_cast<int>(std::ceil(b(3))));
      const int x0 = std::max(0, static_cast<int>(std::floor(b(0))));
      const int x1 = std::min(spec.canvas_width - 1, static_cast<int>(std::ceil(b(2))));
      for (int py = y0; py <= y1; ++py) {
        for (int px = x0; px <= x1; ++px) {
          const double u = px + 0.5 - b(0);
          const double v = py + 0.5 - b(1);
          if (u < 0.0 || v < 0.0 || u >= obj.spec.width || v >= obj.spec.height) continue;
          if (!inside(obj.spec.shape, u, v, obj.spec.width, obj.spec.height, looks[k].blob_phase))
            continue;
          for (int c = 0; c < 3; ++c) frame.at(py, px, c) = std::clamp(looks[k].value(u, v, c), 0.0F, 1.0F);
          owner[static_cast<std::size_t>(py) * spec.canvas_width + px] = static_cast<int>(k);
          ++coverage[k];
        }
      }
    }
    std::vector<int> visible(objects.size(), 0);
    for (int o : owner) {
      if (o >= 0) ++visible[static_cast<std::size_t>(o)];
    }
    for (std::size_t k = 0; k < objects.size(); ++k) {
      const auto& obj = objects[k];
      const int local = f - obj.spec.spawn;
      if (local < 0 || local >= static_cast<int>(obj.boxes.size())) continue;
      Annotation a;
      a.id = static_cast<int>(k) + 1;
      a.box = clip_box(obj.boxes[static_cast<std::size_t>(local)], spec.canvas_width, spec.canvas_height);
      a.visibility = coverage[k] > 0 ? static_cast<double>(visible[k]) / coverage[k] : 0.0;
      seq.gt[static_cast<std::size_t>(f)].push_back(a);
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

std::vector<AnnotatedSequence> generate_dataset(const SceneSpec& spec, int count) {
  std::vector<AnnotatedSequence> out;
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32)};
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(std::max(count, 0)) * 2);
  std::vector<std::uint32_t> raw(seeds.size());
  seq.generate(raw.begin(), raw.end());
  for (int i = 0; i < count; ++i) {
    SceneSpec s = spec;
    s.seed = (static_cast<std::uint64_t>(raw[2 * i]) << 32) | raw[2 * i + 1];
    out.push_back(generate_sequence(s));
  }
  return out;
}

SequenceAnnotations parse_annotations(const std::string& text) {
  SequenceAnnotations out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (fields.size() < 6) throw ParseError("expected at least 6 comma-separated fields", line_no);
    const double frame = to_number(fields[0], line_no);
    const double id = to_number(fields[1], line_no);
    if (frame < 1 || frame != std::floor(frame)) throw ParseError("frame must be a positive integer", line_no);
    if (id != std::floor(id)) throw ParseError("id must be an integer", line_no);
    const double x = to_number(fields[2], line_no);
    const double y = to_number(fields[3], line_no);
    const double w = to_number(fields[4], line_no);
    const double h = to_number(fields[5], line_no);
    if (w < 0 || h < 0) throw ParseError("negative box size", line_no);
    Annotation a;
    a.id = static_cast<int>(id);
    a.box = make_box(x, y, x + w, y + h);
    if (fields.size() > 6) a.score = to_number(fields[6], line_no);
    if (fields.size() > 7) a.category = static_cast<int>(to_number(fields[7], line_no));
    if (fields.size() > 8) a.visibility = to_number(fields[8], line_no);
    const auto f = static_cast<std::size_t>(frame) - 1;
    if (out.size() <= f) out.resize(f + 1);
    out[f].push_back(a);
  }
  return out;
}

SequenceAnnotations read_annotations(const std::string& path) {
  return parse_annotations(read_text(path));
}

std::string format_results(const SequenceAnnotations& results) {
  std::string out;
  for (std::size_t f = 0; f < results.size(); ++f) {
    for (const auto& a : results[f]) {
      out += std::to_string(f + 1) + "," + std::to_string(a.id) + "," + format_fixed(a.box(0)) + "," +
             format_fixed(a.box(1)) + "," + format_fixed(a.box(2) - a.box(0)) + "," +
             format_fixed(a.box(3) - a.box(1)) + "," + format_fixed(a.score) + ",-1,-1,-1\n";
    }
  }
  return out;
}

void write_results(const std::string& path, const SequenceAnnotations& results) {
  write_text(path, format_results(results));
}

void write_ground_truth(const std::string& path, const SequenceAnnotations& gt) {
  std::string out;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    for (const auto& a : gt[f]) {
      out += std::to_string(f + 1) + "," + std::to_string(a.id) + "," + format_fixed(a.box(0)) + "," +
             format_fixed(a.box(1)) + "," + format_fixed(a.box(2) - a.box(0)) + "," +
             format_fixed(a.box(3) - a.box(1)) + ",1," + std::to_string(a.category) + "," +
             format_fixed(a.visibility) + "\n";
    }
  }
  write_text(path, out);
}

void write_sot_results(const std::string& path, const std::vector<Box>& boxes) {
  std::string out;
  for (const auto& b : boxes) {
    out += format_fixed(b(0)) + "," + format_fixed(b(1)) + "," + format_fixed(b(2) - b(0)) + "," +
           format_fixed(b(3) - b(1)) + "\n";
  }
  write_text(path, out);
}

std::vector<Box> read_sot_results(const std::string& path) {
  std::istringstream in(read_text(path));
  std::vector<Box> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 4) throw ParseError("expected x,y,w,h", line_no);
    const double x = to_number(fields[0], line_no);
    const double y = to_number(fields[1], line_no);
    const double w = to_number(fields[2], line_no);
    const double h = to_number(fields[3], line_no);
    if (w < 0 || h < 0) throw ParseError("negative box size", line_no);
    out.push_back(make_box(x, y, x + w, y + h));
  }
  return out;
}

void save_sequence(const fs::path& dir, const AnnotatedSequence& seq) {
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "gt");
  for (int f = 0; f < seq.length(); ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", f + 1);
    write_png((dir / "img" / name).string(), seq.frames[static_cast<std::size_t>(f)]);
  }
  write_ground_truth((dir / "gt" / "gt.txt").string(), seq.gt);
  json manifest = {{"name", seq.name},
                   {"width", seq.width},
                   {"height", seq.height},
                   {"length", seq.length()},
                   {"sot_target", seq.sot_target},
                   {"frames", "img/%06d.png"},
                   {"annotations", "gt/gt.txt"}};
  write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
}

AnnotatedSequence load_sequence(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw std::runtime_error("missing sequence manifest " + manifest_path.string());
  const json manifest = json::parse(read_text(manifest_path.string()));
  AnnotatedSequence seq;
  seq.name = manifest.at("name").get<std::string>();
  seq.width = manifest.at("width").get<int>();
  seq.height = manifest.at("height").get<int>();
  seq.sot_target = manifest.value("sot_target", 1);
  const int length = manifest.at("length").get<int>();
  for (int f = 0; f < length; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", f + 1);
    seq.frames.push_back(read_png((dir / "img" / name).string()));
  }
  seq.gt = read_annotations((dir / "gt" / "gt.txt").string());
  seq.gt.resize(static_cast<std::size_t>(length));
  return seq;
}

void write_dataset_manifest(const fs::path& dir, const std::vector<std::string>& sequences) {
  fs::create_directories(dir);
  json manifest = {{"format", "utt-sequences"}, {"version", 1}, {"sequences", sequences}};
  write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
}

std::vector<AnnotatedSequence> load_dataset(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw std::runtime_error("dataset not found: expected " + path.string());
  std::ifstream in(path);
  const json manifest = json::parse(in);
  if (manifest.value("format", "") != "utt-sequences") throw FormatError("dataset: unrecognized manifest " + path.string());
  std::vector<AnnotatedSequence> out;
  for (const auto& name : manifest.at("sequences")) out.push_back(load_sequence(dir / name.get<std::string>()));
  return out;
}

}  // namespace utt
