#include "utt/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace utt {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kFormat = "utt-checkpoint";
constexpr int kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string dtype_name(TensorDType dtype) { return dtype == TensorDType::kFloat64 ? "float64" : "float32"; }

TensorDType parse_dtype(const std::string& name) {
  if (name == "float32") return TensorDType::kFloat32;
  if (name == "float64") return TensorDType::kFloat64;
  throw FormatError("unknown tensor dtype '" + name + "'");
}

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  std::string blob;
  json manifest = {{"format", kFormat}, {"version", kVersion}, {"dtype", dtype_name(ckpt.dtype)},
                   {"byte_order", "little"}};
  manifest["metadata"] = ckpt.metadata.empty() ? json::object() : json::parse(ckpt.metadata);
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (static_cast<Eigen::Index>(t.values.size()) != t.rows * t.cols)
      throw FormatError("checkpoint: tensor '" + t.name + "' size does not match its shape");
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", offset}, {"count", t.values.size()}});
    for (double v : t.values) {
      if (ckpt.dtype == TensorDType::kFloat64) {
        put_le<double>(blob, v);
      } else {
        put_le<float>(blob, static_cast<float>(v));
      }
    }
    offset = blob.size();
  }
  manifest["tensors"] = tensors;
  {
    std::ofstream out(dir / "tensors.bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "tensors.bin").string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Checkpoint read_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw std::runtime_error("checkpoint not found: expected " + manifest_path.string());
  const json manifest = json::parse(slurp(manifest_path));
  if (manifest.value("format", "") != kFormat) throw FormatError("checkpoint: unrecognized format in " + manifest_path.string());
  if (manifest.value("version", 0) != kVersion) throw FormatError("checkpoint: unsupported version");
  Checkpoint ckpt;
  ckpt.dtype = parse_dtype(manifest.at("dtype").get<std::string>());
  ckpt.metadata = manifest.contains("metadata") ? manifest["metadata"].dump() : "{}";
  const std::string blob = slurp(dir / "tensors.bin");
  const std::size_t width = ckpt.dtype == TensorDType::kFloat64 ? 8 : 4;
  for (const auto& t : manifest.at("tensors")) {
    TensorRecord r;
    r.name = t.at("name").get<std::string>();
    r.rows = t.at("shape").at(0).get<Eigen::Index>();
    r.cols = t.at("shape").at(1).get<Eigen::Index>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto count = t.at("count").get<std::size_t>();
    if (static_cast<Eigen::Index>(count) != r.rows * r.cols || offset + count * width > blob.size())
      throw FormatError("checkpoint: tensor '" + r.name + "' is inconsistent with tensors.bin");
    r.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const char* p = blob.data() + offset + i * width;
      r.values[i] = width == 8 ? get_le<double>(p) : static_cast<double>(get_le<float>(p));
    }
    ckpt.tensors.push_back(std::move(r));
  }
  return ckpt;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checkpoint_hash(const fs::path& dir) {
  const std::string manifest = slurp(dir / "manifest.json");
  const std::string blob = slurp(dir / "tensors.bin");
  return fnv1a(blob.data(), blob.size(), fnv1a(manifest.data(), manifest.size()));
}

}  // namespace utt
