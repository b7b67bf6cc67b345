// Named-tensor checkpoints: manifest.json (names, shapes, offsets, dtype)
// next to a little-endian tensors.bin.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "utt/autodiff.hpp"
#include "utt/errors.hpp"
#include "utt/neural_core.hpp"

namespace utt {

enum class TensorDType { kFloat32, kFloat64 };

std::string dtype_name(TensorDType dtype);
TensorDType parse_dtype(const std::string& name);

struct TensorRecord {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<double> values;  // row-major
};

struct Checkpoint {
  TensorDType dtype = TensorDType::kFloat32;
  std::string metadata;  // JSON text stored under "metadata" in the manifest
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);

/// Throws std::runtime_error naming the expected manifest path when absent.
Checkpoint read_checkpoint(const std::filesystem::path& dir);

/// FNV-1a over raw bytes, chainable through `seed`.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Hash of a checkpoint directory's manifest and tensor file.
std::uint64_t checkpoint_hash(const std::filesystem::path& dir);

template <typename Scalar>
TensorRecord to_record(const std::string& name, const Mat<Scalar>& m) {
  TensorRecord r{name, m.rows(), m.cols(), {}};
  r.values.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) r.values[static_cast<std::size_t>(i)] = static_cast<double>(m.data()[i]);
  return r;
}

template <typename Scalar>
Mat<Scalar> from_record(const TensorRecord& r) {
  Mat<Scalar> m(r.rows, r.cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(r.values[static_cast<std::size_t>(i)]);
  return m;
}

template <typename Scalar>
void append_parameters(Checkpoint& ckpt, const ParameterList<Scalar>& params) {
  for (const auto& [name, p] : params) ckpt.tensors.push_back(to_record(name, p.value()));
}

/// Copies every named parameter from the checkpoint; shape or name mismatches throw.
template <typename Scalar>
void load_parameters(const Checkpoint& ckpt, const ParameterList<Scalar>& params) {
  for (const auto& [name, p] : params) {
    const TensorRecord* r = ckpt.find(name);
    if (!r) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (r->rows != p.rows() || r->cols != p.cols()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + std::to_string(r->rows) + "x" +
                        std::to_string(r->cols) + ", expected " + std::to_string(p.rows()) + "x" +
                        std::to_string(p.cols()));
    }
    p.mutable_value() = from_record<Scalar>(*r);
  }
}

}  // namespace utt
