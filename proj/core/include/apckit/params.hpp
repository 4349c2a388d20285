#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apckit/autodiff.hpp"
#include "apckit/seeding.hpp"

namespace apckit {

using MatrixF = ad::Matrix<float>;

/// Named, ordered collection of float tensors; the storage behind every trainable model.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    MatrixF value;
  };

  /// Appends a tensor and returns its position. Names must be unique.
  std::size_t add(std::string name, MatrixF value);

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  [[nodiscard]] std::size_t index_of(const std::string& name) const;

  /// Total number of scalar parameters.
  [[nodiscard]] std::size_t count() const;
  /// FNV-1a over names, shapes and raw bytes. Equal hashes mean byte-identical parameters.
  [[nodiscard]] std::uint64_t hash() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<Entry> entries_;
};

/// Parameters placed on a tape, either frozen (constants) or trainable (variables).
template <typename T>
struct BoundParams {
  std::vector<ad::Var> vars;

  static BoundParams bind(ad::Tape<T>& tape, const ParamSet& params, bool trainable) {
    BoundParams out;
    out.vars.reserve(params.size());
    for (const auto& e : params.entries()) {
      ad::Matrix<T> v = e.value.template cast<T>();
      out.vars.push_back(trainable ? tape.variable(std::move(v)) : tape.constant(std::move(v)));
    }
    return out;
  }

  [[nodiscard]] ad::Var operator[](std::size_t i) const { return vars[i]; }
};

/// Gradients shaped like a ParamSet.
std::vector<MatrixF> zero_grads(const ParamSet& params);
void accumulate_grads(std::vector<MatrixF>& into, const ad::Tape<float>& tape, const BoundParams<float>& bound);

/// Glorot-uniform weight (fan_in x fan_out) and zero bias, appended as "<name>.weight" / "<name>.bias".
/// Returns the index of the weight; the bias follows it.
std::size_t add_dense(ParamSet& params, const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                      bool zero_init = false);

/// Adam with optional decoupled weight decay.
class Adam {
 public:
  struct Options {
    float learning_rate = 1e-3F;
    float beta1 = 0.9F;
    float beta2 = 0.999F;
    float epsilon = 1e-8F;
    float weight_decay = 0.0F;
  };

  Adam(const ParamSet& params, Options options);
  void step(ParamSet& params, const std::vector<MatrixF>& grads);
  [[nodiscard]] std::size_t steps_taken() const { return t_; }

 private:
  Options opt_;
  std::vector<MatrixF> m_;
  std::vector<MatrixF> v_;
  std::size_t t_ = 0;
};

/// Checkpoint directory layout:
///   manifest.json  { "format_version": "1", "architecture", "metadata": {...},
///                    "tensors": [ { "name", "rows", "cols", "offset" } ] }
///   params.bin     concatenated little-endian float32 tensors, row-major.
struct Checkpoint {
  std::string architecture;
  /// Free-form JSON object text describing dims, seed and config.
  std::string metadata_json = "{}";
  ParamSet params;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Little-endian float32 array I/O shared by checkpoints and point-cloud files.
void write_f32_le(const std::filesystem::path& file, const float* data, std::size_t count);
std::vector<float> read_f32_le(const std::filesystem::path& file);

}  // namespace apckit
