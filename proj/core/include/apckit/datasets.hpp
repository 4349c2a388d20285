#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "apckit/point_cloud.hpp"
#include "apckit/seeding.hpp"

namespace apckit::data {

/// The eight parametric surface classes of the synthetic benchmark, in label order.
enum class ShapeKind { kSphere, kCube, kCylinder, kCone, kTorus, kPyramid, kEllipsoid, kPlaneCross };

inline constexpr std::size_t kNumShapeKinds = 8;
inline constexpr std::array<std::string_view, kNumShapeKinds> kShapeNames = {
    "sphere", "cube", "cylinder", "cone", "torus", "pyramid", "ellipsoid", "plane-cross"};

/// Throws InvalidArgument for names outside kShapeNames.
ShapeKind shape_from_name(std::string_view name);
std::string_view shape_name(ShapeKind kind);

/// Half-width of the canonical cube before any transform.
inline constexpr float kCubeHalfWidth = 0.5F;

/// Points sampled on the canonical (unrotated, unscaled, noise-free) surface.
Points sample_surface(ShapeKind kind, std::size_t n, Rng& rng);

struct LabeledCloud {
  PointCloud cloud;
  std::size_t label = 0;
  std::string example_id;
};

/// n surface points, per-axis scale in [0.7, 1.3], random rotation about the z axis,
/// Gaussian jitter sigma 0.005, then unit-sphere normalization. Requires n >= 32.
LabeledCloud generate_shape(ShapeKind kind, std::size_t n, std::uint64_t seed);
LabeledCloud generate_shape(std::string_view kind, std::size_t n, std::uint64_t seed);

struct DatasetSplit {
  std::string split_name;
  std::size_t num_classes = 0;
  std::vector<LabeledCloud> examples;

  [[nodiscard]] const LabeledCloud& find(std::string_view example_id) const;
};

struct DatasetConfig {
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 25;
  std::size_t points = 256;
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetSplit train;
  DatasetSplit test;
};

Dataset build_dataset(const DatasetConfig& config);

/// Split directory: manifest.json plus <example_id>.bin / <example_id>.json per example.
void save_split(const std::filesystem::path& dir, const DatasetSplit& split);
DatasetSplit load_split(const std::filesystem::path& dir);

/// Label written on degenerate (x, x) pairs used as clean training data.
inline constexpr std::string_view kCleanAttack = "clean";

struct PairRecord {
  std::string example_id;
  std::string attack_name;
  std::string victim_name;
  PointCloud clean;
  PointCloud adversarial;
  std::size_t label = 0;

  [[nodiscard]] std::string key() const;
};

/// Directory-backed store keyed by (example_id, attack_name, victim_name). Each record is
/// <key>.bin (adversarial), <key>.clean.bin and <key>.json; manifest.json lists the sorted keys.
/// One writer at a time; any number of readers.
std::size_t store_pairs(const std::filesystem::path& store, const std::vector<PairRecord>& records);

struct PairFilter {
  std::optional<std::string> attack;
  std::optional<std::string> victim;
};

/// Matching records in ascending key order. Throws IoError if the store is missing.
std::vector<PairRecord> load_pairs(const std::filesystem::path& store, const PairFilter& filter = {});

/// Point-cloud file pair shared by the CLI: <stem>.bin (float32 LE, N x 3) and optional metadata.
void save_cloud(const std::filesystem::path& bin_file, const PointCloud& cloud);
PointCloud load_cloud(const std::filesystem::path& bin_file);

}  // namespace apckit::data
