#pragma once

// Toolkit configuration file: a JSON object with "schema_version": 1. Every key is optional and
// overrides the built-in default; unknown keys are rejected so typos do not pass silently.
//
// {
//   "schema_version": 1,
//   "seed": 0,
//   "dataset":   { "train_per_class", "test_per_class", "points" },
//   "victim":    { "feature_dim", "k_graph", "epochs", "learning_rate", "batch_size" },
//   "attacks":   { "names": [...], "<attack>": { "epsilon", "steps", "step_size", "<extra>": ... } },
//   "apc":       { "k", "feature_dim", "local_hidden", "decoder_hidden", "local_block", "alpha", "beta",
//                  "geo_distance", "preprocess", "sor_k", "sor_alpha", "epochs", "learning_rate",
//                  "batch_size", "subsample_fraction", "attacks", "include_clean" },
//   "defenses":  { "srs_drop_count", "sor_k", "sor_alpha" },
//   "eval":      { "efficiency_repetitions", "efficiency_samples" }
// }

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "apckit/attacks.hpp"
#include "apckit/datasets.hpp"
#include "apckit/defenses.hpp"
#include "apckit/purifier.hpp"
#include "apckit/victims.hpp"

namespace apckit::config {

inline constexpr int kSchemaVersion = 1;

struct ToolkitConfig {
  std::uint64_t seed = 0;
  data::DatasetConfig dataset;
  std::size_t victim_feature_dim = 128;
  std::size_t victim_k_graph = 8;
  victims::TrainConfig victim_training;
  std::vector<std::string> attack_names;
  std::map<std::string, attacks::AttackSpec> attack_specs;
  purifier::ApcConfig apc;
  defenses::DefenseSpec srs;
  defenses::DefenseSpec sor;
  std::size_t efficiency_repetitions = 100;
  std::size_t efficiency_samples = 30;

  /// Victim config for an architecture, seeded from `seed`.
  [[nodiscard]] victims::VictimConfig victim(victims::Architecture arch) const;
  /// Settings for a named attack, seeded from `seed`. Throws InvalidArgument for unknown names.
  [[nodiscard]] attacks::AttackSpec attack(const std::string& name) const;
};

ToolkitConfig default_config();
/// Parses config text, layering it over default_config(). Throws InvalidArgument on unknown keys,
/// wrong types or a missing/unsupported schema_version.
ToolkitConfig parse_config(const std::string& text);
/// Throws IoError when the file cannot be read.
ToolkitConfig load_config(const std::filesystem::path& file);
/// Full configuration, every key present.
std::string to_json(const ToolkitConfig& config);
/// Sets `seed` and propagates it to every seeded component.
void set_seed(ToolkitConfig& config, std::uint64_t seed);

}  // namespace apckit::config
