#pragma once

// Robustness evaluation: defenses in front of a frozen victim, cross-model transfer,
// ablations over the purifier's training recipe, and timing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "apckit/datasets.hpp"
#include "apckit/defenses.hpp"
#include "apckit/purifier.hpp"
#include "apckit/victims.hpp"

namespace apckit::eval {

/// An input-level transformation applied before the victim sees a cloud.
class Defense {
 public:
  virtual ~Defense() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  /// `example_seed` feeds randomized defenses; deterministic ones ignore it.
  [[nodiscard]] virtual PointCloud apply(const PointCloud& cloud, std::uint64_t example_seed) const = 0;
  [[nodiscard]] virtual std::size_t param_count() const { return 0; }
};

/// "No Defense": returns the cloud unchanged.
class IdentityDefense final : public Defense {
 public:
  [[nodiscard]] std::string name() const override { return "none"; }
  [[nodiscard]] PointCloud apply(const PointCloud& cloud, std::uint64_t) const override { return cloud; }
};

/// SRS or SOR.
class BaselineDefense final : public Defense {
 public:
  explicit BaselineDefense(defenses::DefenseSpec spec) : spec_(std::move(spec)) {}
  [[nodiscard]] std::string name() const override { return spec_.name; }
  [[nodiscard]] PointCloud apply(const PointCloud& cloud, std::uint64_t example_seed) const override;

 private:
  defenses::DefenseSpec spec_;
};

/// A trained purifier. Holds a shared, read-only model.
class ApcDefense final : public Defense {
 public:
  explicit ApcDefense(std::shared_ptr<const purifier::ApcModel> model, std::string name = "apc")
      : model_(std::move(model)), name_(std::move(name)) {}
  [[nodiscard]] std::string name() const override { return name_; }
  [[nodiscard]] PointCloud apply(const PointCloud& cloud, std::uint64_t example_seed) const override;
  [[nodiscard]] std::size_t param_count() const override { return purifier::apc_param_count(*model_); }
  [[nodiscard]] const purifier::ApcModel& model() const { return *model_; }

 private:
  std::shared_ptr<const purifier::ApcModel> model_;
  std::string name_;
};

struct EvalReport {
  std::string victim_name;
  std::string defense_name;
  /// Top-1 accuracy in percent per attack name.
  std::map<std::string, double> per_attack_accuracy;
  std::map<std::string, std::size_t> per_attack_count;
  /// Unweighted mean of per_attack_accuracy.
  double average = 0.0;
  double clean_accuracy = 0.0;
  std::size_t clean_count = 0;
  /// Inputs the defense could not process (too few points); these are classified as given.
  std::size_t fallback_count = 0;
  double wall_time_per_example = 0.0;
  /// Seeds, configs, code version; free-form JSON object text.
  std::string metadata_json = "{}";
};

/// Accuracy per attack with `defense` in front of `victim`. Clean accuracy uses each distinct
/// example's clean cloud through the same defense. An empty `attacks` list selects every
/// attack in `pairs` except "clean". Throws InvalidArgument when the selection is empty.
EvalReport eval_defense(const victims::Classifier& victim, const Defense& defense,
                        const std::vector<data::PairRecord>& pairs, const std::vector<std::string>& attacks = {});
/// Same, loading records for victim.name() from a pair store.
EvalReport eval_defense(const victims::Classifier& victim, const Defense& defense,
                        const std::filesystem::path& store, const std::vector<std::string>& attacks = {});

/// Unweighted mean of the given attacks' accuracies. Throws InvalidArgument on a missing name.
double mean_accuracy(const EvalReport& report, const std::vector<std::string>& attacks);

struct TransferTarget {
  const victims::Classifier* model = nullptr;
  /// Test pairs crafted against this target.
  std::vector<data::PairRecord> pairs;
};

struct TransferMatrix {
  /// source victim -> target victim -> average adversarial accuracy.
  std::map<std::string, std::map<std::string, double>> average;
  /// Full reports, keyed by target name.
  std::map<std::string, EvalReport> with_apc;
  std::map<std::string, EvalReport> without_defense;
};

/// Frozen purifier in front of each target. Throws InvalidArgument for a target without pairs,
/// std::logic_error if the purifier's parameters change.
TransferMatrix eval_cross_model(const purifier::ApcModel& apc, const std::string& source_victim,
                                const std::vector<TransferTarget>& targets, const std::vector<std::string>& attacks = {});

enum class AblationKind { kHybridCount, kLossTerms, kDistanceMetric, kCleanInclusion };

std::string ablation_name(AblationKind kind);
AblationKind ablation_from_name(const std::string& name);

struct AblationRow {
  std::string label;
  std::map<std::string, double> values;
};

struct AblationTable {
  std::string kind;
  std::vector<std::string> columns;
  std::vector<AblationRow> rows;
};

struct AblationInputs {
  const victims::VictimModel* victim = nullptr;
  std::vector<data::PairRecord> train_pairs;
  std::vector<data::PairRecord> test_pairs;
  /// Every row is averaged over these purifier seeds.
  std::vector<std::uint64_t> seeds = {0};
};

/// Trains one purifier per row and seed and evaluates it on every attack in test_pairs.
/// Columns: clean, adv (mean over all test attacks), and for hybrid_count also in, out and pairs.
/// hybrid_count keeps the total pair budget of the full hybrid (sum over base.attacks of
/// round(rho * available)) for every row and averages over attack combinations.
/// Throws InvalidArgument when a required attack has no training pairs.
AblationTable run_ablation(AblationKind kind, const purifier::ApcConfig& base, const AblationInputs& inputs);

struct EfficiencyRow {
  std::string defense;
  double median_seconds = 0.0;
  std::size_t param_count = 0;
};

/// Median single-cloud defense time over `repetitions` calls (cycling through `samples`) after
/// `warmup` untimed calls. Only the apply() call is timed.
std::vector<EfficiencyRow> measure_efficiency(const std::vector<const Defense*>& defenses,
                                              const std::vector<PointCloud>& samples, std::size_t repetitions = 100,
                                              std::size_t warmup = 10);

}  // namespace apckit::eval
