#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "apckit/datasets.hpp"
#include "apckit/victims.hpp"

namespace apckit::attacks {

/// Hyperparameters of one white-box untargeted attack.
///
/// `method` selects the algorithm (pgd, ifgm, perturb, drop, add, knn, clean); when empty the
/// name is used. Method-specific knobs live in `extras`:
///   perturb/add/knn: lambda (L2 trade-off), kappa (margin confidence)
///   drop:            drop_count, rounds
///   add:             add_count, clusters (0 = independent points), cluster_radius, compact_weight
///   knn:             gamma (kNN penalty weight), knn_k
struct AttackSpec {
  std::string name;
  std::string method;
  double epsilon = 0.0;
  std::size_t steps = 1;
  double step_size = 0.01;
  std::map<std::string, double> extras;
  std::uint64_t seed = 0;

  [[nodiscard]] const std::string& algorithm() const { return method.empty() ? name : method; }
  [[nodiscard]] double extra(const std::string& key, double fallback) const;
};

struct AttackResult {
  PointCloud adversarial;
  /// Victim's argmax on `adversarial` differs from the ground truth.
  bool success = false;
  std::size_t iterations_used = 0;
};

/// Defaults for pgd, ifgm, perturb, drop, add, cluster, knn and clean.
AttackSpec default_spec(const std::string& name);
/// The attack names default_spec knows, in canonical order (clean excluded).
std::vector<std::string> default_attack_names();

/// L-infinity PGD: x <- clip_{x0, eps}(x + step * sign(grad CE)), starting at the clean cloud.
AttackResult attack_pgd(const victims::Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec);
/// L2 iterative fast gradient: x <- proj_{|x - x0|_2 <= eps}(x + step * g / |g|_2); zero gradients skip the step.
AttackResult attack_ifgm(const victims::Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec);
/// C&W-style shift: minimize margin + lambda |delta|^2 with Adam; returns the smallest successful iterate.
AttackResult attack_perturb_cw(const victims::Classifier& model, const data::LabeledCloud& example,
                               const AttackSpec& spec);
/// Saliency drop: removes drop_count points over `rounds` rounds, highest s_i = -<grad_i, x_i - centroid> first.
AttackResult attack_drop(const victims::Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec);
/// Point or cluster adding: optimizes only the appended points; originals come first, bit-unchanged.
AttackResult attack_add(const victims::Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec);
/// The starting coordinates attack_add optimizes from (m x 3), deterministic in spec.seed.
Points add_initialization(const data::LabeledCloud& example, const AttackSpec& spec);
/// C&W shift with an extra gamma * mean squared kNN distance term, neighbors recomputed every step.
AttackResult attack_knn_constrained(const victims::Classifier& model, const data::LabeledCloud& example,
                                    const AttackSpec& spec);

/// Dispatches on spec.algorithm(). "clean" returns the example unchanged.
AttackResult run_attack(const victims::Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec);

struct AttackSetSummary {
  std::size_t records_written = 0;
  std::map<std::string, std::size_t> counts;
  /// Percent of examples where the victim was fooled, per attack name.
  std::map<std::string, double> success_rate;
};

/// Runs every spec on every example and persists one PairRecord each. Per-example seeds are
/// derived from (master_seed, example_id, attack name). Records are flushed after every example.
AttackSetSummary generate_attack_set(const victims::Classifier& model, const data::DatasetSplit& split,
                                     const std::vector<AttackSpec>& specs, const std::filesystem::path& store,
                                     std::uint64_t master_seed);

}  // namespace apckit::attacks
