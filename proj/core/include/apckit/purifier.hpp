#pragma once

// Adversarial point counterattack: a purifier that predicts a per-point
// counter-perturbation C for an (SOR-preprocessed) input cloud x and returns x + C.
//
// Encoder:
//   local   per-neighbor shared MLP on [x_i ; p_ij] for the k nearest neighbors, max over j -> L (N x d)
//   global  shared MLP on L, max over points -> G (1 x d)
//   fusion  shared MLP on [L ; G repeated N times] -> E (N x d)
// Decoder: 3-layer MLP with GELU, E -> C (N x 3). The last decoder layer starts at zero,
// so an untrained purifier is the identity map.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apckit/autodiff.hpp"
#include "apckit/datasets.hpp"
#include "apckit/params.hpp"
#include "apckit/victims.hpp"

namespace apckit::purifier {

enum class LocalBlock {
  kPooled,     ///< shared MLP per (point, neighbor) pair, max-pooled over neighbors
  kFlattened,  ///< one MLP on the flattened (k + 1) * 3 neighborhood
};

struct ApcConfig {
  // Architecture.
  std::size_t k = 8;
  std::size_t feature_dim = 32;
  std::size_t local_hidden = 32;
  std::vector<std::size_t> decoder_hidden = {64, 32};
  LocalBlock local_block = LocalBlock::kPooled;

  // Loss weights: L = ce + alpha * geo + beta * sem.
  double alpha = 1.0;
  double beta = 1.0;
  ad::SetDistance geo_distance = ad::SetDistance::kChamfer;

  // SOR preprocessing, applied to training inputs and at inference.
  bool preprocess = true;
  std::size_t sor_k = 2;
  double sor_alpha = 1.1;

  // Training.
  std::size_t epochs = 30;
  float learning_rate = 1e-3F;
  std::size_t batch_size = 16;
  double subsample_fraction = 0.30;
  /// Fixed number of pairs per attack; overrides subsample_fraction when set.
  std::optional<std::size_t> pairs_per_attack;
  std::vector<std::string> attacks = {"pgd", "knn", "drop"};
  bool include_clean = true;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument on out-of-range values.
  void validate() const;
};

/// Graph handles of one purifier forward pass.
struct PurifierGraph {
  ad::Var local;     ///< L, N x d
  ad::Var global;    ///< G, 1 x d
  ad::Var encoded;   ///< E, N x d
  ad::Var counter;   ///< C, N x 3
  ad::Var purified;  ///< x + C
};

class ApcModel {
 public:
  explicit ApcModel(ApcConfig config);
  ApcModel(ApcConfig config, ParamSet params);
  ApcModel(const ApcModel& other);
  ApcModel& operator=(const ApcModel& other);

  [[nodiscard]] const ApcConfig& config() const { return config_; }
  ApcConfig& mutable_config() { return config_; }
  [[nodiscard]] const ParamSet& params() const { return params_; }
  ParamSet& mutable_params() { return params_; }

  /// Builds the purifier graph for an N x 3 node (N > k). Counts as one forward pass.
  template <typename T>
  PurifierGraph forward(ad::Tape<T>& tape, ad::Var points, const BoundParams<T>& bound) const;

  /// Number of forward passes run so far on this instance (any precision).
  [[nodiscard]] std::size_t forward_calls() const { return forward_calls_.load(); }
  void reset_forward_calls() { forward_calls_.store(0); }

  void save(const std::filesystem::path& dir) const;
  static ApcModel load(const std::filesystem::path& dir);

 private:
  ApcConfig config_;
  ParamSet params_;
  mutable std::atomic<std::size_t> forward_calls_{0};
};

/// Encoder features E (N x d) for a cloud with N > k.
ad::Matrix<float> apc_encode(const ApcModel& model, const PointCloud& cloud);
/// Global feature G (1 x d).
ad::Matrix<float> apc_global_feature(const ApcModel& model, const PointCloud& cloud);

struct PurifyResult {
  PointCloud purified;
  Points counter;
  std::size_t pre_sor_count = 0;
  std::size_t post_sor_count = 0;
};

/// Optional SOR, then one purifier forward pass. Throws DegenerateInput if the
/// (preprocessed) cloud has no more than k points.
PurifyResult apc_purify(const ApcModel& model, const PointCloud& cloud, bool preprocess);
/// apc_purify with the model's configured preprocessing.
PurifyResult apc_purify(const ApcModel& model, const PointCloud& cloud);

std::size_t apc_param_count(const ApcModel& model);

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double geo = 0.0;
  double sem = 0.0;
};

/// One-sided Chamfer (or the configured alternative) from purified to clean.
double loss_geo(const PointCloud& purified, const PointCloud& clean,
                ad::SetDistance kind = ad::SetDistance::kChamfer);
PointsD loss_geo_gradient(const PointsD& purified, const PointCloud& clean,
                          ad::SetDistance kind = ad::SetDistance::kChamfer);

/// Mean squared difference of the victim's global features; the clean side is a constant.
double loss_sem(const victims::Classifier& victim, const PointCloud& purified, const PointCloud& clean);
PointsD loss_sem_gradient(const victims::Classifier& victim, const PointsD& purified, const PointCloud& clean);

LossBreakdown loss_total(const victims::Classifier& victim, const PointCloud& purified, const PointCloud& clean,
                         std::size_t label, double alpha, double beta,
                         ad::SetDistance kind = ad::SetDistance::kChamfer);
/// Double-precision evaluation on raw coordinates, for gradient checks.
LossBreakdown loss_total(const victims::Classifier& victim, const PointsD& purified, const PointCloud& clean,
                         std::size_t label, double alpha, double beta,
                         ad::SetDistance kind = ad::SetDistance::kChamfer);
PointsD loss_total_gradient(const victims::Classifier& victim, const PointsD& purified, const PointCloud& clean,
                            std::size_t label, double alpha, double beta,
                            ad::SetDistance kind = ad::SetDistance::kChamfer);

/// Training loss of one pair as a function of the purifier parameters, in double precision.
/// `input` is the purifier input (already preprocessed). When `param_grads` is given it
/// receives d(total)/d(param) for every tensor in model.params().
LossBreakdown pair_loss(const ApcModel& model, const victims::Classifier& victim, const PointCloud& input,
                        const PointCloud& clean, std::size_t label,
                        std::vector<ad::Matrix<double>>* param_grads = nullptr);

struct ApcEpochStats {
  std::size_t epoch = 0;
  LossBreakdown mean;
};

struct ApcTrainLog {
  /// Mean loss over the training pairs before any update.
  LossBreakdown initial;
  std::vector<ApcEpochStats> epochs;
  std::map<std::string, std::size_t> pairs_per_attack;
  std::size_t training_pairs = 0;
  std::size_t skipped_pairs = 0;
  std::uint64_t victim_hash_before = 0;
  std::uint64_t victim_hash_after = 0;
  double seconds = 0.0;
};

struct ApcTrainResult {
  ApcModel model;
  ApcTrainLog log;
};

/// The pairs train_apc would use: per attack name in config.attacks (plus "clean" when
/// include_clean), a seeded subsample of round(rho * available) records, or pairs_per_attack.
std::vector<data::PairRecord> select_training_pairs(const std::vector<data::PairRecord>& records,
                                                    const ApcConfig& config,
                                                    std::map<std::string, std::size_t>* per_attack = nullptr);

/// Trains only the purifier; the victim is read-only. A single-attack list gives the
/// independent (IAPC) variant. Throws InvalidArgument if an attack has no records.
ApcTrainResult train_apc(const victims::VictimModel& victim, const std::vector<data::PairRecord>& records,
                         const ApcConfig& config);

}  // namespace apckit::purifier
