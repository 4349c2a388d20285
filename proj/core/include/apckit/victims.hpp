#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apckit/autodiff.hpp"
#include "apckit/datasets.hpp"
#include "apckit/params.hpp"
#include "apckit/point_cloud.hpp"

namespace apckit::victims {

/// Graph handles produced by a classifier forward pass.
struct ForwardOutput {
  ad::Var logits;   ///< 1 x num_classes
  ad::Var feature;  ///< 1 x feature_dim, the global feature f(x)
};

/// A point-cloud classifier that can be differentiated with respect to its input coordinates.
/// Attacks, purifier losses and evaluation only see this interface.
class Classifier {
 public:
  virtual ~Classifier() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::size_t num_classes() const = 0;
  [[nodiscard]] virtual std::size_t feature_dim() const = 0;
  [[nodiscard]] virtual bool differentiable() const { return true; }
  /// Throws InvalidArgument when a cloud of this size cannot be classified.
  virtual void check_input(std::size_t /*n_points*/) const {}

  /// Forward graph for an N x 3 node. Parameters enter the tape as constants.
  virtual ForwardOutput forward(ad::Tape<float>& tape, ad::Var points) const = 0;
  virtual ForwardOutput forward(ad::Tape<double>& tape, ad::Var points) const = 0;
};

struct Prediction {
  Eigen::RowVectorXf logits;
  Eigen::RowVectorXf feature;
  std::size_t label = 0;
};

Prediction predict(const Classifier& model, const PointCloud& cloud);
std::size_t predict_label(const Classifier& model, const PointCloud& cloud);

/// Exact gradient of the cross-entropy of `model` on `cloud` w.r.t. every coordinate,
/// evaluated in double precision. Throws UnsupportedOperation for non-differentiable models.
PointsD input_gradient(const Classifier& model, const PointCloud& cloud, std::size_t label);
/// Cross-entropy in double precision (the quantity input_gradient differentiates).
double cross_entropy(const Classifier& model, const PointsD& points, std::size_t label);

enum class Architecture { kPointNetMini, kDgcnnMini };

std::string architecture_name(Architecture arch);
Architecture architecture_from_name(const std::string& name);

struct VictimConfig {
  Architecture architecture = Architecture::kPointNetMini;
  std::size_t num_classes = 8;
  std::size_t feature_dim = 128;
  /// Neighbors per point in the edge-convolution graph (dgcnn_mini only).
  std::size_t k_graph = 8;
  std::uint64_t seed = 0;
};

/// pointnet_mini: shared MLP 3-64-128-d_f, max-pool, head d_f-128-C.
/// dgcnn_mini: edge MLP over [x_i ; x_j - x_i] 6-64-64 max-pooled over k neighbors,
/// point MLP 64-d_f, max-pool, head d_f-128-C. GELU activations throughout, no batch norm.
class VictimModel final : public Classifier {
 public:
  explicit VictimModel(const VictimConfig& config);
  VictimModel(const VictimConfig& config, ParamSet params);

  [[nodiscard]] std::string name() const override { return architecture_name(config_.architecture); }
  [[nodiscard]] std::size_t num_classes() const override { return config_.num_classes; }
  [[nodiscard]] std::size_t feature_dim() const override { return config_.feature_dim; }
  void check_input(std::size_t n_points) const override;

  ForwardOutput forward(ad::Tape<float>& tape, ad::Var points) const override;
  ForwardOutput forward(ad::Tape<double>& tape, ad::Var points) const override;
  /// Forward pass with parameters bound as variables, for training.
  ForwardOutput forward_trainable(ad::Tape<float>& tape, ad::Var points, BoundParams<float>& bound) const;

  [[nodiscard]] const VictimConfig& config() const { return config_; }
  [[nodiscard]] const ParamSet& params() const { return params_; }
  ParamSet& mutable_params() { return params_; }

  void save(const std::filesystem::path& dir) const;
  static VictimModel load(const std::filesystem::path& dir);

 private:
  template <typename T>
  ForwardOutput forward_impl(ad::Tape<T>& tape, ad::Var points, const BoundParams<T>& p) const;

  VictimConfig config_;
  ParamSet params_;
};

/// Forward pass of a pointnet_mini model. Throws InvalidArgument for any other architecture.
Prediction forward_pointnet_mini(const VictimModel& model, const PointCloud& cloud);
/// Forward pass of a dgcnn_mini model; the neighbor graph is rebuilt from `cloud` on every call.
Prediction forward_dgcnn_mini(const VictimModel& model, const PointCloud& cloud);

std::size_t param_count(const VictimModel& model);

struct TrainConfig {
  std::size_t epochs = 30;
  float learning_rate = 1e-3F;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  float weight_decay = 0.0F;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainLog {
  double initial_loss = 0.0;
  std::vector<EpochStats> epochs;
  double final_train_accuracy = 0.0;
  /// Only set when a test split was supplied.
  double final_test_accuracy = 0.0;
  double seconds = 0.0;
};

/// Mini-batch Adam on cross-entropy. Deterministic given config.seed.
TrainLog train_victim(VictimModel& model, const data::DatasetSplit& train, const TrainConfig& config,
                      const data::DatasetSplit* test = nullptr);

/// Mean cross-entropy over a split.
double mean_loss(const Classifier& model, const data::DatasetSplit& split);
/// Top-1 accuracy in percent.
double accuracy(const Classifier& model, const data::DatasetSplit& split);

}  // namespace apckit::victims
