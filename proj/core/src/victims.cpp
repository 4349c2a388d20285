#include "apckit/victims.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include <json.hpp>

#include "apckit/errors.hpp"
#include "apckit/geometry.hpp"

namespace apckit::victims {

namespace {

using json = nlohmann::json;

struct LayerShape {
  const char* name;
  std::size_t in;
  std::size_t out;
};

std::vector<LayerShape> layer_shapes(const VictimConfig& c) {
  const std::size_t df = c.feature_dim;
  if (c.architecture == Architecture::kPointNetMini) {
    return {{"mlp1", 3, 64}, {"mlp2", 64, 128}, {"mlp3", 128, df}, {"head1", df, 128}, {"head2", 128, c.num_classes}};
  }
  return {{"edge1", 6, 64}, {"edge2", 64, 64}, {"point1", 64, df}, {"head1", df, 128}, {"head2", 128, c.num_classes}};
}

void validate(const VictimConfig& c) {
  if (c.num_classes < 2) throw InvalidArgument("victim needs at least two classes");
  if (c.feature_dim == 0) throw InvalidArgument("victim feature_dim must be positive");
  if (c.architecture == Architecture::kDgcnnMini && c.k_graph == 0) throw InvalidArgument("k_graph must be positive");
}

template <typename T>
ad::Var dense(ad::Tape<T>& t, ad::Var x, const BoundParams<T>& p, std::size_t layer) {
  return ad::linear(t, x, p[2 * layer], p[2 * layer + 1]);
}

Prediction read_prediction(const ad::Tape<float>& tape, const ForwardOutput& out) {
  Prediction p;
  p.logits = tape.value(out.logits).row(0);
  p.feature = tape.value(out.feature).row(0);
  Eigen::Index arg = 0;
  p.logits.maxCoeff(&arg);
  p.label = static_cast<std::size_t>(arg);
  return p;
}

}  // namespace

std::string architecture_name(Architecture arch) {
  return arch == Architecture::kPointNetMini ? "pointnet_mini" : "dgcnn_mini";
}

Architecture architecture_from_name(const std::string& name) {
  if (name == "pointnet_mini") return Architecture::kPointNetMini;
  if (name == "dgcnn_mini") return Architecture::kDgcnnMini;
  throw InvalidArgument("unknown victim architecture: " + name);
}

VictimModel::VictimModel(const VictimConfig& config) : config_(config) {
  validate(config_);
  Rng rng(derive_seed(config_.seed, {"victim-init", name()}));
  for (const auto& l : layer_shapes(config_)) add_dense(params_, l.name, l.in, l.out, rng);
}

VictimModel::VictimModel(const VictimConfig& config, ParamSet params) : config_(config), params_(std::move(params)) {
  validate(config_);
  const auto shapes = layer_shapes(config_);
  if (params_.size() != 2 * shapes.size()) throw InvalidArgument("parameter set does not match " + name());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& w = params_[2 * i];
    const auto& b = params_[2 * i + 1];
    if (w.name != std::string(shapes[i].name) + ".weight" ||
        w.value.rows() != static_cast<Eigen::Index>(shapes[i].in) ||
        w.value.cols() != static_cast<Eigen::Index>(shapes[i].out) || b.value.cols() != w.value.cols()) {
      throw InvalidArgument("parameter " + w.name + " has the wrong name or shape for " + name());
    }
  }
}

void VictimModel::check_input(std::size_t n_points) const {
  if (n_points == 0) throw InvalidArgument(name() + ": empty cloud");
  if (config_.architecture == Architecture::kDgcnnMini && n_points <= config_.k_graph) {
    throw InvalidArgument("dgcnn_mini needs more than k_graph=" + std::to_string(config_.k_graph) + " points");
  }
}

template <typename T>
ForwardOutput VictimModel::forward_impl(ad::Tape<T>& t, ad::Var points, const BoundParams<T>& p) const {
  const auto& x = t.value(points);
  if (x.cols() != 3) throw InvalidArgument(name() + ": input must have 3 columns");
  check_input(static_cast<std::size_t>(x.rows()));
  ad::Var per_point;
  if (config_.architecture == Architecture::kPointNetMini) {
    ad::Var h = ad::gelu(t, dense(t, points, p, 0));
    h = ad::gelu(t, dense(t, h, p, 1));
    per_point = ad::gelu(t, dense(t, h, p, 2));
  } else {
    // The graph is rebuilt from the current coordinates on every call.
    const geometry::NeighborIndex nb = geometry::knn_indices(PointsD(x.template cast<double>()), config_.k_graph);
    ad::Var e = ad::gelu(t, ad::edge_linear(t, points, nb.flat(), config_.k_graph, p[0], p[1], ad::EdgeForm::kDifference));
    e = ad::gelu(t, dense(t, e, p, 1));
    const ad::Var local = ad::segment_max(t, e, static_cast<Eigen::Index>(config_.k_graph));
    per_point = ad::gelu(t, dense(t, local, p, 2));
  }
  const ad::Var feature = ad::column_max(t, per_point);
  const ad::Var h = ad::gelu(t, dense(t, feature, p, 3));
  const ad::Var logits = dense(t, h, p, 4);
  return {logits, feature};
}

ForwardOutput VictimModel::forward(ad::Tape<float>& tape, ad::Var points) const {
  return forward_impl(tape, points, BoundParams<float>::bind(tape, params_, false));
}

ForwardOutput VictimModel::forward(ad::Tape<double>& tape, ad::Var points) const {
  return forward_impl(tape, points, BoundParams<double>::bind(tape, params_, false));
}

ForwardOutput VictimModel::forward_trainable(ad::Tape<float>& tape, ad::Var points, BoundParams<float>& bound) const {
  bound = BoundParams<float>::bind(tape, params_, true);
  return forward_impl(tape, points, bound);
}

void VictimModel::save(const std::filesystem::path& dir) const {
  const json meta = {{"num_classes", config_.num_classes},
                     {"feature_dim", config_.feature_dim},
                     {"k_graph", config_.k_graph},
                     {"seed", config_.seed},
                     {"version", 1}};
  save_checkpoint(dir, Checkpoint{name(), meta.dump(), params_});
}

VictimModel VictimModel::load(const std::filesystem::path& dir) {
  Checkpoint ckpt = load_checkpoint(dir);
  const json meta = json::parse(ckpt.metadata_json);
  VictimConfig c;
  c.architecture = architecture_from_name(ckpt.architecture);
  c.num_classes = meta.at("num_classes").get<std::size_t>();
  c.feature_dim = meta.at("feature_dim").get<std::size_t>();
  c.k_graph = meta.value("k_graph", std::size_t{8});
  c.seed = meta.value("seed", std::uint64_t{0});
  return VictimModel(c, std::move(ckpt.params));
}

Prediction predict(const Classifier& model, const PointCloud& cloud) {
  ad::Tape<float> tape;
  const ad::Var x = tape.constant(cloud.points());
  return read_prediction(tape, model.forward(tape, x));
}

std::size_t predict_label(const Classifier& model, const PointCloud& cloud) { return predict(model, cloud).label; }

Prediction forward_pointnet_mini(const VictimModel& model, const PointCloud& cloud) {
  if (model.config().architecture != Architecture::kPointNetMini) {
    throw InvalidArgument("forward_pointnet_mini called on " + model.name());
  }
  return predict(model, cloud);
}

Prediction forward_dgcnn_mini(const VictimModel& model, const PointCloud& cloud) {
  if (model.config().architecture != Architecture::kDgcnnMini) {
    throw InvalidArgument("forward_dgcnn_mini called on " + model.name());
  }
  return predict(model, cloud);
}

double cross_entropy(const Classifier& model, const PointsD& points, std::size_t label) {
  ad::Tape<double> tape;
  const ad::Var x = tape.constant(ad::Matrix<double>(points));
  const ForwardOutput out = model.forward(tape, x);
  return tape.scalar(ad::cross_entropy(tape, out.logits, label));
}

PointsD input_gradient(const Classifier& model, const PointCloud& cloud, std::size_t label) {
  if (!model.differentiable()) throw UnsupportedOperation(model.name() + " does not support input gradients");
  if (label >= model.num_classes()) throw InvalidArgument("input_gradient: label out of range");
  ad::Tape<double> tape;
  const ad::Var x = tape.variable(ad::Matrix<double>(cloud.as_double()));
  const ForwardOutput out = model.forward(tape, x);
  const ad::Var loss = ad::cross_entropy(tape, out.logits, label);
  tape.backward(loss);
  return PointsD(tape.grad(x));
}

std::size_t param_count(const VictimModel& model) { return model.params().count(); }

double mean_loss(const Classifier& model, const data::DatasetSplit& split) {
  if (split.examples.empty()) throw InvalidArgument("mean_loss: empty split");
  double total = 0.0;
  for (const auto& ex : split.examples) {
    ad::Tape<float> tape;
    const ad::Var x = tape.constant(ex.cloud.points());
    total += tape.scalar(ad::cross_entropy(tape, model.forward(tape, x).logits, ex.label));
  }
  return total / static_cast<double>(split.examples.size());
}

double accuracy(const Classifier& model, const data::DatasetSplit& split) {
  if (split.examples.empty()) throw InvalidArgument("accuracy: empty split");
  std::size_t correct = 0;
  for (const auto& ex : split.examples) correct += predict_label(model, ex.cloud) == ex.label ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(split.examples.size());
}

TrainLog train_victim(VictimModel& model, const data::DatasetSplit& train, const TrainConfig& config,
                      const data::DatasetSplit* test) {
  if (train.examples.empty()) throw InvalidArgument("train_victim: empty split");
  if (config.batch_size == 0 || config.epochs == 0) throw InvalidArgument("train_victim: epochs and batch size must be positive");
  const auto start = std::chrono::steady_clock::now();
  TrainLog log;
  log.initial_loss = mean_loss(model, train);

  Adam adam(model.params(), {.learning_rate = config.learning_rate, .weight_decay = config.weight_decay});
  Rng rng(derive_seed(config.seed, {"train-victim", model.name()}));
  std::vector<std::size_t> order(train.examples.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start_i = 0; start_i < order.size(); start_i += config.batch_size) {
      const std::size_t end_i = std::min(order.size(), start_i + config.batch_size);
      std::vector<MatrixF> grads = zero_grads(model.params());
      for (std::size_t b = start_i; b < end_i; ++b) {
        const auto& ex = train.examples[order[b]];
        ad::Tape<float> tape;
        const ad::Var x = tape.constant(ex.cloud.points());
        BoundParams<float> bound;
        const ForwardOutput out = model.forward_trainable(tape, x, bound);
        const ad::Var loss = ad::cross_entropy(tape, out.logits, ex.label);
        tape.backward(loss);
        accumulate_grads(grads, tape, bound);
        loss_sum += tape.scalar(loss);
        Eigen::Index arg = 0;
        tape.value(out.logits).row(0).maxCoeff(&arg);
        correct += static_cast<std::size_t>(arg) == ex.label ? 1 : 0;
      }
      const float inv = 1.0F / static_cast<float>(end_i - start_i);
      for (auto& g : grads) g *= inv;
      adam.step(model.mutable_params(), grads);
    }
    log.epochs.push_back({epoch, loss_sum / static_cast<double>(order.size()),
                          100.0 * static_cast<double>(correct) / static_cast<double>(order.size())});
  }
  log.final_train_accuracy = accuracy(model, train);
  if (test != nullptr) log.final_test_accuracy = accuracy(model, *test);
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

}  // namespace apckit::victims
