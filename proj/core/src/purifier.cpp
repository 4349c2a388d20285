#include "apckit/purifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "apckit/defenses.hpp"
#include "apckit/errors.hpp"
#include "apckit/geometry.hpp"

namespace apckit::purifier {

namespace {

using json = nlohmann::json;

// Fixed tensor layout: each layer contributes weight then bias.
enum Layer : std::size_t { kLocal1 = 0, kLocal2, kGlobal, kFusion, kDecoder0 };

template <typename T>
ad::Var dense(ad::Tape<T>& t, ad::Var x, const BoundParams<T>& p, std::size_t layer) {
  return ad::linear(t, x, p[2 * layer], p[2 * layer + 1]);
}

std::string distance_name(ad::SetDistance d) {
  switch (d) {
    case ad::SetDistance::kChamfer:
      return "chamfer";
    case ad::SetDistance::kChamferSymmetric:
      return "chamfer_symmetric";
    case ad::SetDistance::kHausdorff:
      return "hausdorff";
  }
  return "chamfer";
}

ad::SetDistance distance_from_name(const std::string& s) {
  if (s == "chamfer") return ad::SetDistance::kChamfer;
  if (s == "chamfer_symmetric") return ad::SetDistance::kChamferSymmetric;
  if (s == "hausdorff") return ad::SetDistance::kHausdorff;
  throw InvalidArgument("unknown distance metric: " + s);
}

json config_to_json(const ApcConfig& c) {
  return {{"k", c.k},
          {"feature_dim", c.feature_dim},
          {"local_hidden", c.local_hidden},
          {"decoder_hidden", c.decoder_hidden},
          {"local_block", c.local_block == LocalBlock::kPooled ? "pooled" : "flattened"},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"geo_distance", distance_name(c.geo_distance)},
          {"preprocess", c.preprocess},
          {"sor_k", c.sor_k},
          {"sor_alpha", c.sor_alpha},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"subsample_fraction", c.subsample_fraction},
          {"attacks", c.attacks},
          {"include_clean", c.include_clean},
          {"seed", c.seed},
          {"version", 1}};
}

ApcConfig config_from_json(const json& j) {
  ApcConfig c;
  c.k = j.at("k").get<std::size_t>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.local_hidden = j.at("local_hidden").get<std::size_t>();
  c.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
  c.local_block = j.at("local_block").get<std::string>() == "flattened" ? LocalBlock::kFlattened : LocalBlock::kPooled;
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.geo_distance = distance_from_name(j.at("geo_distance").get<std::string>());
  c.preprocess = j.at("preprocess").get<bool>();
  c.sor_k = j.at("sor_k").get<std::size_t>();
  c.sor_alpha = j.at("sor_alpha").get<double>();
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.subsample_fraction = j.value("subsample_fraction", c.subsample_fraction);
  c.attacks = j.value("attacks", c.attacks);
  c.include_clean = j.value("include_clean", c.include_clean);
  c.seed = j.value("seed", c.seed);
  return c;
}

ParamSet init_params(const ApcConfig& c) {
  c.validate();
  Rng rng(derive_seed(c.seed, {"apc-init"}));
  ParamSet p;
  const std::size_t local_in = c.local_block == LocalBlock::kPooled ? 6 : (c.k + 1) * 3;
  add_dense(p, "local1", local_in, c.local_hidden, rng);
  add_dense(p, "local2", c.local_hidden, c.feature_dim, rng);
  add_dense(p, "global1", c.feature_dim, c.feature_dim, rng);
  add_dense(p, "fusion1", 2 * c.feature_dim, c.feature_dim, rng);
  std::size_t width = c.feature_dim;
  for (std::size_t i = 0; i < c.decoder_hidden.size(); ++i) {
    add_dense(p, "decoder" + std::to_string(i + 1), width, c.decoder_hidden[i], rng);
    width = c.decoder_hidden[i];
  }
  add_dense(p, "decoder" + std::to_string(c.decoder_hidden.size() + 1), width, 3, rng, /*zero_init=*/true);
  return p;
}

/// Loss graph on a purified-cloud node.
template <typename T>
struct LossGraph {
  ad::Var total, ce, geo, sem;
};

template <typename T>
LossGraph<T> build_loss(ad::Tape<T>& t, const victims::Classifier& victim, ad::Var purified,
                        const ad::Matrix<T>& clean_points, const ad::Matrix<T>& clean_feature, std::size_t label,
                        double alpha, double beta, ad::SetDistance kind) {
  const victims::ForwardOutput out = victim.forward(t, purified);
  LossGraph<T> g;
  g.ce = ad::cross_entropy(t, out.logits, label);
  g.geo = ad::set_distance(t, purified, clean_points, kind);
  g.sem = ad::mean_squared_error(t, out.feature, clean_feature);
  g.total = ad::weighted_sum<T>(t, {{g.ce, T(1)}, {g.geo, static_cast<T>(alpha)}, {g.sem, static_cast<T>(beta)}});
  return g;
}

template <typename T>
ad::Matrix<T> clean_feature(const victims::Classifier& victim, const PointCloud& clean) {
  ad::Tape<T> t;
  const ad::Var x = t.constant(clean.points().template cast<T>());
  return t.value(victim.forward(t, x).feature);
}

template <typename T>
LossBreakdown read_loss(const ad::Tape<T>& t, const LossGraph<T>& g) {
  return {static_cast<double>(t.scalar(g.total)), static_cast<double>(t.scalar(g.ce)),
          static_cast<double>(t.scalar(g.geo)), static_cast<double>(t.scalar(g.sem))};
}

struct PreparedPair {
  ad::Matrix<float> input;
  ad::Matrix<float> clean;
  ad::Matrix<float> clean_feature;
  std::size_t label = 0;
};

LossBreakdown& operator+=(LossBreakdown& a, const LossBreakdown& b) {
  a.total += b.total;
  a.ce += b.ce;
  a.geo += b.geo;
  a.sem += b.sem;
  return a;
}

LossBreakdown scaled(LossBreakdown a, double s) {
  return {a.total * s, a.ce * s, a.geo * s, a.sem * s};
}

}  // namespace

void ApcConfig::validate() const {
  if (k < 1) throw InvalidArgument("apc: k must be >= 1");
  if (feature_dim < 1 || local_hidden < 1) throw InvalidArgument("apc: feature widths must be positive");
  for (std::size_t w : decoder_hidden) {
    if (w < 1) throw InvalidArgument("apc: decoder widths must be positive");
  }
  if (decoder_hidden.size() != 2) throw InvalidArgument("apc: decoder must have exactly two hidden layers");
  if (alpha < 0.0 || beta < 0.0) throw InvalidArgument("apc: alpha and beta must be nonnegative");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw InvalidArgument("apc: subsample fraction must lie in (0, 1]");
  }
  if (batch_size < 1) throw InvalidArgument("apc: batch size must be positive");
  if (!(learning_rate > 0.0F)) throw InvalidArgument("apc: learning rate must be positive");
}

ApcModel::ApcModel(ApcConfig config) : config_(std::move(config)), params_(init_params(config_)) {}

ApcModel::ApcModel(ApcConfig config, ParamSet params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const ParamSet reference = init_params(config_);
  if (reference.size() != params_.size()) throw InvalidArgument("apc: parameter set does not match config");
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i].name != params_[i].name || reference[i].value.rows() != params_[i].value.rows() ||
        reference[i].value.cols() != params_[i].value.cols()) {
      throw InvalidArgument("apc: parameter " + params_[i].name + " has the wrong name or shape");
    }
  }
}

ApcModel::ApcModel(const ApcModel& other)
    : config_(other.config_), params_(other.params_), forward_calls_(other.forward_calls_.load()) {}

ApcModel& ApcModel::operator=(const ApcModel& other) {
  if (this != &other) {
    config_ = other.config_;
    params_ = other.params_;
    forward_calls_.store(other.forward_calls_.load());
  }
  return *this;
}

template <typename T>
PurifierGraph ApcModel::forward(ad::Tape<T>& t, ad::Var points, const BoundParams<T>& p) const {
  const auto n = static_cast<std::size_t>(t.value(points).rows());
  if (t.value(points).cols() != 3) throw InvalidArgument("apc: input must have 3 columns");
  if (n <= config_.k) {
    throw DegenerateInput("apc: need more than k=" + std::to_string(config_.k) + " points, got " + std::to_string(n));
  }
  forward_calls_.fetch_add(1);
  const geometry::NeighborIndex nb =
      geometry::knn_indices(PointsD(t.value(points).template cast<double>()), config_.k);

  PurifierGraph g;
  if (config_.local_block == LocalBlock::kPooled) {
    ad::Var h = ad::gelu(t, ad::edge_linear(t, points, nb.flat(), config_.k, p[2 * kLocal1], p[2 * kLocal1 + 1],
                                            ad::EdgeForm::kConcat));
    h = ad::gelu(t, dense(t, h, p, kLocal2));
    g.local = ad::segment_max(t, h, static_cast<Eigen::Index>(config_.k));
  } else {
    const ad::Var flat = ad::neighborhood_flatten(t, points, nb.flat(), config_.k);
    const ad::Var h = ad::gelu(t, dense(t, flat, p, kLocal1));
    g.local = ad::gelu(t, dense(t, h, p, kLocal2));
  }
  g.global = ad::column_max(t, ad::gelu(t, dense(t, g.local, p, kGlobal)));
  const ad::Var fused_in = ad::concat_cols(t, g.local, ad::repeat_rows(t, g.global, static_cast<Eigen::Index>(n)));
  g.encoded = ad::gelu(t, dense(t, fused_in, p, kFusion));

  ad::Var h = g.encoded;
  const std::size_t last = kDecoder0 + config_.decoder_hidden.size();
  for (std::size_t layer = kDecoder0; layer < last; ++layer) h = ad::gelu(t, dense(t, h, p, layer));
  g.counter = dense(t, h, p, last);
  g.purified = ad::add(t, points, g.counter);
  return g;
}

template PurifierGraph ApcModel::forward<float>(ad::Tape<float>&, ad::Var, const BoundParams<float>&) const;
template PurifierGraph ApcModel::forward<double>(ad::Tape<double>&, ad::Var, const BoundParams<double>&) const;

void ApcModel::save(const std::filesystem::path& dir) const {
  save_checkpoint(dir, Checkpoint{"apc", config_to_json(config_).dump(), params_});
}

ApcModel ApcModel::load(const std::filesystem::path& dir) {
  Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.architecture != "apc") throw IoError("checkpoint in " + dir.string() + " is not an APC model");
  return ApcModel(config_from_json(json::parse(ckpt.metadata_json)), std::move(ckpt.params));
}

ad::Matrix<float> apc_encode(const ApcModel& model, const PointCloud& cloud) {
  if (cloud.size() <= model.config().k) throw InvalidArgument("apc_encode: need N > k");
  ad::Tape<float> t;
  const auto bound = BoundParams<float>::bind(t, model.params(), false);
  const ad::Var x = t.constant(cloud.points());
  return t.value(model.forward(t, x, bound).encoded);
}

ad::Matrix<float> apc_global_feature(const ApcModel& model, const PointCloud& cloud) {
  if (cloud.size() <= model.config().k) throw InvalidArgument("apc_global_feature: need N > k");
  ad::Tape<float> t;
  const auto bound = BoundParams<float>::bind(t, model.params(), false);
  const ad::Var x = t.constant(cloud.points());
  return t.value(model.forward(t, x, bound).global);
}

PurifyResult apc_purify(const ApcModel& model, const PointCloud& cloud, bool preprocess) {
  const auto& c = model.config();
  PointCloud input = cloud;
  if (preprocess) {
    if (cloud.size() <= c.sor_k) throw DegenerateInput("apc_purify: too few points for SOR");
    input = defenses::sor(cloud, c.sor_k, c.sor_alpha);
  }
  if (input.size() <= c.k) throw DegenerateInput("apc_purify: fewer than k+1 points after preprocessing");
  ad::Tape<float> t;
  const auto bound = BoundParams<float>::bind(t, model.params(), false);
  const ad::Var x = t.constant(input.points());
  const PurifierGraph g = model.forward(t, x, bound);
  Points counter = t.value(g.counter);
  Points purified = input.points() + counter;
  return PurifyResult{PointCloud(std::move(purified)), std::move(counter), cloud.size(), input.size()};
}

PurifyResult apc_purify(const ApcModel& model, const PointCloud& cloud) {
  return apc_purify(model, cloud, model.config().preprocess);
}

std::size_t apc_param_count(const ApcModel& model) { return model.params().count(); }

double loss_geo(const PointCloud& purified, const PointCloud& clean, ad::SetDistance kind) {
  ad::Tape<double> t;
  const ad::Var x = t.constant(ad::Matrix<double>(purified.as_double()));
  return t.scalar(ad::set_distance(t, x, ad::Matrix<double>(clean.as_double()), kind));
}

PointsD loss_geo_gradient(const PointsD& purified, const PointCloud& clean, ad::SetDistance kind) {
  ad::Tape<double> t;
  const ad::Var x = t.variable(ad::Matrix<double>(purified));
  t.backward(ad::set_distance(t, x, ad::Matrix<double>(clean.as_double()), kind));
  return PointsD(t.grad(x));
}

double loss_sem(const victims::Classifier& victim, const PointCloud& purified, const PointCloud& clean) {
  ad::Tape<double> t;
  const ad::Var x = t.constant(ad::Matrix<double>(purified.as_double()));
  const auto out = victim.forward(t, x);
  return t.scalar(ad::mean_squared_error(t, out.feature, clean_feature<double>(victim, clean)));
}

PointsD loss_sem_gradient(const victims::Classifier& victim, const PointsD& purified, const PointCloud& clean) {
  ad::Tape<double> t;
  const ad::Var x = t.variable(ad::Matrix<double>(purified));
  const auto out = victim.forward(t, x);
  t.backward(ad::mean_squared_error(t, out.feature, clean_feature<double>(victim, clean)));
  return PointsD(t.grad(x));
}

LossBreakdown loss_total(const victims::Classifier& victim, const PointsD& purified, const PointCloud& clean,
                         std::size_t label, double alpha, double beta, ad::SetDistance kind) {
  if (alpha < 0.0 || beta < 0.0) throw InvalidArgument("loss_total: alpha and beta must be nonnegative");
  ad::Tape<double> t;
  const ad::Var x = t.constant(ad::Matrix<double>(purified));
  const auto g = build_loss<double>(t, victim, x, clean.as_double(), clean_feature<double>(victim, clean), label,
                                    alpha, beta, kind);
  return read_loss(t, g);
}

LossBreakdown loss_total(const victims::Classifier& victim, const PointCloud& purified, const PointCloud& clean,
                         std::size_t label, double alpha, double beta, ad::SetDistance kind) {
  return loss_total(victim, purified.as_double(), clean, label, alpha, beta, kind);
}

PointsD loss_total_gradient(const victims::Classifier& victim, const PointsD& purified, const PointCloud& clean,
                            std::size_t label, double alpha, double beta, ad::SetDistance kind) {
  ad::Tape<double> t;
  const ad::Var x = t.variable(ad::Matrix<double>(purified));
  const auto g = build_loss<double>(t, victim, x, clean.as_double(), clean_feature<double>(victim, clean), label,
                                    alpha, beta, kind);
  t.backward(g.total);
  return PointsD(t.grad(x));
}

LossBreakdown pair_loss(const ApcModel& model, const victims::Classifier& victim, const PointCloud& input,
                        const PointCloud& clean, std::size_t label, std::vector<ad::Matrix<double>>* param_grads) {
  const auto& c = model.config();
  ad::Tape<double> t;
  const auto bound = BoundParams<double>::bind(t, model.params(), param_grads != nullptr);
  const ad::Var x = t.constant(ad::Matrix<double>(input.as_double()));
  const PurifierGraph pg = model.forward(t, x, bound);
  const auto g = build_loss<double>(t, victim, pg.purified, clean.as_double(), clean_feature<double>(victim, clean),
                                    label, c.alpha, c.beta, c.geo_distance);
  if (param_grads != nullptr) {
    t.backward(g.total);
    param_grads->clear();
    for (const ad::Var v : bound.vars) param_grads->push_back(t.grad(v));
  }
  return read_loss(t, g);
}

std::vector<data::PairRecord> select_training_pairs(const std::vector<data::PairRecord>& records,
                                                    const ApcConfig& config,
                                                    std::map<std::string, std::size_t>* per_attack) {
  config.validate();
  std::vector<std::string> names = config.attacks;
  if (names.empty()) throw InvalidArgument("train_apc: attack list is empty");
  if (config.include_clean) names.emplace_back(data::kCleanAttack);
  std::vector<data::PairRecord> selected;
  for (const auto& name : names) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].attack_name == name) pool.push_back(i);
    }
    if (pool.empty()) throw InvalidArgument("train_apc: no records for attack '" + name + "'");
    std::size_t take = config.pairs_per_attack
                           ? std::min(*config.pairs_per_attack, pool.size())
                           : static_cast<std::size_t>(std::llround(config.subsample_fraction * static_cast<double>(pool.size())));
    take = std::clamp<std::size_t>(take, 1, pool.size());
    Rng rng(derive_seed(config.seed, {"apc-subsample", name}));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    for (std::size_t i : pool) selected.push_back(records[i]);
    if (per_attack != nullptr) (*per_attack)[name] = take;
  }
  return selected;
}

ApcTrainResult train_apc(const victims::VictimModel& victim, const std::vector<data::PairRecord>& records,
                         const ApcConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  ApcTrainLog log;
  log.victim_hash_before = victim.params().hash();
  const std::vector<data::PairRecord> selected = select_training_pairs(records, config, &log.pairs_per_attack);

  // SOR masks and clean-side targets are fixed per pair for the whole run.
  std::vector<PreparedPair> pairs;
  pairs.reserve(selected.size());
  for (const auto& r : selected) {
    PointCloud input = r.adversarial;
    if (config.preprocess && input.size() > config.sor_k) input = defenses::sor(input, config.sor_k, config.sor_alpha);
    if (input.size() <= config.k) {
      ++log.skipped_pairs;
      continue;
    }
    pairs.push_back({input.points(), r.clean.points(), clean_feature<float>(victim, r.clean), r.label});
  }
  if (pairs.empty()) throw InvalidArgument("train_apc: no usable training pairs");
  log.training_pairs = pairs.size();

  ApcModel model(config);
  auto run_pair = [&](const PreparedPair& pair, std::vector<MatrixF>* grads) {
    ad::Tape<float> t;
    const auto bound = BoundParams<float>::bind(t, model.params(), grads != nullptr);
    const ad::Var x = t.constant(pair.input);
    const PurifierGraph pg = model.forward(t, x, bound);
    const auto g = build_loss<float>(t, victim, pg.purified, pair.clean, pair.clean_feature, pair.label,
                                     config.alpha, config.beta, config.geo_distance);
    if (grads != nullptr) {
      t.backward(g.total);
      accumulate_grads(*grads, t, bound);
    }
    return read_loss(t, g);
  };

  for (const auto& pair : pairs) log.initial += run_pair(pair, nullptr);
  log.initial = scaled(log.initial, 1.0 / static_cast<double>(pairs.size()));

  Adam adam(model.params(), {.learning_rate = config.learning_rate});
  Rng rng(derive_seed(config.seed, {"apc-train"}));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    // Batches only mix pairs of equal cardinality.
    std::map<Eigen::Index, std::vector<std::size_t>> buckets;
    for (std::size_t i : order) buckets[pairs[i].input.rows()].push_back(i);
    std::vector<std::vector<std::size_t>> batches;
    for (auto& [n, members] : buckets) {
      for (std::size_t s = 0; s < members.size(); s += config.batch_size) {
        batches.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(s),
                             members.begin() + static_cast<std::ptrdiff_t>(std::min(members.size(), s + config.batch_size)));
      }
    }
    std::shuffle(batches.begin(), batches.end(), rng);

    LossBreakdown sum;
    for (const auto& batch : batches) {
      std::vector<MatrixF> grads = zero_grads(model.params());
      for (std::size_t i : batch) sum += run_pair(pairs[i], &grads);
      const float inv = 1.0F / static_cast<float>(batch.size());
      for (auto& g : grads) g *= inv;
      adam.step(model.mutable_params(), grads);
    }
    log.epochs.push_back({epoch, scaled(sum, 1.0 / static_cast<double>(pairs.size()))});
  }
  log.victim_hash_after = victim.params().hash();
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  model.reset_forward_calls();
  return ApcTrainResult{std::move(model), std::move(log)};
}

}  // namespace apckit::purifier
