#include "apckit/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "apckit/errors.hpp"
#include "apckit/geometry.hpp"
#include "apckit/params.hpp"

namespace apckit::attacks {

namespace {

using victims::Classifier;
using Mat = ad::Matrix<float>;


AttackResult finish(const Classifier& model, Points x, std::size_t label, std::size_t iterations) {
  PointCloud cloud(std::move(x));
  // Success is always re-derived from a fresh victim evaluation of the returned cloud.
  const bool success = victims::predict_label(model, cloud) != label;
  return AttackResult{std::move(cloud), success, iterations};
}

/// Gradient of the cross-entropy w.r.t. the coordinates.
Mat ce_gradient(const Classifier& model, const Mat& x, std::size_t label) {
  ad::Tape<float> tape;
  const ad::Var v = tape.variable(x);
  const ad::Var loss = ad::cross_entropy(tape, model.forward(tape, v).logits, label);
  tape.backward(loss);
  return tape.grad(v);
}

void require_differentiable(const Classifier& model, const std::string& attack) {
  if (!model.differentiable()) throw UnsupportedOperation(attack + " needs a differentiable victim");
}

/// Shared C&W-style optimization over a displacement of the rows selected by `movable_from`
/// (rows [movable_from, N) move; earlier rows are fixed).
struct CwProblem {
  double lambda = 1.0;
  double kappa = 0.0;
  double gamma = 0.0;
  std::size_t knn_k = 5;
  double compact_weight = 0.0;
  std::size_t cluster_size = 0;
};

AttackResult cw_optimize(const Classifier& model, const Points& fixed, const Points& movable_init, std::size_t label,
                         const AttackSpec& spec, const CwProblem& prob) {
  const bool has_fixed = fixed.rows() > 0;
  ParamSet delta;
  delta.add("delta", Mat::Zero(movable_init.rows(), 3));
  Adam adam(delta, {.learning_rate = static_cast<float>(spec.step_size)});
  const Mat init = movable_init;

  auto assemble = [&](const Mat& moved) {
    Points out(fixed.rows() + moved.rows(), 3);
    out.topRows(fixed.rows()) = fixed;
    out.bottomRows(moved.rows()) = moved;
    return out;
  };

  Mat best;
  double best_norm = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  for (std::size_t step = 0; step <= spec.steps; ++step) {
    ad::Tape<float> tape;
    const ad::Var d = tape.variable(delta[0].value);
    const ad::Var moved = ad::add(tape, tape.constant(init), d);
    const ad::Var x = has_fixed ? ad::concat_rows(tape, tape.constant(Mat(fixed)), moved) : moved;
    const auto out = model.forward(tape, x);

    const Eigen::Index rows = tape.value(x).rows();
    Eigen::Index arg = 0;
    tape.value(out.logits).row(0).maxCoeff(&arg);
    const double norm = delta[0].value.norm();
    if (static_cast<std::size_t>(arg) != label && norm < best_norm) {
      best_norm = norm;
      best = tape.value(moved);
    }
    if (step == spec.steps) break;

    std::vector<std::pair<ad::Var, float>> terms = {
        {ad::margin_loss(tape, out.logits, label, static_cast<float>(prob.kappa)), 1.0F},
        {ad::sum_squares(tape, d), static_cast<float>(prob.lambda)}};
    if (prob.gamma > 0.0) {
      const auto nb = geometry::knn_indices(PointsD(tape.value(x).cast<double>()), std::min(prob.knn_k, static_cast<std::size_t>(rows - 1)));
      terms.emplace_back(ad::neighbor_spread(tape, x, nb.flat(), nb.k()), static_cast<float>(prob.gamma));
    }
    if (prob.compact_weight > 0.0 && prob.cluster_size > 0) {
      terms.emplace_back(ad::cluster_spread(tape, moved, static_cast<Eigen::Index>(prob.cluster_size)),
                         static_cast<float>(prob.compact_weight));
    }
    const ad::Var loss = ad::weighted_sum(tape, std::move(terms));
    tape.backward(loss);
    adam.step(delta, {tape.grad(d)});
    ++iterations;
  }
  Mat chosen = best.size() > 0 ? best : Mat(init + delta[0].value);
  return finish(model, assemble(chosen), label, iterations);
}

}  // namespace

double AttackSpec::extra(const std::string& key, double fallback) const {
  const auto it = extras.find(key);
  return it == extras.end() ? fallback : it->second;
}

AttackSpec default_spec(const std::string& name) {
  AttackSpec s;
  s.name = name;
  if (name == "pgd") {
    s.epsilon = 0.05;
    s.step_size = 0.01;
    s.steps = 50;
  } else if (name == "ifgm") {
    s.epsilon = 0.8;
    s.step_size = 0.1;
    s.steps = 50;
  } else if (name == "perturb") {
    s.steps = 100;
    s.step_size = 0.01;
    s.extras = {{"lambda", 1.0}, {"kappa", 0.0}};
  } else if (name == "drop") {
    s.steps = 5;
    s.extras = {{"drop_count", 50.0}, {"rounds", 5.0}};
  } else if (name == "add") {
    s.steps = 100;
    s.step_size = 0.01;
    s.extras = {{"add_count", 32.0}, {"clusters", 0.0}, {"lambda", 1.0}, {"kappa", 0.0}};
  } else if (name == "cluster") {
    s.method = "add";
    s.steps = 100;
    s.step_size = 0.01;
    s.extras = {{"add_count", 32.0}, {"clusters", 4.0}, {"cluster_radius", 0.05}, {"compact_weight", 1.0},
                {"lambda", 1.0}, {"kappa", 0.0}};
  } else if (name == "knn") {
    s.steps = 100;
    s.step_size = 0.01;
    s.extras = {{"lambda", 1.0}, {"kappa", 0.0}, {"gamma", 5.0}, {"knn_k", 5.0}};
  } else if (name == std::string(data::kCleanAttack)) {
    s.steps = 1;
  } else {
    throw InvalidArgument("no default spec for attack " + name);
  }
  return s;
}

std::vector<std::string> default_attack_names() { return {"add", "cluster", "perturb", "knn", "ifgm", "pgd", "drop"}; }

AttackResult attack_pgd(const Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec) {
  if (spec.epsilon < 0.0) throw InvalidArgument("pgd: epsilon must be nonnegative");
  if (spec.steps < 1) throw InvalidArgument("pgd: steps must be >= 1");
  require_differentiable(model, "pgd");
  const Mat x0 = example.cloud.points();
  const auto eps = static_cast<float>(spec.epsilon);
  Mat x = x0;
  for (std::size_t it = 0; it < spec.steps; ++it) {
    const Mat g = ce_gradient(model, x, example.label);
    x += static_cast<float>(spec.step_size) * g.unaryExpr([](float v) { return float((v > 0.0F) - (v < 0.0F)); });
    x = x0 + (x - x0).cwiseMax(-eps).cwiseMin(eps);
  }
  return finish(model, Points(x), example.label, spec.steps);
}

AttackResult attack_ifgm(const Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec) {
  if (spec.epsilon < 0.0) throw InvalidArgument("ifgm: epsilon must be nonnegative");
  if (spec.steps < 1) throw InvalidArgument("ifgm: steps must be >= 1");
  require_differentiable(model, "ifgm");
  const Mat x0 = example.cloud.points();
  const double eps = spec.epsilon;
  Mat x = x0;
  for (std::size_t it = 0; it < spec.steps; ++it) {
    const Mat g = ce_gradient(model, x, example.label);
    const double gnorm = g.cast<double>().norm();
    if (!(gnorm > 0.0)) continue;
    x += static_cast<float>(spec.step_size / gnorm) * g;
    Eigen::MatrixXd disp = (x - x0).cast<double>();
    const double dnorm = disp.norm();
    if (dnorm > eps) {
      // Shrink slightly below eps so float rounding cannot leave the ball.
      disp *= eps / dnorm * (1.0 - 1e-7);
      x = x0 + disp.cast<float>();
    }
  }
  return finish(model, Points(x), example.label, spec.steps);
}

AttackResult attack_perturb_cw(const Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec) {
  require_differentiable(model, "perturb");
  CwProblem prob;
  prob.lambda = spec.extra("lambda", 1.0);
  prob.kappa = spec.extra("kappa", 0.0);
  return cw_optimize(model, Points(0, 3), example.cloud.points(), example.label, spec, prob);
}

AttackResult attack_knn_constrained(const Classifier& model, const data::LabeledCloud& example,
                                    const AttackSpec& spec) {
  require_differentiable(model, "knn");
  CwProblem prob;
  prob.lambda = spec.extra("lambda", 1.0);
  prob.kappa = spec.extra("kappa", 0.0);
  prob.gamma = spec.extra("gamma", 5.0);
  prob.knn_k = static_cast<std::size_t>(spec.extra("knn_k", 5.0));
  if (prob.gamma < 0.0) throw InvalidArgument("knn: gamma must be nonnegative");
  if (prob.knn_k < 1) throw InvalidArgument("knn: knn_k must be positive");
  return cw_optimize(model, Points(0, 3), example.cloud.points(), example.label, spec, prob);
}

AttackResult attack_drop(const Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec) {
  const auto n = example.cloud.size();
  const double m_raw = spec.extra("drop_count", 50.0);
  if (m_raw < 0.0) throw InvalidArgument("drop: drop_count must be nonnegative");
  const auto m = static_cast<std::size_t>(m_raw);
  if (m >= n) throw InvalidArgument("drop: drop_count must be smaller than the point count");
  const auto rounds = std::max<std::size_t>(1, static_cast<std::size_t>(spec.extra("rounds", 5.0)));
  if (m == 0) return finish(model, example.cloud.points(), example.label, 0);
  require_differentiable(model, "drop");

  std::vector<std::size_t> alive(n);
  std::iota(alive.begin(), alive.end(), 0);
  std::size_t removed = 0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < rounds && removed < m; ++r) {
    const std::size_t quota = (r + 1 == rounds) ? m - removed : std::min(m - removed, m / rounds);
    if (quota == 0) continue;
    const PointCloud current = example.cloud.select(alive);
    const Mat x = current.points();
    const Mat g = ce_gradient(model, x, example.label);
    const Eigen::RowVector3f centroid = x.colwise().mean();
    std::vector<std::pair<double, std::size_t>> saliency(alive.size());
    for (std::size_t i = 0; i < alive.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      saliency[i] = {-static_cast<double>(g.row(row).dot(x.row(row) - centroid)), i};
    }
    // Highest saliency first; equal scores keep the lower index.
    std::stable_sort(saliency.begin(), saliency.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<bool> drop(alive.size(), false);
    for (std::size_t q = 0; q < quota; ++q) drop[saliency[q].second] = true;
    std::vector<std::size_t> next;
    next.reserve(alive.size() - quota);
    for (std::size_t i = 0; i < alive.size(); ++i) {
      if (!drop[i]) next.push_back(alive[i]);
    }
    alive = std::move(next);
    removed += quota;
    ++used;
  }
  return finish(model, example.cloud.select(alive).points(), example.label, used);
}

Points add_initialization(const data::LabeledCloud& example, const AttackSpec& spec) {
  const double m_raw = spec.extra("add_count", 32.0);
  if (m_raw < 1.0) throw InvalidArgument("add: add_count must be >= 1");
  const auto m = static_cast<std::size_t>(m_raw);
  const auto clusters = static_cast<std::size_t>(spec.extra("clusters", 0.0));
  const auto& src = example.cloud.points();
  Rng rng(derive_seed(spec.seed, {"add-init", spec.name}));
  std::uniform_int_distribution<Eigen::Index> pick(0, src.rows() - 1);
  Points out(static_cast<Eigen::Index>(m), 3);
  if (clusters == 0) {
    // A small offset keeps a new point from tying an original in max-pooling, where it would get no gradient.
    std::normal_distribution<float> offset(0.0F, 0.01F);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      out.row(i) = src.row(pick(rng)) + Eigen::RowVector3f(offset(rng), offset(rng), offset(rng));
    }
    return out;
  }
  if (m % clusters != 0) throw InvalidArgument("add: add_count must be a multiple of clusters");
  const std::size_t per_cluster = m / clusters;
  const auto radius = static_cast<float>(spec.extra("cluster_radius", 0.05));
  std::normal_distribution<float> g(0.0F, 1.0F);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  for (std::size_t c = 0; c < clusters; ++c) {
    const Eigen::RowVector3f center = src.row(pick(rng));
    for (std::size_t j = 0; j < per_cluster; ++j) {
      Eigen::RowVector3f dir(g(rng), g(rng), g(rng));
      dir /= std::max(dir.norm(), 1e-6F);
      out.row(static_cast<Eigen::Index>(c * per_cluster + j)) = center + radius * std::cbrt(u(rng)) * dir;
    }
  }
  return out;
}

AttackResult attack_add(const Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec) {
  require_differentiable(model, "add");
  const Points init = add_initialization(example, spec);
  CwProblem prob;
  prob.lambda = spec.extra("lambda", 1.0);
  prob.kappa = spec.extra("kappa", 0.0);
  const auto clusters = static_cast<std::size_t>(spec.extra("clusters", 0.0));
  if (clusters > 0) {
    prob.cluster_size = static_cast<std::size_t>(init.rows()) / clusters;
    prob.compact_weight = spec.extra("compact_weight", 1.0);
  }
  return cw_optimize(model, example.cloud.points(), init, example.label, spec, prob);
}

AttackResult run_attack(const Classifier& model, const data::LabeledCloud& example, const AttackSpec& spec) {
  const std::string& algo = spec.algorithm();
  if (algo == "pgd") return attack_pgd(model, example, spec);
  if (algo == "ifgm") return attack_ifgm(model, example, spec);
  if (algo == "perturb") return attack_perturb_cw(model, example, spec);
  if (algo == "drop") return attack_drop(model, example, spec);
  if (algo == "add" || algo == "cluster") return attack_add(model, example, spec);
  if (algo == "knn") return attack_knn_constrained(model, example, spec);
  if (algo == data::kCleanAttack) return finish(model, example.cloud.points(), example.label, 0);
  throw InvalidArgument("unknown attack method: " + algo);
}

AttackSetSummary generate_attack_set(const Classifier& model, const data::DatasetSplit& split,
                                     const std::vector<AttackSpec>& specs, const std::filesystem::path& store,
                                     std::uint64_t master_seed) {
  AttackSetSummary summary;
  std::map<std::string, std::size_t> fooled_count;
  for (const auto& ex : split.examples) {
    std::vector<data::PairRecord> batch;
    batch.reserve(specs.size());
    for (const auto& base : specs) {
      AttackSpec spec = base;
      spec.seed = derive_seed(master_seed, {ex.example_id, spec.name});
      AttackResult res = run_attack(model, ex, spec);
      fooled_count[spec.name] += res.success ? 1 : 0;
      summary.counts[spec.name] += 1;
      batch.push_back({ex.example_id, spec.name, model.name(), ex.cloud, std::move(res.adversarial), ex.label});
    }
    summary.records_written += data::store_pairs(store, batch);
  }
  for (const auto& [name, count] : summary.counts) {
    summary.success_rate[name] = 100.0 * static_cast<double>(fooled_count[name]) / static_cast<double>(count);
  }
  return summary;
}

}  // namespace apckit::attacks
