#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "apckit/attacks.hpp"
#include "apckit/errors.hpp"
#include "apckit/geometry.hpp"
#include "apckit/victims.hpp"
#include "support.hpp"
#include "toy_models.hpp"

using namespace apckit;
using namespace apckit::attacks;
namespace fs = std::filesystem;

namespace {

const victims::VictimModel& victim() {
  static const victims::VictimModel m([] {
    victims::VictimConfig c;
    c.seed = 21;
    return c;
  }());
  return m;
}

data::LabeledCloud example(std::uint64_t seed, std::size_t n = 64) {
  auto lc = data::generate_shape(data::kShapeNames[seed % 8], n, seed);
  lc.example_id = "ex" + std::to_string(seed);
  return lc;
}

AttackSpec quick(const std::string& name, std::size_t steps = 5) {
  AttackSpec s = default_spec(name);
  s.steps = steps;
  return s;
}

bool same_rows(const Points& a, const Points& b) {
  return a.rows() == b.rows() && std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

std::set<std::tuple<float, float, float>> as_set(const Points& p) {
  std::set<std::tuple<float, float, float>> s;
  for (Eigen::Index i = 0; i < p.rows(); ++i) s.emplace(p(i, 0), p(i, 1), p(i, 2));
  return s;
}

double mean_knn_distance(const PointCloud& c, std::size_t k) {
  const auto idx = geometry::knn_indices(c, k);
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) s += (c.point(i) - c.point(idx(i, j))).squaredNorm();
  }
  return s / static_cast<double>(c.size() * k);
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("default specs") {
  const auto names = default_attack_names();
  CHECK(names.size() == 7);
  for (const auto& n : names) CHECK_NOTHROW(default_spec(n));
  CHECK(default_spec("pgd").epsilon == 0.05);
  CHECK(default_spec("pgd").steps == 50);
  CHECK(default_spec("ifgm").epsilon == 0.8);
  CHECK(default_spec("drop").extra("drop_count", 0) == 50);
  CHECK(default_spec("add").extra("add_count", 0) == 32);
  CHECK(default_spec("knn").extra("gamma", 0) == 5);
  CHECK(default_spec("cluster").algorithm() == "add");
  CHECK_THROWS_AS(default_spec("hit"), InvalidArgument);
  CHECK_THROWS_AS(run_attack(victim(), example(0), AttackSpec{"nope"}), InvalidArgument);
}

TEST_CASE("pgd with zero budget is the identity") {
  AttackSpec s = quick("pgd");
  s.epsilon = 0.0;
  const auto ex = example(1);
  const AttackResult r = attack_pgd(victim(), ex, s);
  CHECK(r.adversarial == ex.cloud);
  CHECK(r.success == (victims::predict_label(victim(), ex.cloud) != ex.label));
  CHECK(r.iterations_used == s.steps);
}

TEST_CASE("pgd one step on a linear two-class model") {
  Eigen::Matrix<double, 3, 2> w;
  w << 1.0, -0.5, 0.2, 0.3, -0.7, 0.9;
  const testing_support::LinearToy toy(w);
  data::LabeledCloud ex{testing_support::random_cloud(10, 3), 0, "toy"};
  AttackSpec s = default_spec("pgd");
  s.steps = 1;
  s.step_size = 0.01;
  s.epsilon = 0.005;
  const AttackResult r = attack_pgd(toy, ex, s);
  const Eigen::RowVector3d dir = (w.col(1) - w.col(0)).transpose();
  for (Eigen::Index i = 0; i < 10; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double step = std::clamp(0.01 * (dir(c) > 0 ? 1.0 : -1.0), -0.005, 0.005);
      CHECK(r.adversarial.points()(i, c) == doctest::Approx(ex.cloud.points()(i, c) + step).epsilon(1e-6));
    }
  }
}

TEST_CASE("pgd and ifgm budgets hold") {
  for (std::uint64_t s = 0; s < 6; ++s) {
    const auto ex = example(s);
    const AttackResult p = attack_pgd(victim(), ex, quick("pgd", 8));
    CHECK((p.adversarial.as_double() - ex.cloud.as_double()).cwiseAbs().maxCoeff() <= 0.05 + 1e-6);
    CHECK(p.adversarial.size() == ex.cloud.size());
    AttackSpec is = quick("ifgm", 12);
    is.step_size = 0.2;
    const AttackResult f = attack_ifgm(victim(), ex, is);
    CHECK((f.adversarial.as_double() - ex.cloud.as_double()).norm() <= 0.8 + 1e-6);
  }
}

TEST_CASE("ifgm identities") {
  const auto ex = example(2);
  AttackSpec s = quick("ifgm");
  s.epsilon = 0.0;
  CHECK(attack_ifgm(victim(), ex, s).adversarial == ex.cloud);
  Eigen::Matrix<double, 3, 2> w = Eigen::Matrix<double, 3, 2>::Zero();
  const testing_support::LinearToy constant(w);
  CHECK(attack_ifgm(constant, {ex.cloud, 0, "c"}, quick("ifgm")).adversarial == ex.cloud);
}

TEST_CASE("perturb: identity without gradient, honest success, lambda monotone") {
  Eigen::Matrix<double, 3, 2> w = Eigen::Matrix<double, 3, 2>::Zero();
  const testing_support::LinearToy constant(w);
  const auto ex = example(3);
  AttackSpec s = quick("perturb", 1);
  CHECK(attack_perturb_cw(constant, {ex.cloud, 0, "c"}, s).adversarial == ex.cloud);

  s = quick("perturb", 30);
  const AttackResult r = attack_perturb_cw(victim(), ex, s);
  CHECK(r.success == (victims::predict_label(victim(), r.adversarial) != ex.label));
  CHECK(r.adversarial.size() == ex.cloud.size());
  const double n1 = (r.adversarial.as_double() - ex.cloud.as_double()).norm();
  s.extras["lambda"] = 2.0;
  const AttackResult r2 = attack_perturb_cw(victim(), ex, s);
  CHECK((r2.adversarial.as_double() - ex.cloud.as_double()).norm() <= n1 + 1e-6);
}

TEST_CASE("knn attack reduces to perturb at gamma zero and tightens with gamma") {
  const auto ex = example(4);
  AttackSpec k = quick("knn", 15);
  k.extras["gamma"] = 0.0;
  AttackSpec p = quick("perturb", 15);
  p.extras = {{"lambda", 1.0}, {"kappa", 0.0}};
  CHECK(attack_knn_constrained(victim(), ex, k).adversarial == attack_perturb_cw(victim(), ex, p).adversarial);

  k.extras["gamma"] = 5.0;
  const AttackResult lo = attack_knn_constrained(victim(), ex, k);
  k.extras["gamma"] = 50.0;
  const AttackResult hi = attack_knn_constrained(victim(), ex, k);
  CHECK(mean_knn_distance(hi.adversarial, 5) <= mean_knn_distance(lo.adversarial, 5) + 1e-9);
  CHECK(hi.success == (victims::predict_label(victim(), hi.adversarial) != ex.label));
}

TEST_CASE("drop cardinality and subset") {
  const auto ex = example(5);
  AttackSpec s = quick("drop");
  s.extras["drop_count"] = 20;
  const AttackResult r = attack_drop(victim(), ex, s);
  CHECK(r.adversarial.size() == ex.cloud.size() - 20);
  const auto src = as_set(ex.cloud.points());
  for (const auto& p : as_set(r.adversarial.points())) CHECK(src.count(p) == 1);
  s.extras["drop_count"] = 0;
  CHECK(attack_drop(victim(), ex, s).adversarial == ex.cloud);
  s.extras["drop_count"] = 64;
  CHECK_THROWS_AS(attack_drop(victim(), ex, s), InvalidArgument);
}

TEST_CASE("drop spares points the model ignores") {
  // Two classes; logits read only the first half of the cloud, which sits on the
  // side of the centroid that makes every used point's saliency positive.
  Eigen::Matrix<double, 3, 2> w;
  w << 1.0, -1.0, 0.0, 0.0, 0.0, 0.0;
  const std::size_t n = 20;
  const testing_support::LinearToy toy(w, n / 2);
  Points p(static_cast<Eigen::Index>(n), 3);
  Rng rng(3);
  std::uniform_real_distribution<float> u(-0.1F, 0.1F);
  for (std::size_t i = 0; i < n; ++i) {
    const float side = i < n / 2 ? 1.0F : -1.0F;
    p.row(static_cast<Eigen::Index>(i)) << side + u(rng), u(rng), u(rng);
  }
  const data::LabeledCloud ex{PointCloud(p), 0, "toy"};
  AttackSpec s = default_spec("drop");
  s.extras["drop_count"] = 10;
  const AttackResult r = attack_drop(toy, ex, s);
  CHECK(as_set(r.adversarial.points()) == as_set(p.bottomRows(10)));
}

TEST_CASE("add: originals first and unchanged, superset, initialization") {
  const auto ex = example(6);
  AttackSpec s = quick("add", 10);
  const AttackResult r = attack_add(victim(), ex, s);
  REQUIRE(r.adversarial.size() == ex.cloud.size() + 32);
  CHECK(same_rows(r.adversarial.points().topRows(64), ex.cloud.points()));

  s.steps = 0;
  const AttackResult none = attack_add(victim(), ex, s);
  CHECK(same_rows(none.adversarial.points().bottomRows(32), add_initialization(ex, s)));

  s.extras["add_count"] = 0;
  CHECK_THROWS_AS(attack_add(victim(), ex, s), InvalidArgument);
}

TEST_CASE("cluster attack compactness responds to its weight") {
  const auto ex = example(7);
  AttackSpec s = quick("cluster", 15);
  auto spread = [](const AttackResult& r) {
    const Points added = r.adversarial.points().bottomRows(32);
    double total = 0.0;
    for (int c = 0; c < 4; ++c) {
      const Points block = added.middleRows(c * 8, 8);
      total += (block.rowwise() - block.colwise().mean()).squaredNorm() / 8.0;
    }
    return total / 4.0;
  };
  const AttackResult base = attack_add(victim(), ex, s);
  s.extras["compact_weight"] = 10.0;
  const AttackResult tight = attack_add(victim(), ex, s);
  CHECK(spread(tight) <= spread(base) + 1e-9);
  CHECK(base.adversarial.size() == 96);
}

TEST_CASE("attacks are deterministic and never relabel") {
  const auto ex = example(8);
  for (const auto& name : default_attack_names()) {
    const AttackSpec s = quick(name, 3);
    const AttackResult a = run_attack(victim(), ex, s);
    const AttackResult b = run_attack(victim(), ex, s);
    CHECK(a.adversarial == b.adversarial);
    CHECK(a.success == b.success);
  }
  CHECK(run_attack(victim(), ex, default_spec("clean")).adversarial == ex.cloud);
}

TEST_CASE("generate_attack_set") {
  data::DatasetConfig dc;
  dc.train_per_class = 1;
  dc.test_per_class = 1;
  dc.points = 48;
  data::DatasetSplit split = data::build_dataset(dc).test;
  split.examples.resize(5);
  AttackSpec zero = quick("pgd", 2);
  zero.epsilon = 0.0;
  AttackSpec drop = quick("drop");
  drop.extras["drop_count"] = 8;
  const std::vector<AttackSpec> specs = {zero, drop};
  const fs::path a = fs::temp_directory_path() / "apckit_test_attackset_a";
  const fs::path b = fs::temp_directory_path() / "apckit_test_attackset_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto summary = generate_attack_set(victim(), split, specs, a, 7);
  CHECK(summary.records_written == 10);
  CHECK(data::load_pairs(a).size() == 10);
  generate_attack_set(victim(), split, specs, b, 7);
  for (const auto& e : fs::directory_iterator(a)) CHECK(slurp(e.path()) == slurp(b / e.path().filename()));

  std::size_t wrong = 0;
  for (const auto& ex : split.examples) wrong += victims::predict_label(victim(), ex.cloud) != ex.label ? 1 : 0;
  CHECK(summary.success_rate.at("pgd") == doctest::Approx(100.0 * static_cast<double>(wrong) / 5.0));
  for (const auto& r : data::load_pairs(a)) {
    CHECK(r.clean == split.find(r.example_id).cloud);
    CHECK(r.label == split.find(r.example_id).label);
  }
}

}  // TEST_SUITE
