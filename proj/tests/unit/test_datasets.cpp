#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "apckit/datasets.hpp"
#include "apckit/errors.hpp"
#include "support.hpp"

using namespace apckit;
using namespace apckit::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("apckit_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<PairRecord> sample_records(std::size_t n, const std::string& attack = "pgd") {
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto clean = testing_support::random_cloud(40, i);
    const auto adv = testing_support::random_cloud(40 + i, 1000 + i);
    out.push_back({"ex" + std::to_string(i), attack, "pointnet_mini", clean, adv, i % 8});
  }
  return out;
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("canonical sphere and cube surfaces") {
  Rng rng(1);
  const Points s = sample_surface(ShapeKind::kSphere, 200, rng);
  for (Eigen::Index i = 0; i < s.rows(); ++i) CHECK(std::abs(s.row(i).cast<double>().norm() - 1.0) <= 1e-6);
  const Points c = sample_surface(ShapeKind::kCube, 200, rng);
  for (Eigen::Index i = 0; i < c.rows(); ++i) CHECK(c.row(i).cwiseAbs().maxCoeff() == doctest::Approx(kCubeHalfWidth));
}

TEST_CASE("every shape kind generates normalized clouds") {
  for (std::size_t k = 0; k < kNumShapeKinds; ++k) {
    const auto lc = generate_shape(kShapeNames[k], 256, 5);
    CHECK(lc.label == k);
    CHECK(lc.cloud.size() == 256);
    const PointsD d = lc.cloud.as_double();
    CHECK(d.colwise().mean().norm() <= 1e-6);
    CHECK(std::abs(d.rowwise().norm().maxCoeff() - 1.0) <= 1e-6);
  }
}

TEST_CASE("generate_shape determinism and errors") {
  CHECK(generate_shape("torus", 64, 3).cloud == generate_shape("torus", 64, 3).cloud);
  CHECK_FALSE(generate_shape("torus", 64, 3).cloud == generate_shape("torus", 64, 4).cloud);
  CHECK_THROWS_AS(generate_shape("teapot", 64, 1), InvalidArgument);
  CHECK_THROWS_AS(generate_shape("cube", 31, 1), InvalidArgument);
  CHECK(shape_from_name("plane-cross") == ShapeKind::kPlaneCross);
  CHECK(shape_name(ShapeKind::kCone) == "cone");
}

TEST_CASE("build_dataset shape, balance and disjoint ids") {
  DatasetConfig cfg;
  cfg.train_per_class = 4;
  cfg.test_per_class = 2;
  cfg.points = 64;
  const Dataset ds = build_dataset(cfg);
  CHECK(ds.train.examples.size() == 32);
  CHECK(ds.test.examples.size() == 16);
  CHECK(ds.train.split_name == "train");
  CHECK(ds.test.split_name == "test");
  std::map<std::size_t, int> hist;
  std::set<std::string> ids;
  for (const auto& e : ds.train.examples) {
    hist[e.label]++;
    ids.insert(e.example_id);
  }
  CHECK(hist.size() == 8);
  for (const auto& [label, count] : hist) CHECK(count == 4);
  for (const auto& e : ds.test.examples) CHECK(ids.insert(e.example_id).second);
  CHECK(ds.test.find(ds.test.examples[3].example_id).cloud == ds.test.examples[3].cloud);
  CHECK_THROWS_AS(ds.test.find("nope"), InvalidArgument);

  cfg.train_per_class = 0;
  CHECK_THROWS_AS(build_dataset(cfg), InvalidArgument);
}

TEST_CASE("default dataset is 800 / 200") {
  const Dataset ds = build_dataset(DatasetConfig{});
  CHECK(ds.train.examples.size() == 800);
  CHECK(ds.test.examples.size() == 200);
  CHECK(ds.train.num_classes == 8);
  CHECK(ds.train.examples.front().cloud.size() == 256);
}

TEST_CASE("split serialization is byte-identical across rebuilds") {
  DatasetConfig cfg;
  cfg.train_per_class = 2;
  cfg.test_per_class = 1;
  cfg.points = 48;
  cfg.seed = 17;
  const fs::path a = fresh_dir("split_a");
  const fs::path b = fresh_dir("split_b");
  save_split(a, build_dataset(cfg).train);
  save_split(b, build_dataset(cfg).train);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    ++files;
  }
  CHECK(files == 1 + 2 * 16);
  const DatasetSplit back = load_split(a);
  const DatasetSplit orig = build_dataset(cfg).train;
  REQUIRE(back.examples.size() == orig.examples.size());
  for (std::size_t i = 0; i < back.examples.size(); ++i) {
    CHECK(back.examples[i].cloud == orig.examples[i].cloud);
    CHECK(back.examples[i].label == orig.examples[i].label);
    CHECK(back.examples[i].example_id == orig.examples[i].example_id);
  }
}

TEST_CASE("pair store round trip") {
  const fs::path store = fresh_dir("pairs_rt");
  const auto records = sample_records(10);
  CHECK(store_pairs(store, records) == 10);
  const auto back = load_pairs(store);
  REQUIRE(back.size() == 10);
  std::map<std::string, const PairRecord*> by_key;
  for (const auto& r : records) by_key[r.key()] = &r;
  for (const auto& r : back) {
    const PairRecord& o = *by_key.at(r.key());
    CHECK(r.clean == o.clean);
    CHECK(r.adversarial == o.adversarial);
    CHECK(r.label == o.label);
    CHECK(r.attack_name == o.attack_name);
    CHECK(r.victim_name == o.victim_name);
  }
}

TEST_CASE("pair store overwrite, filters and order") {
  const fs::path store = fresh_dir("pairs_dup");
  auto first = sample_records(3);
  store_pairs(store, first);
  auto second = sample_records(1);
  second[0].adversarial = testing_support::random_cloud(10, 77);
  store_pairs(store, second);
  auto all = load_pairs(store);
  CHECK(all.size() == 3);
  for (const auto& r : all) {
    if (r.key() == second[0].key()) CHECK(r.adversarial == second[0].adversarial);
  }

  store_pairs(store, sample_records(2, "drop"));
  PairFilter f;
  f.attack = "drop";
  const auto drops = load_pairs(store, f);
  CHECK(drops.size() == 2);
  for (const auto& r : drops) CHECK(r.attack_name == "drop");
  f.victim = "dgcnn_mini";
  CHECK(load_pairs(store, f).empty());

  const auto again = load_pairs(store);
  CHECK(again.size() == 5);
  for (std::size_t i = 1; i < again.size(); ++i) CHECK(again[i - 1].key() < again[i].key());
  const auto repeat = load_pairs(store);
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(repeat[i].key() == again[i].key());
}

TEST_CASE("pair store errors") {
  CHECK_THROWS_AS(load_pairs(fresh_dir("missing_store")), IoError);
  const fs::path file = fresh_dir("not_a_dir");
  { std::ofstream(file.string()) << "x"; }
  CHECK_THROWS_AS(store_pairs(file / "sub", sample_records(1)), IoError);
}

TEST_CASE("cloud files round trip bit-exactly") {
  const fs::path dir = fresh_dir("cloud_rt");
  fs::create_directories(dir);
  const PointCloud c = testing_support::random_cloud(33, 4);
  save_cloud(dir / "c.bin", c);
  CHECK(load_cloud(dir / "c.bin") == c);
  CHECK(fs::file_size(dir / "c.bin") == 33 * 3 * 4);
}

}  // TEST_SUITE
