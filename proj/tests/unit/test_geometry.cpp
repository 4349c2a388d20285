#include <doctest.h>

#include <cmath>
#include <set>

#include "apckit/errors.hpp"
#include "apckit/geometry.hpp"
#include "support.hpp"

using namespace apckit;
using namespace apckit::geometry;
using testing_support::random_cloud;

namespace {

PointCloud line3() {
  Points p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 3, 0, 0;
  return PointCloud(p);
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("point cloud validation") {
  CHECK_THROWS_AS(PointCloud(Points(0, 3)), InvalidArgument);
  Points bad(2, 3);
  bad << 0, 0, 0, std::nanf(""), 0, 0;
  CHECK_THROWS_AS(PointCloud{bad}, InvalidArgument);
  bad(1, 0) = INFINITY;
  CHECK_THROWS_AS(PointCloud{bad}, InvalidArgument);
  const PointCloud c = line3();
  const std::vector<std::size_t> idx = {2, 0};
  const PointCloud s = c.select(idx);
  CHECK(s.size() == 2);
  CHECK(s.point(0).x() == 3.0F);
  CHECK(s.point(1).x() == 0.0F);
}

TEST_CASE("knn hand examples") {
  const PointCloud c = line3();
  const NeighborIndex k1 = knn_indices(c, 1);
  CHECK(k1(0, 0) == 1);
  CHECK(k1(1, 0) == 0);
  CHECK(k1(2, 0) == 1);
  const NeighborIndex k2 = knn_indices(c, 2);
  CHECK(k2.flat() == std::vector<std::size_t>{1, 2, 0, 2, 1, 0});
}

TEST_CASE("knn argument errors") {
  const PointCloud c = line3();
  CHECK_THROWS_AS(knn_indices(c, 0), InvalidArgument);
  CHECK_THROWS_AS(knn_indices(c, 3), InvalidArgument);
}

TEST_CASE("knn ties break by ascending index") {
  // Point 0 at the center of four equidistant points.
  Points p(5, 3);
  p << 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, -1, 0, -1, 0, 0;
  const NeighborIndex idx = knn_indices(PointCloud(p), 4);
  CHECK(idx(0, 0) == 1);
  CHECK(idx(0, 1) == 2);
  CHECK(idx(0, 2) == 3);
  CHECK(idx(0, 3) == 4);
}

TEST_CASE("knn matches brute force on random clouds") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::size_t n = 16 + 7 * s;
    const PointCloud c = random_cloud(n, s);
    const std::size_t k = 1 + s % 12;
    const NeighborIndex idx = knn_indices(c, k);
    const auto oracle = testing_support::brute_knn(c.as_double(), k);
    for (std::size_t i = 0; i < n; ++i) {
      std::set<std::size_t> distinct;
      for (std::size_t j = 0; j < k; ++j) {
        REQUIRE(idx(i, j) == oracle[i][j]);
        CHECK(idx(i, j) != i);
        distinct.insert(idx(i, j));
      }
      CHECK(distinct.size() == k);
    }
  }
}

TEST_CASE("knn on double coordinates agrees with float path") {
  const PointCloud c = random_cloud(64, 7);
  CHECK(knn_indices(c, 8).flat() == knn_indices(c.as_double(), 8).flat());
}

TEST_CASE("gather_neighbors") {
  Points p(2, 3);
  p << 1, 2, 3, 4, 5, 6;
  const PointCloud c(p);
  const NeighborCoordinates g = gather_neighbors(c, knn_indices(c, 1));
  CHECK(g.at(0, 0) == c.point(1));
  CHECK(g.at(1, 0) == c.point(0));

  const PointCloud r = random_cloud(40, 3);
  const NeighborIndex idx = knn_indices(r, 5);
  const NeighborCoordinates gr = gather_neighbors(r, idx);
  const auto oracle = testing_support::brute_knn(r.as_double(), 5);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(gr.at(i, j) == r.point(oracle[i][j]));
  }

  NeighborIndex bad(2, 1);
  bad(0, 0) = 5;
  CHECK_THROWS_AS(gather_neighbors(c, bad), InvalidArgument);
}

TEST_CASE("chamfer and hausdorff hand examples") {
  Points a(1, 3);
  a << 0, 0, 0;
  Points b(2, 3);
  b << 1, 0, 0, 0, 2, 0;
  CHECK(chamfer_one_sided(PointCloud(a), PointCloud(b)) == doctest::Approx(1.0));
  Points h(2, 3);
  h << 0, 0, 0, 0, 0, 3;
  CHECK(hausdorff_one_sided(PointCloud(h), PointCloud(a)) == doctest::Approx(9.0));
  const PointCloud r = random_cloud(30, 11);
  CHECK(chamfer_one_sided(r, r) == 0.0);
  CHECK(hausdorff_one_sided(r, r) == 0.0);
  CHECK(chamfer_symmetric(PointCloud(a), PointCloud(b)) == doctest::Approx(1.0 + (1.0 + 4.0) / 2.0));
}

TEST_CASE("set distances match brute force") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const PointCloud a = random_cloud(20 + s, 100 + s);
    const PointCloud b = random_cloud(32, 200 + s);
    const double ch = chamfer_one_sided(a, b);
    const double hd = hausdorff_one_sided(a, b);
    CHECK(std::abs(ch - testing_support::brute_chamfer(a.as_double(), b.as_double())) <= 1e-6);
    CHECK(std::abs(hd - testing_support::brute_hausdorff(a.as_double(), b.as_double())) <= 1e-6);
    CHECK(hd >= ch);
    CHECK(std::abs(chamfer_symmetric(a, b) - ch - chamfer_one_sided(b, a)) <= 1e-12);
  }
}

TEST_CASE("chamfer is invariant to point order") {
  const PointCloud a = random_cloud(50, 1);
  const PointCloud b = random_cloud(40, 2);
  std::vector<std::size_t> perm(50);
  for (std::size_t i = 0; i < 50; ++i) perm[i] = (i * 7) % 50;
  std::vector<std::size_t> perm_b(40);
  for (std::size_t i = 0; i < 40; ++i) perm_b[i] = 39 - i;
  CHECK(chamfer_one_sided(a.select(perm), b.select(perm_b)) == doctest::Approx(chamfer_one_sided(a, b)).epsilon(1e-12));
}

TEST_CASE("nearest_in") {
  const auto a = testing_support::random_points_d(10, 1);
  const auto b = testing_support::random_points_d(15, 2);
  const NearestMatch m = nearest_in(a, b);
  const auto oracle = testing_support::brute_min_sq(a, b);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(m.sq_distance[i] == doctest::Approx(oracle[i]));
    CHECK(testing_support::sq_dist(a, static_cast<Eigen::Index>(i), b, static_cast<Eigen::Index>(m.index[i])) ==
          doctest::Approx(oracle[i]));
  }
}

TEST_CASE("normalize_unit_sphere") {
  Points p(2, 3);
  p << 2, 0, 0, -2, 0, 0;
  const PointCloud n = normalize_unit_sphere(PointCloud(p));
  CHECK(n.point(0).x() == doctest::Approx(1.0));
  CHECK(n.point(1).x() == doctest::Approx(-1.0));

  const PointCloud r = normalize_unit_sphere(random_cloud(100, 5, 3.0F));
  const PointsD d = r.as_double();
  CHECK(d.colwise().mean().norm() <= 1e-6);
  CHECK(std::abs(d.rowwise().norm().maxCoeff() - 1.0) <= 1e-6);
  const PointCloud again = normalize_unit_sphere(r);
  CHECK((again.as_double() - d).cwiseAbs().maxCoeff() <= 1e-6);

  Points same(3, 3);
  same.setConstant(0.25F);
  CHECK_THROWS_AS(normalize_unit_sphere(PointCloud(same)), DegenerateInput);
}

TEST_CASE("random_subsample") {
  const PointCloud c = random_cloud(1024, 9);
  const PointCloud s = random_subsample(c, 256, 42);
  CHECK(s.size() == 256);
  const auto idx = random_subsample_indices(1024, 256, 42);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 256);
  for (std::size_t i = 0; i < 256; ++i) CHECK(s.point(i) == c.point(idx[i]));
  CHECK(random_subsample(c, 256, 42) == s);
  CHECK(random_subsample_indices(1024, 256, 43) != idx);
  CHECK(random_subsample(c, 1024, 1) == c);
  CHECK_THROWS_AS(random_subsample(c, 1025, 1), InvalidArgument);
  CHECK_THROWS_AS(random_subsample(c, 0, 1), InvalidArgument);
}

TEST_CASE("operations are pure") {
  const PointCloud a = random_cloud(60, 21);
  const PointCloud b = random_cloud(60, 22);
  CHECK(knn_indices(a, 6).flat() == knn_indices(a, 6).flat());
  CHECK(chamfer_one_sided(a, b) == chamfer_one_sided(a, b));
  CHECK(normalize_unit_sphere(a) == normalize_unit_sphere(a));
}

}  // TEST_SUITE
