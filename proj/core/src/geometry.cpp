#include "apckit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>

#include "apckit/errors.hpp"
#include "apckit/seeding.hpp"

namespace apckit {

PointCloud::PointCloud(Points points) : points_(std::move(points)) {
  if (points_.rows() == 0) throw InvalidArgument("point cloud must contain at least one point");
  if (!points_.allFinite()) throw InvalidArgument("point cloud contains a non-finite coordinate");
}

PointCloud PointCloud::from_rows(std::span<const float> xyz) {
  if (xyz.size() % 3 != 0) throw InvalidArgument("coordinate count is not a multiple of 3");
  Points p = Eigen::Map<const Points>(xyz.data(), static_cast<Eigen::Index>(xyz.size() / 3), 3);
  return PointCloud(std::move(p));
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
  Points out(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= size()) throw InvalidArgument("select: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = points_.row(static_cast<Eigen::Index>(indices[r]));
  }
  return PointCloud(std::move(out));
}

bool operator==(const PointCloud& a, const PointCloud& b) {
  return a.size() == b.size() &&
         std::memcmp(a.points_.data(), b.points_.data(), sizeof(float) * 3 * a.size()) == 0;
}

namespace geometry {

namespace {

void require_nonempty(const PointCloud& c, const char* what) {
  if (c.empty()) throw InvalidArgument(std::string(what) + ": empty cloud");
}

template <typename Mat>
NeighborIndex knn_impl(const Mat& p, std::size_t k) {
  const auto n = static_cast<std::size_t>(p.rows());
  if (k < 1 || k >= n) {
    throw InvalidArgument("knn_indices: k must satisfy 1 <= k <= N-1 (k=" + std::to_string(k) +
                          ", N=" + std::to_string(n) + ")");
  }
  NeighborIndex out(n, k);
  std::vector<std::pair<double, std::size_t>> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    const double xi = p(static_cast<Eigen::Index>(i), 0);
    const double yi = p(static_cast<Eigen::Index>(i), 1);
    const double zi = p(static_cast<Eigen::Index>(i), 2);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = static_cast<double>(p(static_cast<Eigen::Index>(j), 0)) - xi;
      const double dy = static_cast<double>(p(static_cast<Eigen::Index>(j), 1)) - yi;
      const double dz = static_cast<double>(p(static_cast<Eigen::Index>(j), 2)) - zi;
      cand[c++] = {dx * dx + dy * dy + dz * dz, j};
    }
    // (distance, index) lexicographic order gives the ascending-index tie break.
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) out(i, j) = cand[j].second;
  }
  return out;
}

}  // namespace

NeighborIndex knn_indices(const PointCloud& cloud, std::size_t k) { return knn_impl(cloud.points(), k); }

NeighborIndex knn_indices(const PointsD& points, std::size_t k) { return knn_impl(points, k); }

NeighborCoordinates gather_neighbors(const PointCloud& cloud, const NeighborIndex& idx) {
  if (idx.rows() != cloud.size()) throw InvalidArgument("gather_neighbors: neighbor table has wrong row count");
  NeighborCoordinates out;
  out.rows = idx.rows();
  out.k = idx.k();
  out.coords.resize(static_cast<Eigen::Index>(idx.rows() * idx.k()), 3);
  for (std::size_t i = 0; i < idx.rows(); ++i) {
    for (std::size_t j = 0; j < idx.k(); ++j) {
      const std::size_t src = idx(i, j);
      if (src >= cloud.size()) throw InvalidArgument("gather_neighbors: index out of range");
      out.coords.row(static_cast<Eigen::Index>(i * idx.k() + j)) = cloud.points().row(static_cast<Eigen::Index>(src));
    }
  }
  return out;
}

NearestMatch nearest_in(const PointsD& a, const PointsD& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InvalidArgument("nearest_in: empty cloud");
  NearestMatch m;
  m.index.resize(static_cast<std::size_t>(a.rows()));
  m.sq_distance.resize(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double d = (a.row(i) - b.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    m.index[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arg);
    m.sq_distance[static_cast<std::size_t>(i)] = best;
  }
  return m;
}

double chamfer_one_sided(const PointCloud& a, const PointCloud& b) {
  require_nonempty(a, "chamfer_one_sided");
  require_nonempty(b, "chamfer_one_sided");
  const NearestMatch m = nearest_in(a.as_double(), b.as_double());
  return std::accumulate(m.sq_distance.begin(), m.sq_distance.end(), 0.0) / static_cast<double>(a.size());
}

double chamfer_symmetric(const PointCloud& a, const PointCloud& b) {
  return chamfer_one_sided(a, b) + chamfer_one_sided(b, a);
}

double hausdorff_one_sided(const PointCloud& a, const PointCloud& b) {
  require_nonempty(a, "hausdorff_one_sided");
  require_nonempty(b, "hausdorff_one_sided");
  const NearestMatch m = nearest_in(a.as_double(), b.as_double());
  return *std::max_element(m.sq_distance.begin(), m.sq_distance.end());
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  require_nonempty(cloud, "normalize_unit_sphere");
  const PointsD p = cloud.as_double();
  const Eigen::RowVector3d centroid = p.colwise().mean();
  const PointsD centered = p.rowwise() - centroid;
  const double radius = centered.rowwise().norm().maxCoeff();
  if (!(radius > 0.0)) throw DegenerateInput("normalize_unit_sphere: all points coincide");
  return PointCloud((centered / radius).cast<float>());
}

std::vector<std::size_t> random_subsample_indices(std::size_t n_points, std::size_t n, std::uint64_t seed) {
  if (n < 1 || n > n_points) {
    throw InvalidArgument("random_subsample: need 1 <= n <= N (n=" + std::to_string(n) +
                          ", N=" + std::to_string(n_points) + ")");
  }
  std::vector<std::size_t> idx(n_points);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots become a uniform sample without replacement.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_points - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PointCloud random_subsample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  return cloud.select(random_subsample_indices(cloud.size(), n, seed));
}

}  // namespace geometry
}  // namespace apckit
