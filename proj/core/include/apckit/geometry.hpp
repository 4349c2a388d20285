#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "apckit/point_cloud.hpp"

namespace apckit::geometry {

/// N x k neighbor table; row i lists the k nearest other points of point i,
/// nearest first, ties broken by ascending index. Self is never included.
class NeighborIndex {
 public:
  NeighborIndex(std::size_t rows, std::size_t k) : rows_(rows), k_(k), indices_(rows * k) {}

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t k() const { return k_; }
  [[nodiscard]] std::size_t operator()(std::size_t i, std::size_t j) const { return indices_[i * k_ + j]; }
  std::size_t& operator()(std::size_t i, std::size_t j) { return indices_[i * k_ + j]; }
  /// Flattened row-major view, length rows * k.
  [[nodiscard]] const std::vector<std::size_t>& flat() const { return indices_; }

 private:
  std::size_t rows_;
  std::size_t k_;
  std::vector<std::size_t> indices_;
};

/// Neighbor coordinates, entry (i, j) = coordinates of point idx(i, j).
struct NeighborCoordinates {
  std::size_t rows = 0;
  std::size_t k = 0;
  /// (rows * k) x 3, row i * k + j.
  Points coords;

  [[nodiscard]] Eigen::RowVector3f at(std::size_t i, std::size_t j) const {
    return coords.row(static_cast<Eigen::Index>(i * k + j));
  }
};

/// Exact kNN on squared Euclidean distance. Requires 1 <= k <= N-1.
NeighborIndex knn_indices(const PointCloud& cloud, std::size_t k);
/// Same as knn_indices but on raw coordinates (any precision), used inside differentiable code.
NeighborIndex knn_indices(const PointsD& points, std::size_t k);

NeighborCoordinates gather_neighbors(const PointCloud& cloud, const NeighborIndex& idx);

/// Mean over points of `a` of the squared distance to the nearest point of `b`.
double chamfer_one_sided(const PointCloud& a, const PointCloud& b);
/// chamfer_one_sided(a, b) + chamfer_one_sided(b, a).
double chamfer_symmetric(const PointCloud& a, const PointCloud& b);
/// Max over points of `a` of the squared distance to the nearest point of `b`.
double hausdorff_one_sided(const PointCloud& a, const PointCloud& b);

/// For every point of `a`, the index of its nearest point in `b` and the squared distance.
struct NearestMatch {
  std::vector<std::size_t> index;
  std::vector<double> sq_distance;
};
NearestMatch nearest_in(const PointsD& a, const PointsD& b);

/// Centers on the centroid and scales so the farthest point has norm 1.
/// Throws DegenerateInput if all points coincide.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

/// Uniform sample of n distinct points without replacement, output in ascending source-index order.
PointCloud random_subsample(const PointCloud& cloud, std::size_t n, std::uint64_t seed);
/// The sorted index set random_subsample would keep.
std::vector<std::size_t> random_subsample_indices(std::size_t n_points, std::size_t n, std::uint64_t seed);

}  // namespace apckit::geometry
