#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace apckit {

/// Row-major N x 3 single-precision coordinates.
using Points = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;
/// Double-precision counterpart used for gradients and oracle checks.
using PointsD = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// An ordered set of N >= 1 finite 3D points. Point order is significant:
/// perturbation and purification preserve index identity.
class PointCloud {
 public:
  PointCloud() = default;
  /// Throws InvalidArgument if `points` is empty or holds a non-finite coordinate.
  explicit PointCloud(Points points);

  static PointCloud from_rows(std::span<const float> xyz);

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  [[nodiscard]] bool empty() const { return points_.rows() == 0; }
  [[nodiscard]] const Points& points() const { return points_; }
  [[nodiscard]] Eigen::RowVector3f point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)); }

  /// Subset in the given index order.
  [[nodiscard]] PointCloud select(std::span<const std::size_t> indices) const;
  [[nodiscard]] PointsD as_double() const { return points_.cast<double>(); }

  friend bool operator==(const PointCloud& a, const PointCloud& b);

 private:
  Points points_;
};

}  // namespace apckit
