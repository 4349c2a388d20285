#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "apckit/point_cloud.hpp"

namespace apckit::defenses {

/// Simple random sampling: removes m points uniformly without replacement. Requires 0 <= m < N.
PointCloud srs(const PointCloud& cloud, std::size_t m, std::uint64_t seed);

struct SorStats {
  std::vector<double> mean_knn_distance;
  double mean = 0.0;
  double stddev = 0.0;
  double threshold = 0.0;
  std::vector<std::size_t> kept;
};

/// Statistical outlier removal statistics: d_i = mean distance to the k nearest neighbors,
/// threshold mu + alpha * sigma (population standard deviation).
SorStats sor_statistics(const PointCloud& cloud, std::size_t k, double alpha);

/// Keeps points with d_i <= mu + alpha * sigma, in original order. If every point would be
/// removed the input is returned unchanged. Requires 1 <= k <= N-1.
PointCloud sor(const PointCloud& cloud, std::size_t k, double alpha);

struct DefenseSpec {
  std::string name = "none";  ///< srs, sor or none
  std::size_t srs_drop_count = 128;
  std::size_t sor_k = 2;
  double sor_alpha = 1.1;
  std::uint64_t seed = 0;
};

/// Applies a baseline defense by spec. SRS drops min(srs_drop_count, N-1) points.
PointCloud apply(const DefenseSpec& spec, const PointCloud& cloud, std::uint64_t example_seed);

}  // namespace apckit::defenses
