#include "apckit/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "apckit/errors.hpp"
#include "apckit/geometry.hpp"
#include "apckit/seeding.hpp"

namespace apckit::defenses {

PointCloud srs(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
  if (m >= cloud.size()) throw InvalidArgument("srs: must keep at least one point (m < N)");
  if (m == 0) return cloud;
  return geometry::random_subsample(cloud, cloud.size() - m, seed);
}

SorStats sor_statistics(const PointCloud& cloud, std::size_t k, double alpha) {
  if (k < 1 || k >= cloud.size()) throw InvalidArgument("sor: k must satisfy 1 <= k <= N-1");
  if (!(alpha > 0.0)) throw InvalidArgument("sor: alpha must be positive");
  const geometry::NeighborIndex nb = geometry::knn_indices(cloud, k);
  const PointsD p = cloud.as_double();
  SorStats s;
  s.mean_knn_distance.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sum += (p.row(static_cast<Eigen::Index>(i)) - p.row(static_cast<Eigen::Index>(nb(i, j)))).norm();
    }
    s.mean_knn_distance[i] = sum / static_cast<double>(k);
  }
  const auto n = static_cast<double>(cloud.size());
  s.mean = std::accumulate(s.mean_knn_distance.begin(), s.mean_knn_distance.end(), 0.0) / n;
  double var = 0.0;
  for (double d : s.mean_knn_distance) var += (d - s.mean) * (d - s.mean);
  s.stddev = std::sqrt(var / n);
  s.threshold = s.mean + alpha * s.stddev;
  // Rounding slack so exactly-equal distances (sigma = 0) never trip the threshold.
  const double slack = 1e-12 * std::max(1.0, s.mean);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (s.mean_knn_distance[i] <= s.threshold + slack) s.kept.push_back(i);
  }
  return s;
}

PointCloud sor(const PointCloud& cloud, std::size_t k, double alpha) {
  const SorStats s = sor_statistics(cloud, k, alpha);
  if (s.kept.empty() || s.kept.size() == cloud.size()) return cloud;
  return cloud.select(s.kept);
}

PointCloud apply(const DefenseSpec& spec, const PointCloud& cloud, std::uint64_t example_seed) {
  if (spec.name == "none") return cloud;
  if (spec.name == "sor") return sor(cloud, spec.sor_k, spec.sor_alpha);
  if (spec.name == "srs") {
    const std::size_t m = std::min(spec.srs_drop_count, cloud.size() - 1);
    return srs(cloud, m, derive_seed(spec.seed, {"srs", std::to_string(example_seed)}));
  }
  throw InvalidArgument("unknown defense: " + spec.name);
}

}  // namespace apckit::defenses
