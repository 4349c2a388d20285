#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "apckit/point_cloud.hpp"
#include "apckit/seeding.hpp"
#include "apckit/victims.hpp"

namespace testing_support {

using apckit::PointCloud;
using apckit::Points;
using apckit::PointsD;

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed, float scale = 1.0F) {
  apckit::Rng rng(seed);
  std::uniform_real_distribution<float> u(-scale, scale);
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return PointCloud(std::move(p));
}

inline PointsD random_points_d(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  apckit::Rng rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  PointsD p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

inline double sq_dist(const PointsD& a, Eigen::Index i, const PointsD& b, Eigen::Index j) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
  return s;
}

/// All-pairs kNN: sort every other point by (squared distance, index).
inline std::vector<std::vector<std::size_t>> brute_knn(const PointsD& p, std::size_t k) {
  const auto n = static_cast<std::size_t>(p.rows());
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d.emplace_back(sq_dist(p, static_cast<Eigen::Index>(i), p, static_cast<Eigen::Index>(j)), j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t j = 0; j < k; ++j) out[i].push_back(d[j].second);
  }
  return out;
}

inline std::vector<double> brute_min_sq(const PointsD& a, const PointsD& b) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) best = std::min(best, sq_dist(a, i, b, j));
    out.push_back(best);
  }
  return out;
}

inline double brute_chamfer(const PointsD& a, const PointsD& b) {
  double s = 0.0;
  for (double v : brute_min_sq(a, b)) s += v;
  return s / static_cast<double>(a.rows());
}

inline double brute_hausdorff(const PointsD& a, const PointsD& b) {
  const auto m = brute_min_sq(a, b);
  return *std::max_element(m.begin(), m.end());
}

/// Central differences of f at x, step h, every coordinate.
template <typename Mat>
Mat finite_difference(const std::function<double(const Mat&)>& f, const Mat& x, double h = 1e-3) {
  Mat g = Mat::Zero(x.rows(), x.cols());
  Mat xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = xp.data()[i];
    xp.data()[i] = v + h;
    const double fp = f(xp);
    xp.data()[i] = v - h;
    const double fm = f(xp);
    xp.data()[i] = v;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}


// Selection signatures: every discrete choice (max-pool argmax, kNN graph, nearest match) a
// function makes at a point. Central differences are only meaningful when the signature is
// constant over the whole stencil, i.e. away from ties.

using Signature = std::vector<std::size_t>;

inline double gelu_d(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Eigen::MatrixXd dense_gelu(const apckit::victims::VictimModel& m, std::size_t layer, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd w = m.params()[2 * layer].value.cast<double>();
  const Eigen::RowVectorXd b = m.params()[2 * layer + 1].value.cast<double>();
  return ((x * w).rowwise() + b).unaryExpr(&gelu_d);
}

inline void append_column_argmax(const Eigen::MatrixXd& v, Signature& sig) {
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index r = 0;
    v.col(c).maxCoeff(&r);
    sig.push_back(static_cast<std::size_t>(r));
  }
}

/// Discrete choices of a victim forward pass on `x`.
inline Signature victim_signature(const apckit::victims::VictimModel& m, const PointsD& x) {
  Signature sig;
  Eigen::MatrixXd per_point;
  if (m.config().architecture == apckit::victims::Architecture::kPointNetMini) {
    per_point = dense_gelu(m, 2, dense_gelu(m, 1, dense_gelu(m, 0, x)));
  } else {
    const std::size_t k = m.config().k_graph;
    const auto nb = brute_knn(x, k);
    Eigen::MatrixXd local(x.rows(), m.params()[2].value.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::MatrixXd edges(static_cast<Eigen::Index>(k), 6);
      for (std::size_t j = 0; j < k; ++j) {
        sig.push_back(nb[static_cast<std::size_t>(i)][j]);
        edges.row(static_cast<Eigen::Index>(j)) << x.row(i),
            x.row(static_cast<Eigen::Index>(nb[static_cast<std::size_t>(i)][j])) - x.row(i);
      }
      const Eigen::MatrixXd e = dense_gelu(m, 1, dense_gelu(m, 0, edges));
      append_column_argmax(e, sig);
      local.row(i) = e.colwise().maxCoeff();
    }
    per_point = dense_gelu(m, 2, local);
  }
  append_column_argmax(per_point, sig);
  return sig;
}

/// Nearest row of `b` for every row of `a`.
inline Signature nearest_signature(const PointsD& a, const PointsD& b) {
  Signature sig;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::Index best = 0;
    (b.rowwise() - a.row(i)).rowwise().squaredNorm().minCoeff(&best);
    sig.push_back(static_cast<std::size_t>(best));
  }
  return sig;
}

/// True when `sig` is identical at x and at every x +- h e_i.
inline bool stencil_is_tie_free(const std::function<Signature(const PointsD&)>& sig, const PointsD& x, double h) {
  const Signature center = sig(x);
  PointsD xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = xp.data()[i];
    for (const double d : {h, -h}) {
      xp.data()[i] = v + d;
      if (sig(xp) != center) return false;
    }
    xp.data()[i] = v;
  }
  return true;
}

/// |a - b| / max(|a|, |b|, floor), over whole tensors.
template <typename A, typename B>
double rel_error(const A& a, const B& b, double floor = 1e-8) {
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

}  // namespace testing_support
