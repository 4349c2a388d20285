#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every intermediate matrix together with a closure that
// pushes the output gradient back to its inputs. Networks are written once as
// templates over the scalar type: float for training and attacks, double for
// finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "apckit/errors.hpp"

namespace apckit::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  std::uint32_t id = 0;
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  Tape() { nodes_.reserve(64); }

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }
  Var variable(Mat value) { return push(std::move(value), true, nullptr); }

  [[nodiscard]] const Mat& value(Var v) const { return nodes_[v.id].value; }
  [[nodiscard]] T scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() root with respect to `v`; zeros if unreached.
  [[nodiscard]] Mat grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Reverse sweep from a 1x1 node. Gradients from earlier sweeps are discarded.
  void backward(Var root) {
    if (nodes_[root.id].value.size() != 1) throw InvalidArgument("backward() needs a scalar root");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id].grad = Mat::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Gradient slot for `v`, zero-initialized on first touch. Only valid during backward().
  Mat& grad_slot(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var push(Mat value, bool requires_grad, BackwardFn fn) {
    if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("tape overflow");
    nodes_.push_back(Node{std::move(value), Mat{}, requires_grad, requires_grad ? std::move(fn) : BackwardFn{}});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(what);
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

/// Brute-force nearest row of `b` for every row of `a` (3 columns each).
template <typename T>
void nearest_rows(const Matrix<T>& a, const Matrix<T>& b, std::vector<Eigen::Index>& index, std::vector<T>& sq) {
  index.assign(static_cast<std::size_t>(a.rows()), 0);
  sq.assign(static_cast<std::size_t>(a.rows()), std::numeric_limits<T>::infinity());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    T best = std::numeric_limits<T>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const T dx = a(i, 0) - b(j, 0);
      const T dy = a(i, 1) - b(j, 1);
      const T dz = a(i, 2) - b(j, 2);
      const T d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    index[static_cast<std::size_t>(i)] = arg;
    sq[static_cast<std::size_t>(i)] = best;
  }
}

}  // namespace detail

/// y = x W + b, with b a 1 x out row broadcast over rows.
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  const auto& B = t.value(b);
  detail::require(X.cols() == W.rows(), "linear: input width does not match weight rows");
  detail::require(B.rows() == 1 && B.cols() == W.cols(), "linear: bias shape mismatch");
  Matrix<T> y(X.rows(), W.cols());
  y.noalias() = X * W;
  y.rowwise() += B.row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  return t.push(std::move(y), rg, [x, w, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(x)) t.grad_slot(x).noalias() += g * t.value(w).transpose();
    if (t.requires_grad(w)) t.grad_slot(w).noalias() += t.value(x).transpose() * g;
    if (t.requires_grad(b)) t.grad_slot(b) += g.colwise().sum();
  });
}

/// Exact (erf-based) GELU.
template <typename T>
Var gelu(Tape<T>& t, Var x) {
  Matrix<T> y = t.value(x).unaryExpr([](T v) { return detail::gelu(v); });
  return t.push(std::move(y), t.requires_grad(x), [x](Tape<T>& t, const Matrix<T>& g) {
    t.grad_slot(x).array() += g.array() * t.value(x).unaryExpr([](T v) { return detail::gelu_grad(v); }).array();
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  detail::require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
                  "add: shape mismatch");
  Matrix<T> y = t.value(a) + t.value(b);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(y), rg, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad_slot(a) += g;
    if (t.requires_grad(b)) t.grad_slot(b) += g;
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  detail::require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
                  "sub: shape mismatch");
  Matrix<T> y = t.value(a) - t.value(b);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(y), rg, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad_slot(a) += g;
    if (t.requires_grad(b)) t.grad_slot(b) -= g;
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  Matrix<T> y = t.value(a) * s;
  return t.push(std::move(y), t.requires_grad(a), [a, s](Tape<T>& t, const Matrix<T>& g) {
    t.grad_slot(a) += g * s;
  });
}

/// Sum of scalars with fixed weights: sum_i w_i * s_i.
template <typename T>
Var weighted_sum(Tape<T>& t, std::vector<std::pair<Var, T>> kept) {
  Matrix<T> y = Matrix<T>::Zero(1, 1);
  bool rg = false;
  for (const auto& [v, w] : kept) {
    detail::require(t.value(v).size() == 1, "weighted_sum: terms must be scalars");
    y(0, 0) += w * t.scalar(v);
    rg = rg || t.requires_grad(v);
  }
  return t.push(std::move(y), rg, [kept = std::move(kept)](Tape<T>& t, const Matrix<T>& g) {
    for (const auto& [v, w] : kept) {
      if (t.requires_grad(v)) t.grad_slot(v)(0, 0) += w * g(0, 0);
    }
  });
}

/// Rows of x selected (with repetition allowed) by `indices`.
template <typename T>
Var gather_rows(Tape<T>& t, Var x, std::vector<std::size_t> indices) {
  const auto& X = t.value(x);
  Matrix<T> y(static_cast<Eigen::Index>(indices.size()), X.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    detail::require(indices[r] < static_cast<std::size_t>(X.rows()), "gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(indices[r]));
  }
  return t.push(std::move(y), t.requires_grad(x), [x, idx = std::move(indices)](Tape<T>& t, const Matrix<T>& g) {
    auto& gx = t.grad_slot(x);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      gx.row(static_cast<Eigen::Index>(idx[r])) += g.row(static_cast<Eigen::Index>(r));
    }
  });
}

/// A 1 x c row repeated n times.
template <typename T>
Var repeat_rows(Tape<T>& t, Var row, Eigen::Index n) {
  detail::require(t.value(row).rows() == 1, "repeat_rows: input must be a single row");
  Matrix<T> y = t.value(row).replicate(n, 1);
  return t.push(std::move(y), t.requires_grad(row), [row](Tape<T>& t, const Matrix<T>& g) {
    t.grad_slot(row) += g.colwise().sum();
  });
}

template <typename T>
Var concat_cols(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::require(A.rows() == B.rows(), "concat_cols: row mismatch");
  Matrix<T> y(A.rows(), A.cols() + B.cols());
  y.leftCols(A.cols()) = A;
  y.rightCols(B.cols()) = B;
  const Eigen::Index ca = A.cols();
  const Eigen::Index cb = B.cols();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(y), rg, [a, b, ca, cb](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad_slot(a) += g.leftCols(ca);
    if (t.requires_grad(b)) t.grad_slot(b) += g.rightCols(cb);
  });
}

template <typename T>
Var concat_rows(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::require(A.cols() == B.cols(), "concat_rows: column mismatch");
  Matrix<T> y(A.rows() + B.rows(), A.cols());
  y.topRows(A.rows()) = A;
  y.bottomRows(B.rows()) = B;
  const Eigen::Index ra = A.rows();
  const Eigen::Index rb = B.rows();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(y), rg, [a, b, ra, rb](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad_slot(a) += g.topRows(ra);
    if (t.requires_grad(b)) t.grad_slot(b) += g.bottomRows(rb);
  });
}

/// Column-wise max over consecutive groups of `group` rows: (R/group) x c.
/// The gradient goes to the first row attaining each maximum.
template <typename T>
Var segment_max(Tape<T>& t, Var x, Eigen::Index group) {
  const auto& X = t.value(x);
  detail::require(group > 0 && X.rows() % group == 0, "segment_max: rows not divisible by group");
  const Eigen::Index segments = X.rows() / group;
  const Eigen::Index cols = X.cols();
  Matrix<T> y(segments, cols);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(segments * cols));
  for (Eigen::Index s = 0; s < segments; ++s) {
    const Eigen::Index base = s * group;
    for (Eigen::Index c = 0; c < cols; ++c) {
      y(s, c) = X(base, c);
      arg[static_cast<std::size_t>(s * cols + c)] = base;
    }
    for (Eigen::Index r = base + 1; r < base + group; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (X(r, c) > y(s, c)) {
          y(s, c) = X(r, c);
          arg[static_cast<std::size_t>(s * cols + c)] = r;
        }
      }
    }
  }
  return t.push(std::move(y), t.requires_grad(x), [x, cols, arg = std::move(arg)](Tape<T>& t, const Matrix<T>& g) {
    auto& gx = t.grad_slot(x);
    for (Eigen::Index s = 0; s < g.rows(); ++s) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        gx(arg[static_cast<std::size_t>(s * cols + c)], c) += g(s, c);
      }
    }
  });
}

/// Column-wise max over all rows: 1 x c.
template <typename T>
Var column_max(Tape<T>& t, Var x) {
  return segment_max(t, x, t.value(x).rows());
}

/// How an edge (i, j) is presented to the first layer of an edge MLP.
enum class EdgeForm {
  kConcat,      ///< [x_i ; x_j]
  kDifference,  ///< [x_i ; x_j - x_i]
};

/// First affine layer of a shared edge MLP, evaluated for every (i, j) with
/// j = neighbors[i * k + j'] and laid out as row i * k + j'. `w` has 2c rows
/// for c-column points; the per-point products are shared across edges.
template <typename T>
Var edge_linear(Tape<T>& t, Var x, std::vector<std::size_t> neighbors, std::size_t k, Var w, Var b, EdgeForm form) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  const Eigen::Index c = X.cols();
  const auto n = static_cast<std::size_t>(X.rows());
  detail::require(W.rows() == 2 * c, "edge_linear: weight must have 2 * point-width rows");
  detail::require(neighbors.size() == n * k && k > 0, "edge_linear: neighbor table shape mismatch");
  const auto top = W.topRows(c);
  const auto bottom = W.bottomRows(c);
  Matrix<T> self(X.rows(), W.cols());
  if (form == EdgeForm::kConcat) {
    self.noalias() = X * top;
  } else {
    self.noalias() = X * (top - bottom);
  }
  Matrix<T> other(X.rows(), W.cols());
  other.noalias() = X * bottom;
  Matrix<T> y(static_cast<Eigen::Index>(n * k), W.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t nb = neighbors[i * k + j];
      detail::require(nb < n, "edge_linear: neighbor index out of range");
      y.row(static_cast<Eigen::Index>(i * k + j)) =
          self.row(static_cast<Eigen::Index>(i)) + other.row(static_cast<Eigen::Index>(nb)) + t.value(b).row(0);
    }
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  return t.push(std::move(y), rg, [x, w, b, k, form, c, nb = std::move(neighbors)](Tape<T>& t, const Matrix<T>& g) {
    const auto& X = t.value(x);
    const auto& W = t.value(w);
    const Eigen::Index rows = X.rows();
    Matrix<T> g_self = Matrix<T>::Zero(rows, g.cols());
    Matrix<T> g_other = Matrix<T>::Zero(rows, g.cols());
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const auto r = static_cast<Eigen::Index>(static_cast<std::size_t>(i) * k + j);
        g_self.row(i) += g.row(r);
        g_other.row(static_cast<Eigen::Index>(nb[static_cast<std::size_t>(r)])) += g.row(r);
      }
    }
    const auto top = W.topRows(c);
    const auto bottom = W.bottomRows(c);
    if (t.requires_grad(x)) {
      auto& gx = t.grad_slot(x);
      if (form == EdgeForm::kConcat) {
        gx.noalias() += g_self * top.transpose();
      } else {
        gx.noalias() += g_self * (top - bottom).transpose();
      }
      gx.noalias() += g_other * bottom.transpose();
    }
    if (t.requires_grad(w)) {
      auto& gw = t.grad_slot(w);
      Matrix<T> d_self = X.transpose() * g_self;
      Matrix<T> d_other = X.transpose() * g_other;
      gw.topRows(c) += d_self;
      if (form == EdgeForm::kConcat) {
        gw.bottomRows(c) += d_other;
      } else {
        gw.bottomRows(c) += d_other - d_self;
      }
    }
    if (t.requires_grad(b)) t.grad_slot(b) += g.colwise().sum();
  });
}

/// Per point, [x_i, x_{n(i,0)}, ..., x_{n(i,k-1)}] flattened to one row of (k+1) * c values.
template <typename T>
Var neighborhood_flatten(Tape<T>& t, Var x, std::vector<std::size_t> neighbors, std::size_t k) {
  const auto& X = t.value(x);
  const Eigen::Index c = X.cols();
  const auto n = static_cast<std::size_t>(X.rows());
  detail::require(neighbors.size() == n * k, "neighborhood_flatten: neighbor table shape mismatch");
  Matrix<T> y(X.rows(), static_cast<Eigen::Index>(k + 1) * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    y.block(row, 0, 1, c) = X.row(row);
    for (std::size_t j = 0; j < k; ++j) {
      y.block(row, static_cast<Eigen::Index>(j + 1) * c, 1, c) = X.row(static_cast<Eigen::Index>(neighbors[i * k + j]));
    }
  }
  return t.push(std::move(y), t.requires_grad(x), [x, k, c, nb = std::move(neighbors)](Tape<T>& t, const Matrix<T>& g) {
    auto& gx = t.grad_slot(x);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      gx.row(i) += g.block(i, 0, 1, c);
      for (std::size_t j = 0; j < k; ++j) {
        gx.row(static_cast<Eigen::Index>(nb[static_cast<std::size_t>(i) * k + j])) +=
            g.block(i, static_cast<Eigen::Index>(j + 1) * c, 1, c);
      }
    }
  });
}

/// Sum of squared entries, 1x1.
template <typename T>
Var sum_squares(Tape<T>& t, Var x) {
  Matrix<T> y(1, 1);
  y(0, 0) = t.value(x).squaredNorm();
  return t.push(std::move(y), t.requires_grad(x), [x](Tape<T>& t, const Matrix<T>& g) {
    t.grad_slot(x) += T(2) * g(0, 0) * t.value(x);
  });
}

/// Mean over entries of (x - target)^2; the target is a constant.
template <typename T>
Var mean_squared_error(Tape<T>& t, Var x, Matrix<T> target) {
  detail::require(target.rows() == t.value(x).rows() && target.cols() == t.value(x).cols(),
                  "mean_squared_error: shape mismatch");
  const auto count = static_cast<T>(target.size());
  Matrix<T> y(1, 1);
  y(0, 0) = (t.value(x) - target).squaredNorm() / count;
  return t.push(std::move(y), t.requires_grad(x), [x, count, target = std::move(target)](Tape<T>& t, const Matrix<T>& g) {
    t.grad_slot(x) += (T(2) * g(0, 0) / count) * (t.value(x) - target);
  });
}

/// Softmax cross-entropy of a 1 x C logit row against a class index.
template <typename T>
Var cross_entropy(Tape<T>& t, Var logits, std::size_t label) {
  const auto& z = t.value(logits);
  detail::require(z.rows() == 1 && label < static_cast<std::size_t>(z.cols()), "cross_entropy: bad logits or label");
  const T zmax = z.maxCoeff();
  Matrix<T> p = (z.array() - zmax).exp().matrix();
  const T total = p.sum();
  p /= total;
  Matrix<T> y(1, 1);
  y(0, 0) = std::log(total) + zmax - z(0, static_cast<Eigen::Index>(label));
  return t.push(std::move(y), t.requires_grad(logits), [logits, label, p = std::move(p)](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> d = p;
    d(0, static_cast<Eigen::Index>(label)) -= T(1);
    t.grad_slot(logits) += g(0, 0) * d;
  });
}

/// Untargeted margin max(z_label - max_{j != label} z_j, -kappa).
template <typename T>
Var margin_loss(Tape<T>& t, Var logits, std::size_t label, T kappa) {
  const auto& z = t.value(logits);
  detail::require(z.rows() == 1 && z.cols() >= 2 && label < static_cast<std::size_t>(z.cols()),
                  "margin_loss: needs at least two classes");
  const auto lab = static_cast<Eigen::Index>(label);
  Eigen::Index other = lab == 0 ? 1 : 0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    if (j != lab && z(0, j) > z(0, other)) other = j;
  }
  const T raw = z(0, lab) - z(0, other);
  const bool active = raw > -kappa;
  Matrix<T> y(1, 1);
  y(0, 0) = active ? raw : -kappa;
  return t.push(std::move(y), t.requires_grad(logits), [logits, lab, other, active](Tape<T>& t, const Matrix<T>& g) {
    if (!active) return;
    auto& gz = t.grad_slot(logits);
    gz(0, lab) += g(0, 0);
    gz(0, other) -= g(0, 0);
  });
}

enum class SetDistance {
  kChamfer,           ///< mean_a min_b |a - b|^2
  kChamferSymmetric,  ///< kChamfer(a, b) + kChamfer(b, a)
  kHausdorff,         ///< max_a min_b |a - b|^2
};

/// Point-set distance from the variable cloud x (N x 3) to a constant target cloud.
/// The nearest-neighbor assignment is treated as fixed when differentiating.
template <typename T>
Var set_distance(Tape<T>& t, Var x, Matrix<T> target, SetDistance kind) {
  const auto& X = t.value(x);
  detail::require(X.rows() > 0 && target.rows() > 0, "set_distance: empty cloud");
  detail::require(X.cols() == 3 && target.cols() == 3, "set_distance: clouds must have 3 columns");
  std::vector<Eigen::Index> fwd_idx;
  std::vector<T> fwd_sq;
  detail::nearest_rows(X, target, fwd_idx, fwd_sq);
  Matrix<T> y(1, 1);
  Matrix<T> coeff = Matrix<T>::Zero(X.rows(), 3);  // dL/dx
  const T n = static_cast<T>(X.rows());
  if (kind == SetDistance::kHausdorff) {
    const auto worst = std::max_element(fwd_sq.begin(), fwd_sq.end()) - fwd_sq.begin();
    y(0, 0) = fwd_sq[static_cast<std::size_t>(worst)];
    coeff.row(worst) = T(2) * (X.row(worst) - target.row(fwd_idx[static_cast<std::size_t>(worst)]));
  } else {
    T sum = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      sum += fwd_sq[static_cast<std::size_t>(i)];
      coeff.row(i) = (T(2) / n) * (X.row(i) - target.row(fwd_idx[static_cast<std::size_t>(i)]));
    }
    y(0, 0) = sum / n;
    if (kind == SetDistance::kChamferSymmetric) {
      std::vector<Eigen::Index> back_idx;
      std::vector<T> back_sq;
      detail::nearest_rows(target, X, back_idx, back_sq);
      const T m = static_cast<T>(target.rows());
      T back = 0;
      for (Eigen::Index j = 0; j < target.rows(); ++j) {
        back += back_sq[static_cast<std::size_t>(j)];
        const Eigen::Index i = back_idx[static_cast<std::size_t>(j)];
        coeff.row(i) += (T(2) / m) * (X.row(i) - target.row(j));
      }
      y(0, 0) += back / m;
    }
  }
  return t.push(std::move(y), t.requires_grad(x), [x, coeff = std::move(coeff)](Tape<T>& t, const Matrix<T>& g) {
    t.grad_slot(x) += g(0, 0) * coeff;
  });
}

/// (1/N) sum_i (1/k) sum_j |x_i - x_{n(i,j)}|^2 with a fixed neighbor table.
template <typename T>
Var neighbor_spread(Tape<T>& t, Var x, std::vector<std::size_t> neighbors, std::size_t k) {
  const auto& X = t.value(x);
  const auto n = static_cast<std::size_t>(X.rows());
  detail::require(k > 0 && neighbors.size() == n * k, "neighbor_spread: neighbor table shape mismatch");
  const T norm = T(1) / static_cast<T>(n * k);
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      sum += (X.row(static_cast<Eigen::Index>(i)) - X.row(static_cast<Eigen::Index>(neighbors[i * k + j]))).squaredNorm();
    }
  }
  Matrix<T> y(1, 1);
  y(0, 0) = sum * norm;
  return t.push(std::move(y), t.requires_grad(x), [x, k, norm, nb = std::move(neighbors)](Tape<T>& t, const Matrix<T>& g) {
    const auto& X = t.value(x);
    auto& gx = t.grad_slot(x);
    const T s = T(2) * norm * g(0, 0);
    for (std::size_t i = 0; i < nb.size() / k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const auto a = static_cast<Eigen::Index>(i);
        const auto b = static_cast<Eigen::Index>(nb[i * k + j]);
        const Eigen::Matrix<T, 1, Eigen::Dynamic> d = s * (X.row(a) - X.row(b));
        gx.row(a) += d;
        gx.row(b) -= d;
      }
    }
  });
}

/// Mean squared distance of each row to the centroid of its consecutive group of `group` rows.
template <typename T>
Var cluster_spread(Tape<T>& t, Var x, Eigen::Index group) {
  const auto& X = t.value(x);
  detail::require(group > 0 && X.rows() % group == 0, "cluster_spread: rows not divisible by group");
  Matrix<T> centered(X.rows(), X.cols());
  for (Eigen::Index s = 0; s < X.rows() / group; ++s) {
    const auto block = X.middleRows(s * group, group);
    centered.middleRows(s * group, group) = block.rowwise() - block.colwise().mean();
  }
  const T n = static_cast<T>(X.rows());
  Matrix<T> y(1, 1);
  y(0, 0) = centered.squaredNorm() / n;
  return t.push(std::move(y), t.requires_grad(x), [x, n, centered = std::move(centered)](Tape<T>& t, const Matrix<T>& g) {
    t.grad_slot(x) += (T(2) * g(0, 0) / n) * centered;
  });
}

}  // namespace apckit::ad
