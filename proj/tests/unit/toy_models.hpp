#pragma once

#include <string>

#include "apckit/autodiff.hpp"
#include "apckit/victims.hpp"

namespace testing_support {

/// logits_c = sum over the first `used` points of <w_c, x_i> (all points when used == 0).
class LinearToy final : public apckit::victims::Classifier {
 public:
  explicit LinearToy(Eigen::Matrix<double, 3, Eigen::Dynamic> w, std::size_t used = 0) : w_(std::move(w)), used_(used) {}

  [[nodiscard]] std::string name() const override { return "toy"; }
  [[nodiscard]] std::size_t num_classes() const override { return static_cast<std::size_t>(w_.cols()); }
  [[nodiscard]] std::size_t feature_dim() const override { return static_cast<std::size_t>(w_.cols()); }

  apckit::victims::ForwardOutput forward(apckit::ad::Tape<float>& t, apckit::ad::Var x) const override { return impl(t, x); }
  apckit::victims::ForwardOutput forward(apckit::ad::Tape<double>& t, apckit::ad::Var x) const override { return impl(t, x); }

 private:
  template <typename T>
  apckit::victims::ForwardOutput impl(apckit::ad::Tape<T>& t, apckit::ad::Var x) const {
    using M = apckit::ad::Matrix<T>;
    const auto n = t.value(x).rows();
    const Eigen::Index used = used_ == 0 ? n : static_cast<Eigen::Index>(used_);
    std::vector<std::size_t> rows(static_cast<std::size_t>(used));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    const apckit::ad::Var kept = apckit::ad::gather_rows(t, x, rows);
    const apckit::ad::Var zero = t.constant(M::Zero(1, w_.cols()));
    const apckit::ad::Var per_point = apckit::ad::linear(t, kept, t.constant(M(w_.cast<T>())), zero);
    const apckit::ad::Var logits = apckit::ad::linear(t, t.constant(M::Ones(1, used)), per_point, zero);
    return {logits, logits};
  }

  Eigen::Matrix<double, 3, Eigen::Dynamic> w_;
  std::size_t used_;
};

}  // namespace testing_support
