#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lcirc/tensor.hpp"

namespace lcirc {

/// Central finite-difference check of reverse-mode gradients.
///
/// `loss` must rebuild the graph from the current values of `leaves` on every
/// call and return a one-element tensor. Each leaf coordinate is perturbed by
/// +-h in place and restored. Returns
///   max_i |analytic_i - central_i| / max(|analytic_i| + |central_i|, 1e-3 g)
/// with g the largest analytic gradient magnitude. The floor keeps
/// coordinates whose exact gradient is zero (key biases under softmax) from
/// reporting pure rounding noise as relative error.
template <typename Scalar>
double grad_check(const std::function<Tensor<Scalar>()>& loss, std::vector<Tensor<Scalar>> leaves,
                  double h = 1e-5) {
  for (auto& leaf : leaves) {
    if (!leaf.is_leaf()) throw ContractError("grad_check: inputs must be leaf tensors");
    leaf.zero_grad();
  }
  std::vector<bool> restore;
  for (auto& leaf : leaves) {
    restore.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
  }
  const Tensor<Scalar> out = loss();
  if (out.numel() != 1) {
    throw ContractError("grad_check: function must be scalar-valued, got shape " +
                        shape_to_string(out.shape()));
  }
  out.backward();
  std::vector<Matrix<Scalar>> analytic;
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  double g = 0.0;
  for (const auto& a : analytic) {
    if (a.size() > 0) g = std::max(g, static_cast<double>(a.cwiseAbs().maxCoeff()));
  }
  const double floor = std::max(1e-3 * g, 1e-12);
  double worst = 0.0;
  {
    NoGradGuard no_grad;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      auto& values = leaves[li].mutable_value();
      for (Eigen::Index i = 0; i < values.size(); ++i) {
        const Scalar saved = values.data()[i];
        values.data()[i] = saved + static_cast<Scalar>(h);
        const double up = static_cast<double>(loss().item());
        values.data()[i] = saved - static_cast<Scalar>(h);
        const double down = static_cast<double>(loss().item());
        values.data()[i] = saved;
        const double central = (up - down) / (2.0 * h);
        const double a = static_cast<double>(analytic[li].data()[i]);
        worst = std::max(worst, std::abs(a - central) / std::max(std::abs(a) + std::abs(central), floor));
      }
    }
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    leaves[li].zero_grad();
    leaves[li].set_requires_grad(restore[li]);
  }
  return worst;
}

/// Single-input form: checks d f(x) / d x.
template <typename Scalar>
double grad_check(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f,
                  const Tensor<Scalar>& x, double h = 1e-5) {
  Tensor<Scalar> leaf = Tensor<Scalar>::parameter(x.shape(), x.value());
  return grad_check<Scalar>([&f, &leaf] { return f(leaf); }, {leaf}, h);
}

}  // namespace lcirc
