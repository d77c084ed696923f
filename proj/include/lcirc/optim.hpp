#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lcirc/tensor.hpp"

namespace lcirc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One bias-corrected Adam step on a single parameter. `step` is 1-based.
template <typename Scalar>
void adam_update(Matrix<Scalar>& param, const Matrix<Scalar>& grad, Matrix<Scalar>& m,
                 Matrix<Scalar>& v, std::int64_t step, const AdamConfig& cfg) {
  if (m.size() == 0) m = Matrix<Scalar>::Zero(param.rows(), param.cols());
  if (v.size() == 0) v = Matrix<Scalar>::Zero(param.rows(), param.cols());
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  m = b1 * m + (1 - b1) * grad;
  v = b2 * v + (1 - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const auto step_size = static_cast<Scalar>(cfg.lr / c1);
  const auto root_c2 = static_cast<Scalar>(std::sqrt(c2));
  if (cfg.weight_decay != 0.0) param *= static_cast<Scalar>(1.0 - cfg.lr * cfg.weight_decay);
  param.array() -= step_size * m.array() / (v.array().sqrt() / root_c2 + static_cast<Scalar>(cfg.eps));
}

/// Adam over a fixed list of named parameters. Parameters not in the list are
/// never touched, which is how frozen weights stay bit-identical.
template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor<Scalar>>> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg), m_(params_.size()), v_(params_.size()) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t steps() const { return step_; }

  /// Global L2 norm of the current gradients.
  double grad_norm() const {
    double total = 0.0;
    for (const auto& [name, p] : params_) {
      if (p.has_grad()) total += static_cast<double>(p.grad().squaredNorm());
    }
    return std::sqrt(total);
  }

  /// Rescales gradients in place so their global norm is at most `max_norm`.
  void clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm <= max_norm || norm == 0.0) return;
    const auto factor = static_cast<Scalar>(max_norm / norm);
    for (auto& [name, p] : params_) {
      if (p.has_grad()) p.node()->grad *= factor;
    }
  }

  void step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (!p.has_grad()) continue;
      adam_update(p.mutable_value(), p.node()->grad, m_[i], v_[i], step_, cfg_);
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  const std::vector<std::pair<std::string, Tensor<Scalar>>>& params() const { return params_; }

 private:
  std::vector<std::pair<std::string, Tensor<Scalar>>> params_;
  AdamConfig cfg_;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
  std::int64_t step_ = 0;
};

}  // namespace lcirc
