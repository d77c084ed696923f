#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lcirc/rng.hpp"
#include "lcirc/tensor.hpp"

namespace lcirc {

template <typename Scalar>
using ParamList = std::vector<std::pair<std::string, Tensor<Scalar>>>;

/// Gaussian init drawn from a stream keyed by the parameter's full name, so the
/// values depend only on (seed, name).
template <typename Scalar>
Tensor<Scalar> init_normal(const Rng& root, const std::string& name, Shape shape, double stddev) {
  Rng rng = root.split(name);
  Matrix<Scalar> m(detail::leading_rows(shape), detail::last_dim(shape));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.normal() * stddev);
  return Tensor<Scalar>::parameter(std::move(shape), std::move(m));
}

template <typename Scalar>
Tensor<Scalar> init_constant(Shape shape, double v) {
  return Tensor<Scalar>::parameter(shape, Matrix<Scalar>::Constant(detail::leading_rows(shape),
                                                                   detail::last_dim(shape),
                                                                   static_cast<Scalar>(v)));
}

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // in x out
  Tensor<Scalar> bias;    // out

  static Linear make(const Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
                     double stddev) {
    return {init_normal<Scalar>(rng, name + ".weight", {in, out}, stddev),
            init_constant<Scalar>({out}, 0.0)};
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return linear(x, weight, bias); }

  void collect(ParamList<Scalar>& out, const std::string& name) const {
    out.emplace_back(name + ".weight", weight);
    out.emplace_back(name + ".bias", bias);
  }
};

template <typename Scalar>
struct LayerNorm {
  Tensor<Scalar> gain;
  Tensor<Scalar> bias;
  Scalar eps = Scalar(1e-5);

  static LayerNorm make(std::int64_t d, double eps) {
    return {init_constant<Scalar>({d}, 1.0), init_constant<Scalar>({d}, 0.0), static_cast<Scalar>(eps)};
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return layer_norm(x, gain, bias, eps); }

  void collect(ParamList<Scalar>& out, const std::string& name) const {
    out.emplace_back(name + ".gain", gain);
    out.emplace_back(name + ".bias", bias);
  }
};

template <typename Scalar>
struct Mlp {
  Linear<Scalar> fc1;
  Linear<Scalar> fc2;

  static Mlp make(const Rng& rng, const std::string& name, std::int64_t d, std::int64_t hidden,
                  double stddev, double out_stddev) {
    return {Linear<Scalar>::make(rng, name + ".fc1", d, hidden, stddev),
            Linear<Scalar>::make(rng, name + ".fc2", hidden, d, out_stddev)};
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return fc2(gelu(fc1(x))); }

  void collect(ParamList<Scalar>& out, const std::string& name) const {
    fc1.collect(out, name + ".fc1");
    fc2.collect(out, name + ".fc2");
  }
};

template <typename Scalar>
void set_requires_grad(ParamList<Scalar>& params, bool on) {
  for (auto& [name, p] : params) p.set_requires_grad(on);
}

}  // namespace lcirc
