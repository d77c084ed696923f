// Implementation of the tensor operations declared in tensor.hpp.

#include <cmath>
#include <limits>
#include <numbers>

namespace lcirc {

namespace detail {

template <typename Scalar>
inline void acc(const Tensor<Scalar>& t, const Matrix<Scalar>& g) {
  if (t.requires_grad()) t.node()->accumulate(g);
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
  }
}

template <typename Scalar>
void require_rank2(const Tensor<Scalar>& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_to_string(a.shape()));
  }
}

inline int normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (r == 0 || (axis != 0 && axis != r - 1)) {
    throw DimensionError(std::string(op) + ": only the leading or last axis is supported");
  }
  return axis;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  MacCounter::add(static_cast<std::uint64_t>(a.rows() * a.cols() * b.cols()));
  Matrix<Scalar> out = a.value() * b.value();
  return detail::make_result(Shape{a.rows(), b.cols()}, std::move(out), {&a, &b},
                             [a, b](const Matrix<Scalar>& g) {
                               if (a.requires_grad()) detail::acc(a, Matrix<Scalar>(g * b.value().transpose()));
                               if (b.requires_grad()) detail::acc(b, Matrix<Scalar>(a.value().transpose() * g));
                             });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return detail::make_result(a.shape(), Matrix<Scalar>(a.value() + b.value()), {&a, &b},
                             [a, b](const Matrix<Scalar>& g) {
                               detail::acc(a, g);
                               detail::acc(b, g);
                             });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::make_result(a.shape(), Matrix<Scalar>(a.value() - b.value()), {&a, &b},
                             [a, b](const Matrix<Scalar>& g) {
                               detail::acc(a, g);
                               if (b.requires_grad()) detail::acc(b, Matrix<Scalar>(-g));
                             });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return detail::make_result(a.shape(), std::move(out), {&a, &b},
                             [a, b](const Matrix<Scalar>& g) {
                               if (a.requires_grad()) detail::acc(a, Matrix<Scalar>(g.cwiseProduct(b.value())));
                               if (b.requires_grad()) detail::acc(b, Matrix<Scalar>(g.cwiseProduct(a.value())));
                             });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return detail::make_result(a.shape(), Matrix<Scalar>(a.value() * s), {&a},
                             [a, s](const Matrix<Scalar>& g) { detail::acc(a, Matrix<Scalar>(g * s)); });
}

template <typename Scalar>
Tensor<Scalar> scale_by(const Tensor<Scalar>& a, const Tensor<Scalar>& s) {
  if (s.numel() != 1) {
    throw DimensionError("scale_by: factor must have one element, got " + shape_to_string(s.shape()));
  }
  const Scalar factor = s.item();
  return detail::make_result(a.shape(), Matrix<Scalar>(a.value() * factor), {&a, &s},
                             [a, s, factor](const Matrix<Scalar>& g) {
                               if (a.requires_grad()) detail::acc(a, Matrix<Scalar>(g * factor));
                               if (s.requires_grad()) {
                                 const Scalar ds = g.cwiseProduct(a.value()).sum();
                                 detail::acc(s, Matrix<Scalar>(Matrix<Scalar>::Constant(1, 1, ds)));
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& a, const Tensor<Scalar>& bias) {
  if (bias.numel() != a.cols() || bias.rows() != 1) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) +
                         " does not match last axis of " + shape_to_string(a.shape()));
  }
  Matrix<Scalar> out = a.value().rowwise() + bias.value().row(0);
  return detail::make_result(a.shape(), std::move(out), {&a, &bias},
                             [a, bias](const Matrix<Scalar>& g) {
                               detail::acc(a, g);
                               if (bias.requires_grad()) detail::acc(bias, Matrix<Scalar>(g.colwise().sum()));
                             });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  Matrix<Scalar> y = a.value().array().tanh().matrix();
  Matrix<Scalar> y_copy = y;
  return detail::make_result(a.shape(), std::move(y), {&a},
                             [a, y = std::move(y_copy)](const Matrix<Scalar>& g) {
                               detail::acc(a, Matrix<Scalar>(g.array() * (1 - y.array().square())));
                             });
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a) {
  // tanh approximation
  const Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
  const Scalar k = static_cast<Scalar>(0.044715);
  const auto& x = a.value();
  Matrix<Scalar> t = (c * (x.array() + k * x.array().cube())).tanh().matrix();
  Matrix<Scalar> y = (Scalar(0.5) * x.array() * (1 + t.array())).matrix();
  return detail::make_result(a.shape(), std::move(y), {&a},
                             [a, t = std::move(t), c, k](const Matrix<Scalar>& g) {
                               const auto& x = a.value();
                               auto dt = c * (1 + 3 * k * x.array().square());
                               auto d = Scalar(0.5) * (1 + t.array()) +
                                        Scalar(0.5) * x.array() * (1 - t.array().square()) * dt;
                               detail::acc(a, Matrix<Scalar>(g.array() * d));
                             });
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  if (!x.value().allFinite()) throw NumericError("softmax_rows: non-finite input");
  Matrix<Scalar> y = x.value().colwise() - x.value().rowwise().maxCoeff();
  y = y.array().exp().matrix();
  y = y.array().colwise() / y.rowwise().sum().array();
  Matrix<Scalar> y_copy = y;
  return detail::make_result(x.shape(), std::move(y), {&x},
                             [x, y = std::move(y_copy)](const Matrix<Scalar>& g) {
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot =
                                   g.cwiseProduct(y).rowwise().sum();
                               detail::acc(x, Matrix<Scalar>(y.array() * (g.colwise() - dot).array()));
                             });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps) {
  const auto d = x.cols();
  if (d < 1) throw DimensionError("layer_norm: empty last axis");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " elements");
  }
  using Col = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const auto& v = x.value();
  Col mu = v.rowwise().mean();
  Matrix<Scalar> centered = v.colwise() - mu;
  Col inv_std = ((centered.array().square().rowwise().sum() / Scalar(d)) + eps).rsqrt().matrix();
  Matrix<Scalar> xhat = centered.array().colwise() * inv_std.array();
  Matrix<Scalar> y = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                     bias.value().row(0).array();
  return detail::make_result(
      x.shape(), std::move(y), {&x, &gain, &bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix<Scalar>& g) {
        if (x.requires_grad()) {
          Matrix<Scalar> dxhat = g.array().rowwise() * gain.value().row(0).array();
          Col m1 = dxhat.rowwise().mean();
          Col m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          Matrix<Scalar> dx = ((dxhat.colwise() - m1).array() - xhat.array().colwise() * m2.array())
                                  .colwise() * inv_std.array();
          detail::acc(x, dx);
        }
        if (gain.requires_grad()) detail::acc(gain, Matrix<Scalar>(g.cwiseProduct(xhat).colwise().sum()));
        if (bias.requires_grad()) detail::acc(bias, Matrix<Scalar>(g.colwise().sum()));
      });
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const TokenId> targets) {
  detail::require_rank2(logits, "cross_entropy");
  const auto n = logits.rows();
  const auto vocab = logits.cols();
  if (static_cast<std::int64_t>(targets.size()) != n || n == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_to_string(logits.shape()) + " logits");
  }
  for (auto t : targets) {
    if (t < 0 || t >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  using Col = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const auto& z = logits.value();
  Col mx = z.rowwise().maxCoeff();
  Matrix<Scalar> p = (z.colwise() - mx).array().exp().matrix();
  Col denom = p.rowwise().sum();
  Scalar total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    total += mx(i) + std::log(denom(i)) - z(i, targets[i]);
  }
  p = p.array().colwise() / denom.array();
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  return detail::make_result(Shape{}, Matrix<Scalar>(Matrix<Scalar>::Constant(1, 1, total / Scalar(n))), {&logits},
                             [logits, p = std::move(p), tgt = std::move(tgt), n](const Matrix<Scalar>& g) {
                               Matrix<Scalar> d = p;
                               for (std::int64_t i = 0; i < n; ++i) d(i, tgt[i]) -= 1;
                               d *= g(0, 0) / Scalar(n);
                               detail::acc(logits, d);
                             });
}

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto& first = parts.front().shape();
  axis = detail::normalize_axis(axis, first.size(), "concat");
  const bool rows = axis == 0 && first.size() > 1;
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: shape " + shape_to_string(s) + " incompatible with " +
                           shape_to_string(first) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const auto out_rows = detail::leading_rows(out_shape);
  const auto out_cols = detail::last_dim(out_shape);
  Matrix<Scalar> out(out_rows, out_cols);
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    if (rows) {
      out.middleRows(off, p.rows()) = p.value();
      off += p.rows();
    } else {
      out.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
  }
  std::vector<Tensor<Scalar>> inputs(parts.begin(), parts.end());
  auto inputs_copy = inputs;
  return detail::make_result_n<Scalar>(
      std::move(out_shape), std::move(out), inputs,
      [inputs = std::move(inputs_copy), offsets = std::move(offsets), rows](const Matrix<Scalar>& g) {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          const auto& p = inputs[i];
          if (!p.requires_grad()) continue;
          if (rows) {
            detail::acc(p, Matrix<Scalar>(g.middleRows(offsets[i], p.rows())));
          } else {
            detail::acc(p, Matrix<Scalar>(g.middleCols(offsets[i], p.cols())));
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, int axis, std::int64_t begin, std::int64_t end) {
  axis = detail::normalize_axis(axis, a.rank(), "slice");
  const auto extent = a.shape()[axis];
  if (begin < 0 || end < begin || end > extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside axis of length " + std::to_string(extent));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const bool rows = axis == 0 && a.rank() > 1;
  Matrix<Scalar> out;
  std::int64_t first = 0;
  std::int64_t count = 0;
  if (rows) {
    const auto inner = extent == 0 ? 0 : a.rows() / extent;
    first = begin * inner;
    count = (end - begin) * inner;
    out = a.value().middleRows(first, count);
  } else {
    first = begin;
    count = end - begin;
    out = a.value().middleCols(first, count);
  }
  return detail::make_result(std::move(out_shape), std::move(out), {&a},
                             [a, rows, first, count](const Matrix<Scalar>& g) {
                               Matrix<Scalar> d = Matrix<Scalar>::Zero(a.rows(), a.cols());
                               if (rows) {
                                 d.middleRows(first, count) = g;
                               } else {
                                 d.middleCols(first, count) = g;
                               }
                               detail::acc(a, d);
                             });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  detail::require_rank2(a, "transpose");
  return detail::make_result(Shape{a.cols(), a.rows()}, Matrix<Scalar>(a.value().transpose()), {&a},
                             [a](const Matrix<Scalar>& g) { detail::acc(a, Matrix<Scalar>(g.transpose())); });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                         shape_to_string(shape));
  }
  Matrix<Scalar> out(detail::leading_rows(shape), detail::last_dim(shape));
  std::copy(a.value().data(), a.value().data() + a.numel(), out.data());
  return detail::make_result(std::move(shape), std::move(out), {&a}, [a](const Matrix<Scalar>& g) {
    Matrix<Scalar> d(a.rows(), a.cols());
    std::copy(g.data(), g.data() + g.size(), d.data());
    detail::acc(a, d);
  });
}

template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const TokenId> ids) {
  detail::require_rank2(table, "embedding_lookup");
  const auto vocab = table.rows();
  const auto n = static_cast<std::int64_t>(ids.size());
  Matrix<Scalar> out(n, table.cols());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto id = ids[i];
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    out.row(i) = table.value().row(id);
  }
  std::vector<TokenId> idv(ids.begin(), ids.end());
  return detail::make_result(Shape{n, table.cols()}, std::move(out), {&table},
                             [table, idv = std::move(idv)](const Matrix<Scalar>& g) {
                               Matrix<Scalar> d = Matrix<Scalar>::Zero(table.rows(), table.cols());
                               for (std::size_t i = 0; i < idv.size(); ++i) d.row(idv[i]) += g.row(i);
                               detail::acc(table, d);
                             });
}

template <typename Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& a) {
  return Tensor<Scalar>(a.shape(), a.value());
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  return detail::make_result(Shape{}, Matrix<Scalar>(Matrix<Scalar>::Constant(1, 1, a.value().sum())), {&a},
                             [a](const Matrix<Scalar>& g) {
                               detail::acc(a, Matrix<Scalar>(Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0))));
                             });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), Scalar(1) / Scalar(a.numel()));
}

template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                         const Tensor<Scalar>& v, int heads, bool causal) {
  detail::require_rank2(q, "attention");
  detail::require_rank2(k, "attention");
  detail::require_rank2(v, "attention");
  const auto n = q.rows();
  const auto m = k.rows();
  const auto width = q.cols();
  if (heads < 1 || width % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (k.cols() != width || v.cols() != width || v.rows() != m) {
    throw DimensionError("attention: q " + shape_to_string(q.shape()) + ", k " +
                         shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  if (causal && m < n) throw DimensionError("attention: causal mask needs at least as many keys as queries");
  const auto dh = width / heads;
  const Scalar sc = Scalar(1) / std::sqrt(Scalar(dh));
  Matrix<Scalar> out = Matrix<Scalar>::Zero(n, width);
  if (m == 0 || n == 0) {
    return detail::make_result(Shape{n, width}, std::move(out), {&q, &k, &v}, [](const Matrix<Scalar>&) {});
  }
  MacCounter::add(static_cast<std::uint64_t>(2 * n * m * width));
  std::vector<Matrix<Scalar>> probs(static_cast<std::size_t>(heads));
  const auto shift = m - n;
  for (int h = 0; h < heads; ++h) {
    auto qh = q.value().middleCols(h * dh, dh);
    auto kh = k.value().middleCols(h * dh, dh);
    auto vh = v.value().middleCols(h * dh, dh);
    Matrix<Scalar> s = (qh * kh.transpose()) * sc;
    if (causal) {
      for (std::int64_t i = 0; i < n; ++i) {
        const auto last = i + shift;
        if (last + 1 < m) s.row(i).tail(m - last - 1).setConstant(-std::numeric_limits<Scalar>::infinity());
      }
    }
    s = s.colwise() - s.rowwise().maxCoeff();
    s = s.array().exp().matrix();
    s = s.array().colwise() / s.rowwise().sum().array();
    out.middleCols(h * dh, dh).noalias() = s * vh;
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return detail::make_result(
      Shape{n, width}, std::move(out), {&q, &k, &v},
      [q, k, v, heads, dh, sc, probs = std::move(probs)](const Matrix<Scalar>& g) {
        Matrix<Scalar> dq = Matrix<Scalar>::Zero(q.rows(), q.cols());
        Matrix<Scalar> dk = Matrix<Scalar>::Zero(k.rows(), k.cols());
        Matrix<Scalar> dv = Matrix<Scalar>::Zero(v.rows(), v.cols());
        for (int h = 0; h < heads; ++h) {
          const auto& p = probs[static_cast<std::size_t>(h)];
          auto gh = g.middleCols(h * dh, dh);
          auto qh = q.value().middleCols(h * dh, dh);
          auto kh = k.value().middleCols(h * dh, dh);
          auto vh = v.value().middleCols(h * dh, dh);
          if (v.requires_grad()) dv.middleCols(h * dh, dh).noalias() = p.transpose() * gh;
          if (q.requires_grad() || k.requires_grad()) {
            Matrix<Scalar> dp = gh * vh.transpose();
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = dp.cwiseProduct(p).rowwise().sum();
            Matrix<Scalar> ds = (p.array() * (dp.colwise() - dot).array()).matrix() * sc;
            if (q.requires_grad()) dq.middleCols(h * dh, dh).noalias() = ds * kh;
            if (k.requires_grad()) dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh;
          }
        }
        if (q.requires_grad()) detail::acc(q, dq);
        if (k.requires_grad()) detail::acc(k, dk);
        if (v.requires_grad()) detail::acc(v, dv);
      });
}

}  // namespace lcirc
