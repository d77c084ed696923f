#pragma once

#include <vector>

#include "lcirc/model.hpp"

namespace lcirc::testing {

using T = Tensor<double>;
using M = Matrix<double>;

/// Small architecture for fast exact checks.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_positions = 16;
  c.mlp_mult = 2;
  c.d_compress = 8;
  c.n_queries = 2;
  c.perceiver_depth = 1;
  c.max_segment = 4;
  c.bptt_window = 2;
  c.n_select = 1;
  c.init_std = 0.3;
  c.batch_size = 1;
  c.validate();
  return c;
}

inline M random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale;
  return m;
}

inline std::vector<TokenId> random_ids(Rng& rng, std::int64_t n, std::int64_t vocab = 259) {
  std::vector<TokenId> ids(static_cast<std::size_t>(n));
  for (auto& t : ids) t = static_cast<TokenId>(rng.uniform_int(0, vocab - 1));
  return ids;
}

/// Sets every GCA gate (and the QD block's, if any) to `value`, so injected
/// paths are live in tests.
inline void open_gates(LcircModel<double>& model, double value = 0.7) {
  for (auto& b : model.injector().blocks) {
    b.gate_attn.mutable_value()(0, 0) = value;
    b.gate_mlp.mutable_value()(0, 0) = value;
  }
  if (model.has_qd()) {
    model.qd_block().gate_attn.mutable_value()(0, 0) = value;
    model.qd_block().gate_mlp.mutable_value()(0, 0) = value;
  }
}

/// Copies of every gradient in `params`, keyed by position.
inline std::vector<M> grads(const ParamList<double>& params) {
  std::vector<M> out;
  for (const auto& [name, t] : params) out.push_back(t.grad());
  return out;
}

inline void zero_grads(const ParamList<double>& params) {
  for (const auto& [name, t] : params) {
    auto copy = t;
    copy.zero_grad();
  }
}

}  // namespace lcirc::testing
