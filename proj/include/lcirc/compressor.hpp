#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcirc/gca.hpp"

namespace lcirc {

/// Cross-attention from K latent queries to segment tokens, then a two-layer
/// MLP, each with a residual connection. Segment tokens carry no positional
/// information, so the block is invariant to permutations within a segment.
template <typename Scalar>
struct PerceiverBlock {
  LayerNorm<Scalar> ln_q;
  LayerNorm<Scalar> ln_x;
  Linear<Scalar> q, k, v, o;
  LayerNorm<Scalar> ln_mlp;
  Mlp<Scalar> mlp;
  int heads = 1;

  static PerceiverBlock make(const Rng& rng, const std::string& name, const ModelConfig& cfg) {
    const std::int64_t dc = cfg.d_compress;
    const std::int64_t d = cfg.d_model;
    const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
    const double s = 1.0 / std::sqrt(static_cast<double>(dc));
    return {LayerNorm<Scalar>::make(dc, cfg.ln_eps),
            LayerNorm<Scalar>::make(d, cfg.ln_eps),
            Linear<Scalar>::make(rng, name + ".ca.q", dc, dc, s),
            Linear<Scalar>::make(rng, name + ".ca.k", d, dc, s_in),
            Linear<Scalar>::make(rng, name + ".ca.v", d, dc, s_in),
            Linear<Scalar>::make(rng, name + ".ca.o", dc, dc, s),
            LayerNorm<Scalar>::make(dc, cfg.ln_eps),
            Mlp<Scalar>::make(rng, name + ".mlp", dc, dc * cfg.mlp_mult, s, s / std::sqrt(cfg.mlp_mult)),
            cfg.n_heads};
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& latents, const Tensor<Scalar>& x) const {
    const auto xn = ln_x(x);
    const auto a = attention(q(ln_q(latents)), k(xn), v(xn), heads, /*causal=*/false);
    const auto l1 = add(latents, o(a));
    return add(l1, mlp(ln_mlp(l1)));
  }

  void collect(ParamList<Scalar>& out, const std::string& name) const {
    ln_q.collect(out, name + ".ca.ln_q");
    ln_x.collect(out, name + ".ca.ln_x");
    q.collect(out, name + ".ca.q");
    k.collect(out, name + ".ca.k");
    v.collect(out, name + ".ca.v");
    o.collect(out, name + ".ca.o");
    ln_mlp.collect(out, name + ".ln_mlp");
    mlp.collect(out, name + ".mlp");
  }
};

/// Query-dependent conditioning: user-query embeddings plus the GCA block that
/// rewrites compressor queries before each recurrence step.
template <typename Scalar>
struct QueryContext {
  Tensor<Scalar> e_query;  // q x d, frozen base embeddings without positions
  const GcaBlock<Scalar>* block = nullptr;
};

/// h'' = GCA(h_prev as queries, e_query as keys/values).
template <typename Scalar>
Tensor<Scalar> qd_transform(const Tensor<Scalar>& h_prev, const QueryContext<Scalar>& qc) {
  if (qc.block == nullptr) throw ContractError("qd_transform: query context has no GCA block");
  if (qc.e_query.rows() == 0) {
    throw ContractError("qd_transform: empty query; use the query-independent path instead");
  }
  return (*qc.block)(h_prev, qc.e_query);
}

/// Boundaries n_0 = 0 < n_1 < ... < n_S = N.
struct Segmentation {
  std::vector<std::int64_t> bounds{0};

  std::size_t count() const { return bounds.size() - 1; }
  std::int64_t begin(std::size_t i) const { return bounds[i]; }
  std::int64_t end(std::size_t i) const { return bounds[i + 1]; }
  std::int64_t length(std::size_t i) const { return bounds[i + 1] - bounds[i]; }
  std::int64_t total() const { return bounds.back(); }

  /// Throws SegmentationError unless the segments exactly tile [0, total) with
  /// every length in [1, max_len] (max_len <= 0 disables the length check).
  void validate(std::int64_t total, std::int64_t max_len = 0) const;

  /// Fixed-length segments, last one ragged. Empty input gives S = 0.
  static Segmentation fixed(std::int64_t total, std::int64_t length);
};

/// Recurrent compression state: h^(i), the step index i, and h^(1..i).
template <typename Scalar>
struct CompressorState {
  Tensor<Scalar> current;              // h^(i); h^(0) before the first step
  std::vector<Tensor<Scalar>> blocks;  // h^(1) ... h^(i), each K x d_c
  std::vector<bool> grad_enabled;      // per block
  std::vector<Tensor<Scalar>> inputs;  // s_1 ... s_i, kept for recomputation

  std::size_t step() const { return blocks.size(); }

  /// [h^(1); ...; h^(i)], (i*K) x d_c. Zero rows at i = 0.
  Tensor<Scalar> concat(std::int64_t d_c) const {
    if (blocks.empty()) return Tensor<Scalar>::zeros({0, d_c});
    return lcirc::concat<Scalar>(blocks, 0);
  }
};

template <typename Scalar>
class Compressor {
 public:
  Compressor() = default;

  static Compressor init(const ModelConfig& cfg, const Rng& rng) {
    Compressor c;
    c.cfg_ = cfg;
    c.h0_ = init_normal<Scalar>(rng, "compressor.h0", {cfg.n_queries, cfg.d_compress}, 1.0);
    for (int i = 0; i < cfg.perceiver_depth; ++i) {
      c.blocks_.push_back(PerceiverBlock<Scalar>::make(rng, "compressor.blocks." + std::to_string(i), cfg));
    }
    return c;
  }

  const ModelConfig& config() const { return cfg_; }
  const Tensor<Scalar>& initial_queries() const { return h0_; }
  std::vector<PerceiverBlock<Scalar>>& blocks() { return blocks_; }
  const std::vector<PerceiverBlock<Scalar>>& blocks() const { return blocks_; }

  /// Stack of Perceiver blocks with queries `q` (K x d_c) over inputs `x` (n x d).
  Tensor<Scalar> perceiver(const Tensor<Scalar>& q, const Tensor<Scalar>& x) const {
    if (x.rows() == 0) throw ContractError("perceiver: empty segment");
    if (x.cols() != cfg_.d_model) {
      throw DimensionError("perceiver: segment width " + std::to_string(x.cols()) + " != d_model " +
                           std::to_string(cfg_.d_model));
    }
    if (q.rank() != 2 || q.cols() != cfg_.d_compress) {
      throw DimensionError("perceiver: query shape " + shape_to_string(q.shape()) + " has wrong width");
    }
    auto h = q;
    for (const auto& b : blocks_) h = b(h, x);
    return h;
  }

  CompressorState<Scalar> initial_state() const {
    CompressorState<Scalar> s;
    s.current = h0_;
    return s;
  }

  /// One recurrence step h^(i) = Perceiver(h^(i-1), s_i), or with the query
  /// transform applied to h^(i-1) first when `qd` is given. Returns a new state.
  CompressorState<Scalar> step(const CompressorState<Scalar>& state, const Tensor<Scalar>& segment,
                               const QueryContext<Scalar>* qd = nullptr) const {
    if (segment.rows() == 0) throw ContractError("compress_step: empty segment");
    CompressorState<Scalar> next = state;
    const auto queries = qd ? qd_transform(state.current, *qd) : state.current;
    next.current = perceiver(queries, segment);
    next.blocks.push_back(next.current);
    next.grad_enabled.push_back(grad_enabled() && next.current.requires_grad());
    next.inputs.push_back(segment);
    return next;
  }

  /// Runs `step` over every segment of `e_c` in order.
  CompressorState<Scalar> compress_all(const Tensor<Scalar>& e_c, const Segmentation& seg,
                                       const QueryContext<Scalar>* qd = nullptr) const {
    seg.validate(e_c.rows());
    auto state = initial_state();
    for (std::size_t i = 0; i < seg.count(); ++i) {
      state = step(state, slice(e_c, 0, seg.begin(i), seg.end(i)), qd);
    }
    return state;
  }

  /// Truncation point for BPTT: blocks older than the last `t` become constants
  /// (values reused verbatim), and the last `t` steps are recomputed from the
  /// detached h^(S-t) so gradient flows through at most `t` recurrence steps.
  CompressorState<Scalar> cache_blocks(const CompressorState<Scalar>& state, std::size_t t,
                                       const QueryContext<Scalar>* qd = nullptr) const {
    const std::size_t s = state.step();
    if (t > s) throw ContractError("cache_blocks: t exceeds the number of compressed segments");
    const std::size_t keep = s - t;
    CompressorState<Scalar> out;
    out.current = keep == 0 ? h0_ : detach(state.blocks[keep - 1]);
    for (std::size_t i = 0; i < keep; ++i) {
      out.blocks.push_back(detach(state.blocks[i]));
      out.grad_enabled.push_back(false);
      out.inputs.push_back(state.inputs[i]);
    }
    for (std::size_t i = keep; i < s; ++i) out = step(out, state.inputs[i], qd);
    return out;
  }

  /// Selective-state splice: for each chosen step j (1-based), recompute
  /// h^(j) = Perceiver(detach(h^(j-1)), s_j) with grad and substitute it into
  /// the block list only. The recurrence itself is left untouched, so later
  /// blocks and all forward values are unchanged.
  CompressorState<Scalar> splice_selected(const CompressorState<Scalar>& state,
                                          std::span<const std::size_t> selected,
                                          const QueryContext<Scalar>* qd = nullptr) const {
    CompressorState<Scalar> out = state;
    for (const auto j : selected) {
      if (j < 1 || j > state.step()) throw ContractError("splice_selected: step index out of range");
      const auto prev = j == 1 ? h0_ : detach(state.blocks[j - 2]);
      const auto queries = qd ? qd_transform(prev, *qd) : prev;
      out.blocks[j - 1] = perceiver(queries, state.inputs[j - 1]);
      out.grad_enabled[j - 1] = grad_enabled();
    }
    return out;
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    out.emplace_back("compressor.h0", h0_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "compressor.blocks." + std::to_string(i));
    return out;
  }

 private:
  ModelConfig cfg_;
  Tensor<Scalar> h0_;
  std::vector<PerceiverBlock<Scalar>> blocks_;
};

/// Rows of the frozen base embedding table for the out-of-window context.
template <typename Scalar>
Tensor<Scalar> embed_context(const BaseLM<Scalar>& base, std::span<const TokenId> context) {
  return base.embed(context);
}

}  // namespace lcirc
