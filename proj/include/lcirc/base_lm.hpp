#pragma once

#include <functional>
#include <span>
#include <vector>

#include "lcirc/config.hpp"
#include "lcirc/layers.hpp"

namespace lcirc {

/// Called with (layer index, hidden states) before each transformer block;
/// returns the states that block should consume.
template <typename Scalar>
using LayerHook = std::function<Tensor<Scalar>(int, const Tensor<Scalar>&)>;

template <typename Scalar>
struct TransformerBlock {
  LayerNorm<Scalar> ln1;
  Linear<Scalar> q, k, v, o;
  LayerNorm<Scalar> ln2;
  Mlp<Scalar> mlp;
  int heads = 1;

  static TransformerBlock make(const Rng& rng, const std::string& name, const ModelConfig& cfg) {
    const std::int64_t d = cfg.d_model;
    const double s = cfg.init_std;
    const double s_out = cfg.init_std / std::sqrt(2.0 * cfg.n_layers);
    return {LayerNorm<Scalar>::make(d, cfg.ln_eps),
            Linear<Scalar>::make(rng, name + ".attn.q", d, d, s),
            Linear<Scalar>::make(rng, name + ".attn.k", d, d, s),
            Linear<Scalar>::make(rng, name + ".attn.v", d, d, s),
            Linear<Scalar>::make(rng, name + ".attn.o", d, d, s_out),
            LayerNorm<Scalar>::make(d, cfg.ln_eps),
            Mlp<Scalar>::make(rng, name + ".mlp", d, d * cfg.mlp_mult, s, s_out),
            cfg.n_heads};
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    const auto h = ln1(x);
    const auto a = attention(q(h), k(h), v(h), heads, /*causal=*/true);
    const auto x1 = add(x, o(a));
    return add(x1, mlp(ln2(x1)));
  }

  void collect(ParamList<Scalar>& out, const std::string& name) const {
    ln1.collect(out, name + ".ln1");
    q.collect(out, name + ".attn.q");
    k.collect(out, name + ".attn.k");
    v.collect(out, name + ".attn.v");
    o.collect(out, name + ".attn.o");
    ln2.collect(out, name + ".ln2");
    mlp.collect(out, name + ".mlp");
  }
};

/// Pre-norm decoder-only transformer with a learned absolute position table of
/// exactly M rows. Inputs longer than M are rejected, never truncated.
template <typename Scalar>
class BaseLM {
 public:
  BaseLM() = default;

  static BaseLM init(const ModelConfig& cfg, const Rng& rng) {
    cfg.validate();
    BaseLM lm;
    lm.cfg_ = cfg;
    lm.tok_emb_ = init_normal<Scalar>(rng, "base.tok_emb", {cfg.vocab_size, cfg.d_model}, cfg.init_std);
    lm.pos_emb_ = init_normal<Scalar>(rng, "base.pos_emb", {cfg.max_positions, cfg.d_model}, cfg.init_std);
    for (int l = 0; l < cfg.n_layers; ++l) {
      lm.blocks_.push_back(
          TransformerBlock<Scalar>::make(rng, "base.layers." + std::to_string(l), cfg));
    }
    lm.ln_f_ = LayerNorm<Scalar>::make(cfg.d_model, cfg.ln_eps);
    lm.head_ = Linear<Scalar>::make(rng, "base.head", cfg.d_model, cfg.vocab_size, cfg.init_std);
    return lm;
  }

  const ModelConfig& config() const { return cfg_; }
  std::int64_t window() const { return cfg_.max_positions; }
  const Tensor<Scalar>& token_embedding() const { return tok_emb_; }
  const Tensor<Scalar>& position_embedding() const { return pos_emb_; }

  /// Causal next-token logits, n x V. `hook` runs before every block.
  Tensor<Scalar> forward(std::span<const TokenId> ids, const LayerHook<Scalar>* hook = nullptr) const {
    const auto n = static_cast<std::int64_t>(ids.size());
    if (n > window()) throw WindowExceededError(ids.size(), static_cast<std::size_t>(window()));
    if (n == 0) throw ContractError("lm_forward: empty input");
    auto x = add(embedding_lookup(tok_emb_, ids), slice(pos_emb_, 0, 0, n));
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      if (hook) x = (*hook)(static_cast<int>(l), x);
      x = blocks_[l](x);
    }
    return head_(ln_f_(x));
  }

  /// Token embeddings only (no positions), as used for compressor inputs.
  Tensor<Scalar> embed(std::span<const TokenId> ids) const { return embedding_lookup(tok_emb_, ids); }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    out.emplace_back("base.tok_emb", tok_emb_);
    out.emplace_back("base.pos_emb", pos_emb_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      blocks_[l].collect(out, "base.layers." + std::to_string(l));
    }
    ln_f_.collect(out, "base.ln_f");
    head_.collect(out, "base.head");
    return out;
  }

  void set_trainable(bool on) {
    auto params = parameters();
    set_requires_grad(params, on);
  }

 private:
  ModelConfig cfg_;
  Tensor<Scalar> tok_emb_;
  Tensor<Scalar> pos_emb_;
  std::vector<TransformerBlock<Scalar>> blocks_;
  LayerNorm<Scalar> ln_f_;
  Linear<Scalar> head_;
};

/// Argmax with ties broken toward the lowest id.
template <typename Scalar>
TokenId argmax_row(const Matrix<Scalar>& logits, Eigen::Index row) {
  TokenId best = 0;
  Scalar best_v = logits(row, 0);
  for (Eigen::Index j = 1; j < logits.cols(); ++j) {
    if (logits(row, j) > best_v) {
      best_v = logits(row, j);
      best = static_cast<TokenId>(j);
    }
  }
  return best;
}

/// Greedy continuation of `prompt` by the plain base model. The whole sequence
/// must fit in the window; longer generations go through the inference module.
template <typename Scalar>
std::vector<TokenId> greedy_decode(const BaseLM<Scalar>& lm, std::span<const TokenId> prompt,
                                   std::int64_t max_new) {
  NoGradGuard no_grad;
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  for (std::int64_t t = 0; t < max_new; ++t) {
    const auto logits = lm.forward(seq);
    const TokenId next = argmax_row(logits.value(), logits.rows() - 1);
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

}  // namespace lcirc
