#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lcirc/base_lm.hpp"

namespace lcirc {

/// Gated cross-attention block:
///   e1 = tanh(a) * CA(e, mem) + e
///   e2 = tanh(b) * MLP(e1) + e1
/// with a = b = 0 at construction, so a fresh block is the identity.
///
/// Queries come from `query_dim`-wide rows, keys/values from `memory_dim`-wide
/// rows projected to `query_dim`. Used both to inject compressed context into
/// the base LM (queries d, memory d_c) and to condition compressor queries on a
/// user query (queries d_c, memory d).
template <typename Scalar>
struct GcaBlock {
  std::int64_t query_dim = 0;
  std::int64_t memory_dim = 0;
  int heads = 1;
  LayerNorm<Scalar> ln_q;
  LayerNorm<Scalar> ln_mem;
  Linear<Scalar> q, k, v, o;
  LayerNorm<Scalar> ln_mlp;
  Mlp<Scalar> mlp;
  Tensor<Scalar> gate_attn;  // a
  Tensor<Scalar> gate_mlp;   // b

  static GcaBlock make(const Rng& rng, const std::string& name, std::int64_t query_dim,
                       std::int64_t memory_dim, int heads, int mlp_mult, double init_std, double ln_eps) {
    if (query_dim % heads != 0) {
      throw DimensionError("GCA block width " + std::to_string(query_dim) + " not divisible by " +
                           std::to_string(heads) + " heads");
    }
    GcaBlock b;
    b.query_dim = query_dim;
    b.memory_dim = memory_dim;
    b.heads = heads;
    b.ln_q = LayerNorm<Scalar>::make(query_dim, ln_eps);
    b.ln_mem = LayerNorm<Scalar>::make(memory_dim, ln_eps);
    b.q = Linear<Scalar>::make(rng, name + ".ca.q", query_dim, query_dim, init_std);
    b.k = Linear<Scalar>::make(rng, name + ".ca.k", memory_dim, query_dim, init_std);
    b.v = Linear<Scalar>::make(rng, name + ".ca.v", memory_dim, query_dim, init_std);
    b.o = Linear<Scalar>::make(rng, name + ".ca.o", query_dim, query_dim, init_std);
    b.ln_mlp = LayerNorm<Scalar>::make(query_dim, ln_eps);
    b.mlp = Mlp<Scalar>::make(rng, name + ".mlp", query_dim, query_dim * mlp_mult, init_std, init_std);
    b.gate_attn = init_constant<Scalar>({}, 0.0);
    b.gate_mlp = init_constant<Scalar>({}, 0.0);
    return b;
  }

  /// Cross-attention term CA(x, memory); zero rows when memory is empty.
  Tensor<Scalar> cross_attend(const Tensor<Scalar>& x, const Tensor<Scalar>& memory) const {
    if (memory.cols() != memory_dim) {
      throw DimensionError("GCA memory width " + std::to_string(memory.cols()) + " != " +
                           std::to_string(memory_dim));
    }
    if (memory.rows() == 0) return Tensor<Scalar>::zeros({x.rows(), query_dim});
    const auto m = ln_mem(memory);
    return o(attention(q(ln_q(x)), k(m), v(m), heads, /*causal=*/false));
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x, const Tensor<Scalar>& memory) const {
    if (x.rank() != 2 || x.cols() != query_dim) {
      throw DimensionError("GCA input " + shape_to_string(x.shape()) + " does not have width " +
                           std::to_string(query_dim));
    }
    if (x.rows() == 0) throw ContractError("GCA input must have at least one row");
    const auto alpha = tanh(gate_attn);
    const auto beta = tanh(gate_mlp);
    const auto x1 = add(scale_by(cross_attend(x, memory), alpha), x);
    return add(scale_by(mlp(ln_mlp(x1)), beta), x1);
  }

  Scalar alpha() const { return std::tanh(gate_attn.item()); }
  Scalar beta() const { return std::tanh(gate_mlp.item()); }

  void collect(ParamList<Scalar>& out, const std::string& name) const {
    ln_q.collect(out, name + ".ca.ln_q");
    ln_mem.collect(out, name + ".ca.ln_mem");
    q.collect(out, name + ".ca.q");
    k.collect(out, name + ".ca.k");
    v.collect(out, name + ".ca.v");
    o.collect(out, name + ".ca.o");
    ln_mlp.collect(out, name + ".ln_mlp");
    mlp.collect(out, name + ".mlp");
    out.emplace_back(name + ".gate_attn", gate_attn);
    out.emplace_back(name + ".gate_mlp", gate_mlp);
  }
};

/// GCA blocks placed before every `every`-th layer of the base model.
template <typename Scalar>
struct Injector {
  std::vector<GcaBlock<Scalar>> blocks;
  int every = 1;

  static Injector init(const ModelConfig& cfg, const Rng& rng) {
    Injector inj;
    inj.every = cfg.gca_every;
    for (int i = 0; i < cfg.n_gca_blocks(); ++i) {
      inj.blocks.push_back(GcaBlock<Scalar>::make(rng, "injector.blocks." + std::to_string(i),
                                                  cfg.d_model, cfg.d_compress, cfg.n_heads,
                                                  cfg.mlp_mult, cfg.init_std, cfg.ln_eps));
    }
    return inj;
  }

  const GcaBlock<Scalar>* block_for_layer(int layer) const {
    if (layer % every != 0) return nullptr;
    const auto idx = static_cast<std::size_t>(layer / every);
    return idx < blocks.size() ? &blocks[idx] : nullptr;
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, "injector.blocks." + std::to_string(i));
    return out;
  }
};

/// A base LM with GCA blocks attached in front of its layers.
///
/// Holds references; the base and injector must outlive it. `detach()` hands
/// back the untouched base model.
template <typename Scalar>
class InjectedLM {
 public:
  InjectedLM(const BaseLM<Scalar>& base, const Injector<Scalar>& injector)
      : base_(&base), injector_(&injector) {}

  /// Logits for `ids` with compressed context `h` ((S*K) x d_c, possibly empty).
  Tensor<Scalar> forward(std::span<const TokenId> ids, const Tensor<Scalar>& h) const {
    const LayerHook<Scalar> hook = [this, &h](int layer, const Tensor<Scalar>& x) {
      const auto* block = injector_->block_for_layer(layer);
      return block ? (*block)(x, h) : x;
    };
    return base_->forward(ids, &hook);
  }

  const BaseLM<Scalar>& detach() const { return *base_; }
  const Injector<Scalar>& injector() const { return *injector_; }

 private:
  const BaseLM<Scalar>* base_;
  const Injector<Scalar>* injector_;
};

/// Binds an injector to a base model. The block count must match the
/// configured placement (one per layer by default).
template <typename Scalar>
InjectedLM<Scalar> attach(const BaseLM<Scalar>& base, const Injector<Scalar>& injector) {
  const auto& cfg = base.config();
  const int every = injector.every;
  const int expected = (cfg.n_layers + every - 1) / every;
  if (static_cast<int>(injector.blocks.size()) != expected) {
    throw ConfigError("attach: " + std::to_string(injector.blocks.size()) + " GCA blocks for " +
                      std::to_string(cfg.n_layers) + " layers with placement every " +
                      std::to_string(every) + " (expected " + std::to_string(expected) + ")");
  }
  for (const auto& b : injector.blocks) {
    if (b.query_dim != cfg.d_model) throw ConfigError("attach: GCA query width does not match d_model");
  }
  return InjectedLM<Scalar>(base, injector);
}

}  // namespace lcirc
