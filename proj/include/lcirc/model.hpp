#pragma once

#include <optional>
#include <span>
#include <string>

#include "lcirc/compressor.hpp"

namespace lcirc {

/// Frozen base LM + recurrent compressor + GCA injector, and optionally the
/// query-conditioning block of the query-dependent variant.
template <typename Scalar>
class LcircModel {
 public:
  LcircModel() = default;

  /// Wraps `base` (sharing its parameters) and freezes it.
  static LcircModel init(const BaseLM<Scalar>& base, const Rng& rng) {
    LcircModel m;
    m.base_ = base;
    m.base_.set_trainable(false);
    m.compressor_ = Compressor<Scalar>::init(base.config(), rng);
    m.injector_ = Injector<Scalar>::init(base.config(), rng);
    return m;
  }

  /// Adds the query-conditioning GCA block (queries d_c wide, keys/values d wide).
  void enable_qd(const Rng& rng) {
    const auto& c = config();
    qd_ = GcaBlock<Scalar>::make(rng, "qd.block", c.d_compress, c.d_model, c.n_heads, c.mlp_mult,
                                 c.init_std, c.ln_eps);
  }
  bool has_qd() const { return qd_.has_value(); }

  const ModelConfig& config() const { return base_.config(); }
  const BaseLM<Scalar>& base() const { return base_; }
  const Compressor<Scalar>& compressor() const { return compressor_; }
  const Injector<Scalar>& injector() const { return injector_; }
  Injector<Scalar>& injector() { return injector_; }
  const GcaBlock<Scalar>& qd_block() const {
    if (!qd_) throw ContractError("model has no query-dependent block");
    return *qd_;
  }
  GcaBlock<Scalar>& qd_block() {
    if (!qd_) throw ContractError("model has no query-dependent block");
    return *qd_;
  }

  /// Query context for `query` ids; empty optional when QD is disabled or the
  /// query is empty, which selects the query-independent path.
  std::optional<QueryContext<Scalar>> query_context(std::span<const TokenId> query) const {
    if (!qd_ || query.empty()) return std::nullopt;
    return QueryContext<Scalar>{base_.embed(query), &*qd_};
  }

  /// Logits of the injected model for window `ids` given compressed blocks.
  Tensor<Scalar> logits(std::span<const TokenId> ids, const Tensor<Scalar>& h) const {
    return attach(base_, injector_).forward(ids, h);
  }

  /// Parameters that training updates. The base model never appears here.
  ParamList<Scalar> trainable_parameters() const {
    auto out = compressor_.parameters();
    auto inj = injector_.parameters();
    out.insert(out.end(), inj.begin(), inj.end());
    if (qd_) qd_->collect(out, "qd.block");
    return out;
  }

  /// Every parameter including the frozen base, in checkpoint order.
  ParamList<Scalar> parameters() const {
    auto out = base_.parameters();
    auto rest = trainable_parameters();
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
  }

 private:
  BaseLM<Scalar> base_;
  Compressor<Scalar> compressor_;
  Injector<Scalar> injector_;
  std::optional<GcaBlock<Scalar>> qd_;
};

}  // namespace lcirc
