#pragma once

#include <string>
#include <vector>

#include "lcirc/checkpoint.hpp"
#include "lcirc/data.hpp"
#include "lcirc/training.hpp"

namespace lcirc {

inline std::vector<std::vector<TokenId>> document_ids(const std::vector<Document>& docs) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.ids);
  return out;
}

template <typename Scalar>
BaseLM<Scalar> load_base(const std::string& path) {
  const auto c = load_checkpoint(path);
  auto base = BaseLM<Scalar>::init(checkpoint_config(c), Rng(0));
  auto params = base.parameters();
  assign_parameters(c, params);
  return base;
}

/// Loads an LCIRC checkpoint, or a base-only checkpoint (fresh compressor and
/// injector from `seed`). A QD block is restored when the file has one.
template <typename Scalar>
LcircModel<Scalar> load_model(const std::string& path, std::uint64_t seed = 0) {
  const auto c = load_checkpoint(path);
  const auto cfg = checkpoint_config(c);
  auto base = BaseLM<Scalar>::init(cfg, Rng(0));
  auto model = LcircModel<Scalar>::init(base, Rng(seed).split("lcirc"));
  if (c.find("qd.block.ca.q.weight") != nullptr) model.enable_qd(Rng(seed).split("qd"));
  auto params = model.parameters();
  assign_parameters(c, params, {"compressor.", "injector.", "qd."});
  return model;
}

/// Random LM batches drawn from `docs`.
inline std::function<TrainBatch(Rng&)> lm_batches(const std::vector<std::vector<TokenId>>& docs,
                                                  const ModelConfig& cfg) {
  if (docs.empty()) throw ContractError("lm_batches: empty corpus");
  return [&docs, cfg](Rng& rng) {
    const auto i = rng.uniform_int(0, static_cast<std::int64_t>(docs.size()) - 1);
    return make_lm_batch(docs[static_cast<std::size_t>(i)], cfg, rng);
  };
}

/// Random QA batches drawn from `samples`; `with_query` attaches the query
/// for query-dependent compression.
inline std::function<TrainBatch(Rng&)> qa_batches(const std::vector<QASample>& samples, const ModelConfig& cfg,
                                                  bool with_query) {
  if (samples.empty()) throw ContractError("qa_batches: empty sample set");
  return [&samples, cfg, with_query](Rng& rng) {
    const auto& s = samples[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(samples.size()) - 1))];
    auto b = make_qa_batch(s.context, s.query, s.answer, cfg, rng);
    if (!with_query) b.query.clear();
    return b;
  };
}

}  // namespace lcirc
