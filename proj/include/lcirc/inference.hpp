#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "lcirc/model.hpp"

namespace lcirc {

enum class Regime : char { A = 'A', B = 'B', C = 'C' };

/// A: N + P <= M. B: N + P > M and P <= M. C: P > M.
Regime select_regime(std::int64_t n, std::int64_t p, std::int64_t m);

struct TraceEvent {
  std::int64_t step = 0;  // index of the generated token
  Regime regime = Regime::A;
  std::int64_t window_occupancy = 0;  // tokens fed to the LM for this step
  std::int64_t h_blocks = 0;          // compressed blocks S
  std::int64_t evictions = 0;         // rolling compressions so far
  std::uint64_t macs = 0;             // MACs spent producing this token
};

nlohmann::json to_json(const TraceEvent& e);

struct InferOptions {
  std::int64_t segment = 0;  // R_eval; 0 uses the configured max_segment
  /// Restrict greedy choice to these token ids (empty = whole vocabulary).
  std::vector<TokenId> candidates;
  std::function<void(const TraceEvent&)> on_step;
};

template <typename Scalar>
struct InferResult {
  std::vector<TokenId> tokens;
  Regime regime = Regime::A;
  std::int64_t evictions = 0;
  std::int64_t max_occupancy = 0;
  CompressorState<Scalar> state;
};

namespace detail {

inline TokenId pick(const auto& logits_row, const std::vector<TokenId>& candidates) {
  if (candidates.empty()) {
    TokenId best = 0;
    for (Eigen::Index j = 1; j < logits_row.size(); ++j) {
      if (logits_row(j) > logits_row(best)) best = static_cast<TokenId>(j);
    }
    return best;
  }
  TokenId best = candidates.front();
  for (auto c : candidates) {
    if (logits_row(c) > logits_row(best) || (logits_row(c) == logits_row(best) && c < best)) best = c;
  }
  return best;
}

template <typename Scalar>
CompressorState<Scalar> compress_tokens(const LcircModel<Scalar>& model, CompressorState<Scalar> state,
                                        std::span<const TokenId> ids, std::int64_t segment,
                                        const QueryContext<Scalar>* qd) {
  if (ids.empty()) return state;
  const auto e = model.base().embed(ids);
  const auto seg = Segmentation::fixed(static_cast<std::int64_t>(ids.size()), segment);
  for (std::size_t i = 0; i < seg.count(); ++i) {
    state = model.compressor().step(state, slice(e, 0, seg.begin(i), seg.end(i)), qd);
  }
  return state;
}

}  // namespace detail

/// Compresses the oldest M/2 tokens of a full window (length exactly M) and
/// evicts them. Returns the grown state; `window` keeps its newest M/2 tokens.
template <typename Scalar>
CompressorState<Scalar> rolling_compress(const LcircModel<Scalar>& model, const CompressorState<Scalar>& state,
                                         std::vector<TokenId>& window, std::int64_t segment,
                                         const QueryContext<Scalar>* qd = nullptr) {
  const auto m = model.base().window();
  if (static_cast<std::int64_t>(window.size()) != m) {
    throw ContractError("rolling_compress: window holds " + std::to_string(window.size()) + " tokens, expected M=" +
                        std::to_string(m));
  }
  const auto half = m / 2;
  NoGradGuard no_grad;
  auto next = detail::compress_tokens(model, state, std::span<const TokenId>(window.data(), static_cast<std::size_t>(half)),
                                      segment, qd);
  window.erase(window.begin(), window.begin() + half);
  return next;
}

/// Greedy generation of `p` tokens after `prompt` under the three regimes.
/// Regime A is plain base-model decoding. B compresses everything except the
/// last max(M - P, M/2) prompt tokens; B and C roll the window when it fills.
template <typename Scalar>
InferResult<Scalar> infer(const LcircModel<Scalar>& model, std::span<const TokenId> prompt, std::int64_t p,
                          std::span<const TokenId> query = {}, const InferOptions& opt = {}) {
  if (p <= 0) throw ContractError("infer: max_new must be positive");
  if (prompt.empty()) throw ContractError("infer: empty prompt");
  NoGradGuard no_grad;
  const auto m = model.base().window();
  const auto n = static_cast<std::int64_t>(prompt.size());
  const auto segment = opt.segment > 0 ? opt.segment : model.config().max_segment;
  InferResult<Scalar> res;
  res.regime = select_regime(n, p, m);
  res.state = model.compressor().initial_state();
  const auto qc = model.query_context(query);
  const QueryContext<Scalar>* qd = qc ? &*qc : nullptr;

  std::vector<TokenId> window;
  if (res.regime == Regime::A) {
    window.assign(prompt.begin(), prompt.end());
  } else {
    const auto reserve = std::max(m - p, m / 2);
    const auto cut = std::max<std::int64_t>(0, n - reserve);
    res.state = detail::compress_tokens(model, res.state, prompt.first(static_cast<std::size_t>(cut)), segment, qd);
    window.assign(prompt.begin() + cut, prompt.end());
  }
  for (std::int64_t t = 0; t < p; ++t) {
    if (res.regime != Regime::A && static_cast<std::int64_t>(window.size()) >= m) {
      res.state = rolling_compress(model, res.state, window, segment, qd);
      ++res.evictions;
    }
    const auto before = MacCounter::value();
    const auto occupancy = static_cast<std::int64_t>(window.size());
    if (occupancy > m) throw ContractError("infer: window occupancy exceeded M");
    const auto logits = res.regime == Regime::A ? model.base().forward(window)
                                                : model.logits(window, res.state.concat(model.config().d_compress));
    const TokenId next = detail::pick(logits.value().row(logits.rows() - 1), opt.candidates);
    res.tokens.push_back(next);
    window.push_back(next);
    res.max_occupancy = std::max(res.max_occupancy, occupancy);
    if (opt.on_step) {
      opt.on_step(TraceEvent{t, res.regime, occupancy, static_cast<std::int64_t>(res.state.step()), res.evictions,
                             MacCounter::value() - before});
    }
  }
  return res;
}

/// Eviction events a run will perform: ceil((W0 + P - M) / (M/2)) where W0 is
/// the live window after prompt compression, counting only overflow.
std::int64_t expected_evictions(std::int64_t n, std::int64_t p, std::int64_t m);

}  // namespace lcirc
