#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcirc/data.hpp"
#include "lcirc/inference.hpp"

namespace lcirc {

struct EvalReport {
  std::string task;
  std::string metric;  // ppl | exact-match
  double value = 0.0;  // headline value (first grid point for ppl)
  std::vector<std::int64_t> grid;
  std::vector<double> values;                   // one per grid point
  std::vector<std::vector<double>> per_sample;  // [grid][sample] summed NLL or 0/1
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  nlohmann::json to_json(bool with_samples = false) const;
};

struct BootstrapResult {
  double mean = 0.0;  // statistic on the full sample
  double lo = 0.0;    // 2.5% quantile
  double hi = 0.0;    // 97.5% quantile
};

/// Paired bootstrap over documents of ppl(b) / ppl(a) - 1, where a and b are
/// per-document summed NLLs over the same number of tokens.
BootstrapResult paired_bootstrap_ppl(const std::vector<double>& nll_a, const std::vector<double>& nll_b,
                                     std::int64_t tokens_per_doc, std::int64_t resamples, std::uint64_t seed);

/// Summed NLL of the final `target_len` tokens of the last `n` tokens of
/// `doc`. Context beyond the window M is compressed with fixed segments of
/// length R; the window itself is the last min(n, M) tokens.
template <typename Scalar>
double doc_target_nll(const LcircModel<Scalar>& model, std::span<const TokenId> doc, std::int64_t n,
                      std::int64_t target_len) {
  NoGradGuard no_grad;
  const auto m = model.base().window();
  if (target_len < 1 || target_len >= std::min(n, m)) throw ContractError("eval_ppl: target_len must lie in [1, min(N, M))");
  if (static_cast<std::int64_t>(doc.size()) < n) throw ContractError("eval_ppl: document shorter than N");
  const auto tokens = doc.last(static_cast<std::size_t>(n));
  const auto w = std::min(n, m);
  const auto cut = n - w;
  auto state = model.compressor().initial_state();
  if (cut > 0) {
    state = model.compressor().compress_all(model.base().embed(tokens.first(static_cast<std::size_t>(cut))),
                                            Segmentation::fixed(cut, model.config().max_segment));
  }
  const auto window = tokens.subspan(static_cast<std::size_t>(cut));
  const auto logits = model.logits(window.first(window.size() - 1), state.concat(model.config().d_compress));
  const auto rows = slice(logits, 0, w - 1 - target_len, w - 1);
  const auto targets = window.last(static_cast<std::size_t>(target_len));
  return static_cast<double>(cross_entropy(rows, targets).item()) * static_cast<double>(target_len);
}

template <typename Scalar>
EvalReport eval_ppl(const LcircModel<Scalar>& model, const std::vector<std::vector<TokenId>>& docs,
                    const std::vector<std::int64_t>& grid, std::int64_t target_len, std::uint64_t seed = 0) {
  if (docs.empty()) throw ContractError("eval_ppl: no documents");
  EvalReport r;
  r.task = "lm";
  r.metric = "ppl";
  r.grid = grid;
  r.seed = seed;
  r.config_hash = model.config().hash();
  for (auto n : grid) {
    std::vector<double> nll;
    nll.reserve(docs.size());
    double total = 0.0;
    for (const auto& d : docs) {
      nll.push_back(doc_target_nll(model, d, n, target_len));
      total += nll.back();
    }
    r.values.push_back(std::exp(total / (static_cast<double>(docs.size()) * static_cast<double>(target_len))));
    r.per_sample.push_back(std::move(nll));
  }
  r.value = r.values.empty() ? 0.0 : r.values.front();
  return r;
}

/// Exact match of greedy answers for each sample. With `use_query` the QD
/// path conditions compression on the sample's query. `candidates` restricts
/// the greedy choice (empty = whole vocabulary).
template <typename Scalar>
EvalReport eval_qa(const LcircModel<Scalar>& model, const std::vector<QASample>& samples, bool use_query,
                   const std::vector<TokenId>& candidates = {}, std::uint64_t seed = 0) {
  if (samples.empty()) throw ContractError("eval_qa: empty sample set");
  if (use_query && !model.has_qd()) throw ContractError("eval_qa: QD mode needs a model with a QD block");
  EvalReport r;
  r.task = use_query ? "needle-qa/qd" : "needle-qa/lcirc";
  r.metric = "exact-match";
  r.seed = seed;
  r.config_hash = model.config().hash();
  std::vector<double> hits;
  for (const auto& s : samples) {
    std::vector<TokenId> prompt = s.context;
    prompt.insert(prompt.end(), s.query.begin(), s.query.end());
    InferOptions opt;
    opt.candidates = candidates;
    const auto out = infer(model, prompt, static_cast<std::int64_t>(s.answer.size()),
                           use_query ? std::span<const TokenId>(s.query) : std::span<const TokenId>{}, opt);
    hits.push_back(out.tokens == s.answer ? 1.0 : 0.0);
  }
  double sum = 0.0;
  for (double h : hits) sum += h;
  r.grid = {static_cast<std::int64_t>(samples.front().context.size() + samples.front().query.size())};
  r.values = {sum / static_cast<double>(hits.size())};
  r.value = r.values.front();
  r.per_sample.push_back(std::move(hits));
  return r;
}

/// Exact match of the frozen base model reading only the last M - P prompt
/// tokens (the truncated-context baseline).
template <typename Scalar>
EvalReport eval_qa_truncated(const BaseLM<Scalar>& base, const std::vector<QASample>& samples,
                             const std::vector<TokenId>& candidates = {}) {
  if (samples.empty()) throw ContractError("eval_qa: empty sample set");
  NoGradGuard no_grad;
  EvalReport r;
  r.task = "needle-qa/truncated-base";
  r.metric = "exact-match";
  r.config_hash = base.config().hash();
  std::vector<double> hits;
  const auto m = base.window();
  for (const auto& s : samples) {
    std::vector<TokenId> window = s.context;
    window.insert(window.end(), s.query.begin(), s.query.end());
    const auto p = static_cast<std::int64_t>(s.answer.size());
    const auto keep = std::min<std::int64_t>(static_cast<std::int64_t>(window.size()), m - p);
    window.erase(window.begin(), window.end() - keep);
    std::vector<TokenId> out;
    for (std::int64_t t = 0; t < p; ++t) {
      const auto logits = base.forward(window);
      const auto next = detail::pick(logits.value().row(logits.rows() - 1), candidates);
      out.push_back(next);
      window.push_back(next);
    }
    hits.push_back(out == s.answer ? 1.0 : 0.0);
  }
  double sum = 0.0;
  for (double h : hits) sum += h;
  r.values = {sum / static_cast<double>(hits.size())};
  r.value = r.values.front();
  r.per_sample.push_back(std::move(hits));
  return r;
}

/// Candidate answer tokens for needle QA: the value alphabet.
std::vector<TokenId> needle_value_tokens();

}  // namespace lcirc
