#include "lcirc/eval.hpp"

#include <algorithm>

namespace lcirc {

nlohmann::json EvalReport::to_json(bool with_samples) const {
  nlohmann::json j{{"task", task},     {"metric", metric}, {"value", value},
                   {"grid", grid},     {"values", values}, {"seed", seed},
                   {"config_hash", config_hash}};
  if (with_samples) j["per_sample"] = per_sample;
  return j;
}

BootstrapResult paired_bootstrap_ppl(const std::vector<double>& nll_a, const std::vector<double>& nll_b,
                                     std::int64_t tokens_per_doc, std::int64_t resamples, std::uint64_t seed) {
  if (nll_a.size() != nll_b.size() || nll_a.empty()) throw ContractError("paired_bootstrap: mismatched samples");
  const auto n = static_cast<std::int64_t>(nll_a.size());
  const double denom = static_cast<double>(n * tokens_per_doc);
  auto stat = [&](const std::vector<std::int64_t>& idx) {
    double a = 0.0, b = 0.0;
    for (auto i : idx) {
      a += nll_a[static_cast<std::size_t>(i)];
      b += nll_b[static_cast<std::size_t>(i)];
    }
    return std::exp((b - a) / denom) - 1.0;
  };
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  BootstrapResult res;
  res.mean = stat(idx);
  Rng rng = Rng(seed).split("paired-bootstrap");
  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(resamples));
  for (std::int64_t b = 0; b < resamples; ++b) {
    for (auto& i : idx) i = rng.uniform_int(0, n - 1);
    draws.push_back(stat(idx));
  }
  std::sort(draws.begin(), draws.end());
  auto q = [&](double f) {
    const auto k = static_cast<std::size_t>(std::clamp(f * static_cast<double>(draws.size() - 1), 0.0,
                                                       static_cast<double>(draws.size() - 1)));
    return draws[k];
  };
  res.lo = draws.empty() ? res.mean : q(0.025);
  res.hi = draws.empty() ? res.mean : q(0.975);
  return res;
}

std::vector<TokenId> needle_value_tokens() {
  std::vector<TokenId> out;
  for (int i = 0; i < kValueSymbols; ++i) out.push_back(kMotifBase + i);
  return out;
}

}  // namespace lcirc
