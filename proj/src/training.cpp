#include "lcirc/training.hpp"

#include <algorithm>

namespace lcirc {

Segmentation random_segmentation(std::int64_t n, std::int64_t r, Rng& rng) {
  if (n < 0) throw SegmentationError("negative context length");
  if (r < 2) throw SegmentationError("maximum segment length R must be at least 2");
  Segmentation s;
  std::int64_t pos = 0;
  while (pos < n) {
    pos = std::min(n, pos + rng.uniform_int(r / 2, r));
    s.bounds.push_back(pos);
  }
  return s;
}

Segmentation training_segmentation(std::int64_t n, const ModelConfig& cfg, Rng& rng) {
  if (cfg.segment_policy == "fixed") return Segmentation::fixed(n, cfg.max_segment);
  return random_segmentation(n, cfg.max_segment, rng);
}

BPTTPlan make_plan(const std::string& mode, std::size_t segments, std::size_t window, std::size_t n_select,
                   Rng& rng) {
  if (mode != "truncated" && mode != "selective") throw ConfigError("unknown BPTT mode '" + mode + "'");
  BPTTPlan plan;
  plan.mode = mode;
  plan.window = std::min(window, segments);
  if (mode == "truncated") return plan;
  const std::size_t early = segments - plan.window;
  if (n_select > early) {
    plan.warning = "n_select=" + std::to_string(n_select) + " exceeds the " + std::to_string(early) +
                   " steps before the BPTT window; clamped";
    n_select = early;
  }
  std::vector<std::size_t> pool(early);
  for (std::size_t i = 0; i < early; ++i) pool[i] = i + 1;
  for (std::size_t i = 0; i < n_select; ++i) {
    std::swap(pool[i], pool[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                      static_cast<std::int64_t>(early) - 1))]);
  }
  plan.selected.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_select));
  std::sort(plan.selected.begin(), plan.selected.end());
  return plan;
}

TrainBatch make_lm_batch(std::span<const TokenId> doc, const ModelConfig& cfg, Rng& rng) {
  const auto n = static_cast<std::int64_t>(doc.size());
  if (n < 2) throw ContractError("make_lm_batch: document needs at least two tokens");
  const std::int64_t r = cfg.max_segment;
  std::int64_t cur = cfg.segment_policy == "fixed" ? r : rng.uniform_int(r / 2, r);
  cur = std::min(cur, n);
  TrainBatch b;
  const auto k = n - cur;
  b.context.assign(doc.begin(), doc.begin() + k);
  b.segmentation = training_segmentation(k, cfg, rng);
  b.input.assign(doc.begin() + k, doc.end() - 1);
  b.targets.assign(doc.begin() + k + 1, doc.end());
  return b;
}

TrainBatch make_qa_batch(std::span<const TokenId> context, std::span<const TokenId> query,
                         std::span<const TokenId> answer, const ModelConfig& cfg, Rng& rng) {
  if (answer.empty()) throw ContractError("make_qa_batch: empty answer");
  std::vector<TokenId> prompt(context.begin(), context.end());
  prompt.insert(prompt.end(), query.begin(), query.end());
  const auto n = static_cast<std::int64_t>(prompt.size());
  // Same live window as inference with P = |answer|: the last M - P prompt
  // tokens are direct input, everything before is compressed.
  const auto p = static_cast<std::int64_t>(answer.size());
  const std::int64_t m = cfg.max_positions;
  if (p > m / 2) throw ContractError("make_qa_batch: answers longer than M/2 are not supported");
  const std::int64_t cur = std::min(m - p, n);
  TrainBatch b;
  const auto k = n - cur;
  b.context.assign(prompt.begin(), prompt.begin() + k);
  b.segmentation = training_segmentation(k, cfg, rng);
  b.input.assign(prompt.begin() + k, prompt.end());
  b.input.insert(b.input.end(), answer.begin(), answer.end() - 1);
  b.targets.assign(answer.begin(), answer.end());
  b.target_begin = cur - 1;
  b.query.assign(query.begin(), query.end());
  return b;
}

TrainOptions options_from_config(const ModelConfig& cfg) {
  TrainOptions o;
  o.steps = cfg.train_steps;
  o.batch = cfg.batch_size;
  o.lr = cfg.lr;
  o.warmup = cfg.warmup_steps;
  o.grad_clip = cfg.grad_clip;
  o.log_every = cfg.log_every;
  o.checkpoint_every = cfg.checkpoint_every;
  o.seed = cfg.seed;
  return o;
}

}  // namespace lcirc
