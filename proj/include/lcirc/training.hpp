#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcirc/checkpoint.hpp"
#include "lcirc/model.hpp"
#include "lcirc/optim.hpp"

namespace lcirc {

/// Segment lengths uniform in [R/2, R], last one ragged.
Segmentation random_segmentation(std::int64_t n, std::int64_t r, Rng& rng);

/// Segmentation of `n` tokens under the configured policy.
Segmentation training_segmentation(std::int64_t n, const ModelConfig& cfg, Rng& rng);

struct BPTTPlan {
  std::string mode = "truncated";     // truncated | selective
  std::size_t window = 0;             // T
  std::vector<std::size_t> selected;  // 1-based steps in [1, S - T], sorted
  std::string warning;                // set when n_select was clamped
};

/// Draws `n_select` distinct early steps for selective mode; clamps to S - T.
BPTTPlan make_plan(const std::string& mode, std::size_t segments, std::size_t window, std::size_t n_select,
                   Rng& rng);

/// One optimization example: the context before the current segment enters
/// only through compression, the current segment is direct LM input.
struct TrainBatch {
  std::vector<TokenId> context;   // x_{1:k-1}
  Segmentation segmentation;      // over `context`
  std::vector<TokenId> input;     // LM input, |input| <= M
  std::vector<TokenId> targets;   // next tokens for input positions [target_begin, |input|)
  std::int64_t target_begin = 0;
  std::vector<TokenId> query;     // x_query, QD mode only
};

/// LM batch whose current segment ends at the end of `doc`.
TrainBatch make_lm_batch(std::span<const TokenId> doc, const ModelConfig& cfg, Rng& rng);

/// QA batch: context and query form the prompt, the answer is the target.
/// The live window is the last M - |answer| prompt tokens, as in inference;
/// earlier prompt tokens are compressed. Requires |answer| <= M/2.
TrainBatch make_qa_batch(std::span<const TokenId> context, std::span<const TokenId> query,
                         std::span<const TokenId> answer, const ModelConfig& cfg, Rng& rng);

/// Compresses the batch context under a BPTT plan: steps older than the last
/// T run without recording, the last T record, and selected early steps are
/// recomputed from detached inputs and spliced into h.
template <typename Scalar>
CompressorState<Scalar> compress_for_training(const LcircModel<Scalar>& model, const TrainBatch& batch,
                                              const BPTTPlan& plan) {
  const auto& comp = model.compressor();
  const auto qc = model.query_context(batch.query);
  const QueryContext<Scalar>* qd = qc ? &*qc : nullptr;
  const auto& seg = batch.segmentation;
  seg.validate(static_cast<std::int64_t>(batch.context.size()));
  const std::size_t s = seg.count();
  const std::size_t t = std::min(plan.window, s);
  const auto e = model.base().embed(batch.context);
  auto state = comp.initial_state();
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i + t < s; ++i) state = comp.step(state, slice(e, 0, seg.begin(i), seg.end(i)), qd);
  }
  for (std::size_t i = s - t; i < s; ++i) state = comp.step(state, slice(e, 0, seg.begin(i), seg.end(i)), qd);
  if (plan.mode == "selective" && !plan.selected.empty()) state = comp.splice_selected(state, plan.selected, qd);
  return state;
}

template <typename Scalar>
Tensor<Scalar> batch_loss(const LcircModel<Scalar>& model, const TrainBatch& batch, const Tensor<Scalar>& h) {
  const auto logits = model.logits(batch.input, h);
  const auto n = static_cast<std::int64_t>(batch.input.size());
  const auto tail = batch.target_begin == 0 ? logits : slice(logits, 0, batch.target_begin, n);
  return cross_entropy(tail, batch.targets);
}

/// Mean next-token NLL over the target span given the plan's compression.
template <typename Scalar>
Tensor<Scalar> nll_loss(const LcircModel<Scalar>& model, const TrainBatch& batch, const BPTTPlan& plan) {
  const auto state = compress_for_training(model, batch, plan);
  return batch_loss(model, batch, state.concat(model.config().d_compress));
}

/// Loss and gradients with gradient restricted to the last T steps.
template <typename Scalar>
double backward_truncated(const LcircModel<Scalar>& model, const TrainBatch& batch, std::size_t t) {
  const auto loss = nll_loss(model, batch, BPTTPlan{"truncated", t, {}, {}});
  loss.backward();
  return static_cast<double>(loss.item());
}

/// Truncated window plus `n_select` early steps reached through h directly.
template <typename Scalar>
double backward_selective(const LcircModel<Scalar>& model, const TrainBatch& batch, std::size_t t,
                          std::size_t n_select, Rng& rng) {
  const auto plan = make_plan("selective", batch.segmentation.count(), t, n_select, rng);
  const auto loss = nll_loss(model, batch, plan);
  loss.backward();
  return static_cast<double>(loss.item());
}

/// Gradient of the loss with every recurrence step recorded.
template <typename Scalar>
double backward_full(const LcircModel<Scalar>& model, const TrainBatch& batch) {
  const auto state = model.compressor().compress_all(model.base().embed(batch.context), batch.segmentation,
                                                     nullptr);
  const auto loss = batch_loss(model, batch, state.concat(model.config().d_compress));
  loss.backward();
  return static_cast<double>(loss.item());
}

struct TrainOptions {
  std::int64_t steps = 1000;
  std::int64_t batch = 1;  // examples averaged per step
  double lr = 1e-3;
  std::int64_t warmup = 100;
  double grad_clip = 1.0;
  std::int64_t log_every = 50;
  std::int64_t checkpoint_every = 0;
  std::string metrics_path;     // JSON lines, one record per step; empty disables
  std::string checkpoint_path;  // periodic and final checkpoint; empty disables
  std::uint64_t seed = 0;
  double time_limit_s = 0.0;    // stop early after this many seconds (0 = none)
  std::function<void(const std::string&)> log;  // progress lines
};

TrainOptions options_from_config(const ModelConfig& cfg);

struct TrainResult {
  std::vector<double> losses;
  std::int64_t steps = 0;
  double seconds = 0.0;
};

/// Linear warmup to `lr`, then constant.
inline double lr_at(const TrainOptions& o, std::int64_t step) {
  if (o.warmup <= 0) return o.lr;
  return o.lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(o.warmup));
}

/// Generic Adam loop. `step_loss(step, rng)` builds the graph for one step,
/// calls backward on it and returns the loss value. NaN/inf losses abort with
/// NumericError naming the step seed.
template <typename Scalar>
TrainResult run_training(ParamList<Scalar> params, const std::function<double(std::int64_t, Rng&)>& step_loss,
                         const TrainOptions& opt, const std::function<void()>& save = {}) {
  Adam<Scalar> adam(params, AdamConfig{opt.lr});
  std::ofstream metrics;
  if (!opt.metrics_path.empty()) {
    metrics.open(opt.metrics_path, std::ios::app);
    if (!metrics) throw FormatError("cannot open metrics log " + opt.metrics_path);
  }
  const Rng root(opt.seed);
  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  double ema = 0.0;
  for (std::int64_t step = 0; step < opt.steps; ++step) {
    const double lr = lr_at(opt, step);
    adam.set_lr(lr);
    adam.zero_grad();
    Rng rng = root.split(static_cast<std::uint64_t>(step));
    const double loss = step_loss(step, rng);
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (batch seed " +
                         std::to_string(opt.seed) + "/" + std::to_string(step) + ")");
    }
    const double gnorm = adam.grad_norm();
    if (!std::isfinite(gnorm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    if (opt.grad_clip > 0) adam.clip_grad_norm(opt.grad_clip);
    adam.step();
    res.losses.push_back(loss);
    ema = step == 0 ? loss : 0.98 * ema + 0.02 * loss;
    if (metrics.is_open()) {
      metrics << nlohmann::json{{"step", step}, {"loss", loss}, {"lr", lr}, {"grad_norm", gnorm}, {"seed", opt.seed}}.dump()
              << '\n';
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opt.log && opt.log_every > 0 && (step % opt.log_every == 0 || step + 1 == opt.steps)) {
      opt.log("step " + std::to_string(step) + " loss " + std::to_string(loss) + " ema " + std::to_string(ema) +
              " lr " + std::to_string(lr) + " |g| " + std::to_string(gnorm) + " t " + std::to_string(elapsed) + "s");
    }
    if (save && opt.checkpoint_every > 0 && (step + 1) % opt.checkpoint_every == 0) save();
    res.steps = step + 1;
    if (opt.time_limit_s > 0 && elapsed > opt.time_limit_s) {
      if (opt.log) opt.log("time limit reached after " + std::to_string(step + 1) + " steps");
      break;
    }
  }
  adam.zero_grad();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (save) save();
  return res;
}

/// Base-model pretraining on random crops of at most M tokens.
template <typename Scalar>
TrainResult pretrain_base(BaseLM<Scalar>& base, std::span<const std::vector<TokenId>> corpus, const TrainOptions& opt) {
  if (corpus.empty()) throw ContractError("pretrain_base: empty corpus");
  const auto m = base.window();
  auto params = base.parameters();
  set_requires_grad(params, true);
  auto save = [&] {
    if (!opt.checkpoint_path.empty()) save_checkpoint(opt.checkpoint_path, base.config(), base.parameters());
  };
  return run_training<Scalar>(
      params,
      [&](std::int64_t, Rng& rng) {
        const auto b = std::max<std::int64_t>(1, opt.batch);
        double total = 0.0;
        for (std::int64_t i = 0; i < b; ++i) {
          const auto& doc =
              corpus[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(corpus.size()) - 1))];
          const auto len = std::min<std::int64_t>(m + 1, static_cast<std::int64_t>(doc.size()));
          if (len < 2) throw ContractError("pretrain_base: documents need at least two tokens");
          const auto start = rng.uniform_int(0, static_cast<std::int64_t>(doc.size()) - len);
          std::span<const TokenId> in(doc.data() + start, static_cast<std::size_t>(len - 1));
          std::span<const TokenId> tg(doc.data() + start + 1, static_cast<std::size_t>(len - 1));
          const auto loss = cross_entropy(base.forward(in), tg);
          scale(loss, static_cast<Scalar>(1.0 / static_cast<double>(b))).backward();
          total += static_cast<double>(loss.item());
        }
        return total / static_cast<double>(b);
      },
      opt, save);
}

/// Trains compressor, injector and (when enabled) the QD block. The base
/// model is never handed to the optimizer.
template <typename Scalar>
TrainResult train(LcircModel<Scalar>& model, const std::function<TrainBatch(Rng&)>& next_batch,
                  const TrainOptions& opt) {
  const auto& cfg = model.config();
  auto save = [&] {
    if (!opt.checkpoint_path.empty()) save_checkpoint(opt.checkpoint_path, cfg, model.parameters());
  };
  bool warned = false;
  return run_training<Scalar>(
      model.trainable_parameters(),
      [&](std::int64_t, Rng& rng) {
        const auto b = std::max<std::int64_t>(1, opt.batch);
        double total = 0.0;
        for (std::int64_t i = 0; i < b; ++i) {
          Rng ex = rng.split(static_cast<std::uint64_t>(i));
          const auto batch = next_batch(ex);
          Rng plan_rng = ex.split("bptt-plan");
          const auto plan = make_plan(cfg.bptt_mode, batch.segmentation.count(),
                                      static_cast<std::size_t>(cfg.bptt_window),
                                      static_cast<std::size_t>(cfg.n_select), plan_rng);
          if (!plan.warning.empty() && !warned && opt.log) {
            opt.log("warning: " + plan.warning);
            warned = true;
          }
          const auto loss = nll_loss(model, batch, plan);
          scale(loss, static_cast<Scalar>(1.0 / static_cast<double>(b))).backward();
          total += static_cast<double>(loss.item());
        }
        return total / static_cast<double>(b);
      },
      opt, save);
}

}  // namespace lcirc
