#include <doctest.h>

#include "lcirc/inference.hpp"
#include "test_util.hpp"

using namespace lcirc;
using namespace lcirc::testing;

namespace {

LcircModel<double> model_for(const ModelConfig& cfg, std::uint64_t seed) {
  const auto base = BaseLM<double>::init(cfg, Rng(seed));
  auto model = LcircModel<double>::init(base, Rng(seed + 1));
  open_gates(model, 0.3);
  return model;
}

}  // namespace

TEST_CASE("regime dispatch on the boundary grid") {
  const std::int64_t m = 256;
  for (std::int64_t total : {m - 1, m, m + 1}) {
    for (std::int64_t p : {m - 1, m, m + 1}) {
      const auto n = total - p;
      if (n < 0) continue;
      const auto want = total <= m ? Regime::A : (p <= m ? Regime::B : Regime::C);
      CHECK(select_regime(n, p, m) == want);
    }
  }
  CHECK(select_regime(255, 1, 256) == Regime::A);
  CHECK(select_regime(256, 1, 256) == Regime::B);
  CHECK(select_regime(0, 257, 256) == Regime::C);
}

TEST_CASE("regime A is plain base decoding") {
  const auto cfg = tiny_config();
  const auto model = model_for(cfg, 1);
  Rng rng(2);
  const auto prompt = random_ids(rng, 10);
  const auto res = infer(model, prompt, 6);
  CHECK(res.regime == Regime::A);
  CHECK(res.tokens == greedy_decode(model.base(), prompt, 6));
  CHECK(res.evictions == 0);
  CHECK(res.state.step() == 0);
}

TEST_CASE("window occupancy stays within M and evictions match the oracle") {
  const auto cfg = tiny_config();
  const auto m = cfg.max_positions;
  const auto model = model_for(cfg, 3);
  Rng rng(4);
  for (std::int64_t n : {1, 5, 16, 40}) {
    for (std::int64_t p : {m / 2, m - 1, m, 2 * m}) {
      const auto prompt = random_ids(rng, n);
      std::int64_t steps = 0;
      std::int64_t max_occ = 0;
      InferOptions opt;
      opt.on_step = [&](const TraceEvent& e) {
        CHECK(e.step == steps);
        ++steps;
        max_occ = std::max(max_occ, e.window_occupancy);
        CHECK(e.window_occupancy <= m);
      };
      const auto res = infer(model, prompt, p, {}, opt);
      CHECK(steps == p);
      CHECK(static_cast<std::int64_t>(res.tokens.size()) == p);
      CHECK(max_occ <= m);
      CHECK(res.max_occupancy == max_occ);
      CHECK(res.evictions == expected_evictions(n, p, m));
    }
  }
  CHECK(expected_evictions(0, 32, 16) == 2);
  CHECK(expected_evictions(40, 8, 16) == 0);
  CHECK(expected_evictions(40, 16, 16) == 1);
}

TEST_CASE("long prompts are compressed in fixed segments") {
  const auto cfg = tiny_config();
  const auto model = model_for(cfg, 5);
  Rng rng(6);
  const auto prompt = random_ids(rng, 50);
  const auto res = infer(model, prompt, 2);
  CHECK(res.regime == Regime::B);
  // reserve = max(16 - 2, 8) = 14; 36 compressed tokens in segments of 4.
  CHECK(res.state.step() == 9);
}

TEST_CASE("rolling compression contract") {
  const auto cfg = tiny_config();
  const auto model = model_for(cfg, 7);
  Rng rng(8);
  auto window = random_ids(rng, 15);
  CHECK_THROWS_AS(rolling_compress(model, model.compressor().initial_state(), window, 4), ContractError);
  window = random_ids(rng, 16);
  const auto kept = std::vector<TokenId>(window.begin() + 8, window.end());
  const auto s = rolling_compress(model, model.compressor().initial_state(), window, 4);
  CHECK(window == kept);
  CHECK(s.step() == 2);
}

TEST_CASE("candidate-restricted choice") {
  Eigen::Matrix<double, 1, 5> row;
  row << 0.1, 3.0, 0.5, 0.5, -1.0;
  CHECK(detail::pick(row, {}) == 1);
  CHECK(detail::pick(row, {4, 3, 2}) == 2);
  CHECK(detail::pick(row, {4}) == 4);
}

TEST_CASE("invalid requests") {
  const auto cfg = tiny_config();
  const auto model = model_for(cfg, 9);
  const std::vector<TokenId> prompt{1, 2};
  CHECK_THROWS_AS(infer(model, prompt, 0), ContractError);
  CHECK_THROWS_AS(infer(model, std::vector<TokenId>{}, 3), ContractError);
}
