#include <doctest.h>

#include <algorithm>

#include "lcirc/grad_check.hpp"
#include "lcirc/training.hpp"
#include "test_util.hpp"

using namespace lcirc;
using namespace lcirc::testing;

namespace {

T segment_input(Rng& rng, std::int64_t n, std::int64_t d) { return T({n, d}, random_matrix(rng, n, d)); }

}  // namespace

TEST_CASE("segmentation validation") {
  Segmentation s;
  s.bounds = {0, 3, 5, 9};
  CHECK_NOTHROW(s.validate(9, 4));
  CHECK_THROWS_AS(s.validate(10), SegmentationError);
  CHECK_THROWS_AS(s.validate(9, 3), SegmentationError);
  s.bounds = {0, 3, 3, 9};
  CHECK_THROWS_AS(s.validate(9), SegmentationError);
  s.bounds = {1, 9};
  CHECK_THROWS_AS(s.validate(9), SegmentationError);
  const auto f = Segmentation::fixed(10, 4);
  CHECK(f.bounds == std::vector<std::int64_t>{0, 4, 8, 10});
  CHECK(Segmentation::fixed(0, 4).count() == 0);
  CHECK(Segmentation::fixed(8, 4).count() == 2);
}

TEST_CASE("|h| = S * K over random segmentations") {
  const auto cfg = tiny_config();
  const auto comp = Compressor<double>::init(cfg, Rng(1));
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = rng.uniform_int(1, 40);
    const auto seg = random_segmentation(n, cfg.max_segment, rng);
    const auto state = comp.compress_all(segment_input(rng, n, cfg.d_model), seg);
    const auto h = state.concat(cfg.d_compress);
    CHECK(state.step() == seg.count());
    CHECK(h.rows() == static_cast<std::int64_t>(seg.count()) * cfg.n_queries);
    CHECK(h.cols() == cfg.d_compress);
  }
  CHECK(comp.initial_state().concat(cfg.d_compress).rows() == 0);
}

TEST_CASE("a step is invariant to token order inside the segment") {
  const auto cfg = tiny_config();
  const auto comp = Compressor<double>::init(cfg, Rng(3));
  Rng rng(4);
  const M x = random_matrix(rng, 5, cfg.d_model);
  M shuffled = x;
  shuffled.row(0).swap(shuffled.row(4));
  shuffled.row(1).swap(shuffled.row(3));
  const auto a = comp.step(comp.initial_state(), T({5, cfg.d_model}, x)).current.value();
  const auto b = comp.step(comp.initial_state(), T({5, cfg.d_model}, shuffled)).current.value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("the recurrence is sensitive to segment order") {
  const auto cfg = tiny_config();
  const auto comp = Compressor<double>::init(cfg, Rng(5));
  Rng rng(6);
  const auto s1 = segment_input(rng, 4, cfg.d_model), s2 = segment_input(rng, 4, cfg.d_model);
  auto a = comp.step(comp.step(comp.initial_state(), s1), s2);
  auto b = comp.step(comp.step(comp.initial_state(), s2), s1);
  CHECK((a.current.value() - b.current.value()).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("step rejects empty and mis-shaped segments") {
  const auto cfg = tiny_config();
  const auto comp = Compressor<double>::init(cfg, Rng(7));
  CHECK_THROWS_AS(comp.step(comp.initial_state(), T::zeros({0, cfg.d_model})), ContractError);
  CHECK_THROWS_AS(comp.step(comp.initial_state(), T::zeros({3, cfg.d_model + 1})), DimensionError);
}

TEST_CASE("cached blocks keep every forward value and cut gradient") {
  const auto cfg = tiny_config();
  const auto comp = Compressor<double>::init(cfg, Rng(8));
  Rng rng(9);
  const auto n = 20;
  const auto seg = Segmentation::fixed(n, 4);
  const auto state = comp.compress_all(segment_input(rng, n, cfg.d_model), seg);
  for (std::size_t t : {0u, 1u, 3u, 5u}) {
    const auto cached = comp.cache_blocks(state, t);
    REQUIRE(cached.step() == state.step());
    for (std::size_t i = 0; i < state.step(); ++i) {
      CHECK((cached.blocks[i].value() - state.blocks[i].value()).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(cached.grad_enabled[i] == (i + t >= state.step()));
    }
  }
  CHECK_THROWS_AS(comp.cache_blocks(state, 6), ContractError);
}

TEST_CASE("selective splice leaves values unchanged and adds direct paths") {
  const auto cfg = tiny_config();
  const auto comp = Compressor<double>::init(cfg, Rng(10));
  Rng rng(11);
  const auto e = segment_input(rng, 16, cfg.d_model);
  CompressorState<double> state;
  {
    NoGradGuard no_grad;
    state = comp.compress_all(e, Segmentation::fixed(16, 4));
  }
  const std::vector<std::size_t> sel{1, 3};
  const auto spliced = comp.splice_selected(state, sel);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK((spliced.blocks[i].value() - state.blocks[i].value()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(spliced.blocks[i].requires_grad() == (i == 0 || i == 2));
  }
  CHECK(spliced.current.value() == state.current.value());
  const std::vector<std::size_t> bad{5};
  CHECK_THROWS_AS(comp.splice_selected(state, bad), ContractError);
}

TEST_CASE("perceiver block gradients") {
  auto cfg = tiny_config();
  cfg.d_model = 6;
  cfg.d_compress = 4;
  const auto comp = Compressor<double>::init(cfg, Rng(12));
  Rng rng(13);
  auto x = T::parameter({5, cfg.d_model}, random_matrix(rng, 5, cfg.d_model));
  const auto w = random_matrix(rng, cfg.n_queries, cfg.d_compress);
  std::vector<T> leaves{x};
  for (const auto& [name, t] : comp.parameters()) leaves.push_back(t);
  CHECK(grad_check<double>([&] { return sum(mul(comp.perceiver(comp.initial_queries(), x), T(w))); }, leaves) < 1e-5);
}

TEST_CASE("gradients through two recurrence steps") {
  auto cfg = tiny_config();
  cfg.d_model = 4;
  cfg.d_compress = 4;
  const auto comp = Compressor<double>::init(cfg, Rng(14));
  Rng rng(15);
  auto x = T::parameter({7, cfg.d_model}, random_matrix(rng, 7, cfg.d_model));
  const auto w = random_matrix(rng, 2 * cfg.n_queries, cfg.d_compress);
  std::vector<T> leaves{x};
  for (const auto& [name, t] : comp.parameters()) leaves.push_back(t);
  const auto seg = Segmentation::fixed(7, 4);
  CHECK(grad_check<double>([&] { return sum(mul(comp.compress_all(x, seg).concat(cfg.d_compress), T(w))); },
                           leaves) < 1e-5);
}
