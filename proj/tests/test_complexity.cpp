#include <doctest.h>

#include <cmath>

#include "lcirc/complexity.hpp"
#include "lcirc/model.hpp"

using namespace lcirc;

TEST_CASE("full-attention FLOPs reproduce the reference column") {
  const auto cm = llama2_7b_preset();
  CHECK(std::abs(flops_full_attention(4096, cm) / 1e12 / 63.0 - 1.0) < 0.10);
  CHECK(std::abs(flops_full_attention(131072, cm) / 1e12 / 10739.0 - 1.0) < 0.10);
  CHECK(std::abs(flops_full_attention(8192, cm) / 1e12 / 143.0 - 1.0) < 0.10);
  CHECK(std::abs(flops_full_attention(65536, cm) / 1e12 / 3118.0 - 1.0) < 0.10);
  auto no_dense = cm;
  no_dense.p_base = 1e-300;
  CHECK(flops_full_attention(2000, no_dense) / flops_full_attention(1000, no_dense) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_THROWS_AS(flops_full_attention(0, cm), ContractError);
}

TEST_CASE("LCIRC FLOPs") {
  const auto cm = llama2_7b_preset();
  for (std::int64_t n : {1, 100, 4096}) CHECK(flops_lcirc(n, cm) == flops_full_attention(n, cm));
  const double ratio = flops_lcirc(131072, cm) / flops_full_attention(131072, cm);
  CHECK(ratio <= 0.02);
  CHECK(std::abs(flops_lcirc(131072, cm) / 1e12 / 120.0 - 1.0) < 0.25);
  const std::int64_t big = 1 << 24;
  const double f1 = flops_lcirc(big, cm), f2 = flops_lcirc(2 * big, cm), f4 = flops_lcirc(4 * big, cm);
  CHECK((f2 - f1) / (f4 - f2) == doctest::Approx(0.5).epsilon(1e-6));
  std::vector<double> x, y;
  for (std::int64_t k = 2; k <= 64; k *= 2) {
    x.push_back(static_cast<double>(k * cm.window));
    y.push_back(flops_lcirc(k * cm.window, cm));
  }
  CHECK(affine_r2(x, y) > 0.999);
  CHECK(flops_lcirc(131072, cm, true) > flops_lcirc(131072, cm, false));
}

TEST_CASE("affine fit") {
  CHECK(affine_r2({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(affine_r2({1, 2, 3, 4}, {1, 4, 9, 16}) < 0.99);
  CHECK_THROWS_AS(affine_r2({1}, {1}), ContractError);
}

TEST_CASE("cost report") {
  const auto empty = cost_report(llama2_7b_preset(), {});
  CHECK(empty.csv() == "n,full_attention_tflops,lcirc_tflops,qd_lcirc_tflops\n");
  CHECK(empty.rows.empty());
  const auto desk = cost_report(desk_preset(), {256, 512, 2048, 4096, 8192});
  for (std::size_t i = 1; i < desk.rows.size(); ++i) {
    CHECK(desk.rows[i].full_attention > desk.rows[i - 1].full_attention);
    CHECK(desk.rows[i].lcirc > desk.rows[i - 1].lcirc);
    CHECK(desk.rows[i].qd_lcirc > desk.rows[i - 1].qd_lcirc);
  }
  CHECK(desk.text().find("1 MAC = 2 FLOPs") != std::string::npos);
  auto bad = desk_preset();
  bad.n_queries = 0;
  CHECK_THROWS_AS(cost_report(bad, {256}), ConfigError);
}

TEST_CASE("analytic counts agree with instrumented toy model") {
  const ModelConfig cfg;
  const auto cm = desk_preset(cfg);
  const auto base = BaseLM<float>::init(cfg, Rng(1));
  const auto comp = Compressor<float>::init(cfg, Rng(2));
  NoGradGuard no_grad;
  std::vector<TokenId> ids(256, 7);
  MacCounter::reset();
  base.forward(ids);
  const double measured = 2.0 * static_cast<double>(MacCounter::value());
  CHECK(std::abs(measured / flops_full_attention(256, cm) - 1.0) < 0.15);
  std::vector<TokenId> ctx(300, 9);
  MacCounter::reset();
  comp.compress_all(base.embed(ctx), Segmentation::fixed(300, cfg.max_segment));
  CHECK(2.0 * static_cast<double>(MacCounter::value()) == compression_flops(300, cm));
}
