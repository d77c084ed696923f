#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lcirc/checkpoint.hpp"
#include "lcirc/pipeline.hpp"
#include "test_util.hpp"

using namespace lcirc;
using namespace lcirc::testing;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("lcirc_test_" + name)).string();
}

}  // namespace

TEST_CASE("config round trip and validation") {
  auto cfg = tiny_config();
  cfg.bptt_mode = "selective";
  CHECK(ModelConfig::from_json(cfg.to_json()) == cfg);
  CHECK(ModelConfig::from_json(nlohmann::json::object()) == ModelConfig{});
  CHECK_THROWS_AS(ModelConfig::from_json({{"d_modle", 4}}), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json({{"d_model", 7}, {"n_heads", 2}}), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json({{"bptt_mode", "full"}}), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json({{"d_model", "wide"}}), ConfigError);
  CHECK_THROWS_AS(ModelConfig::load("/nonexistent/config.json"), ConfigError);
  auto other = cfg;
  other.lr = 0.5;
  CHECK(other.hash() != cfg.hash());
  CHECK(other.architecture_hash() == cfg.architecture_hash());
  other.n_queries = 3;
  CHECK(other.architecture_hash() != cfg.architecture_hash());
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto cfg = tiny_config();
  const auto base = BaseLM<double>::init(cfg, Rng(1));
  auto model = LcircModel<double>::init(base, Rng(2));
  model.enable_qd(Rng(3));
  open_gates(model, 0.25);
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(path, cfg, model.parameters());
  const auto c = load_checkpoint(path);
  CHECK(checkpoint_config(c) == cfg);
  const auto loaded = load_model<double>(path, 99);
  CHECK(loaded.has_qd());
  const auto a = model.parameters(), b = loaded.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.value() == b[i].second.value());
  }
  const auto fl = load_model<float>(path);
  CHECK(std::abs(static_cast<double>(fl.injector().blocks[0].alpha()) - std::tanh(0.25)) < 1e-6);
  std::filesystem::remove(path);
}

TEST_CASE("missing and mis-shaped tensors are rejected") {
  const auto cfg = tiny_config();
  const auto base = BaseLM<double>::init(cfg, Rng(4));
  const auto path = temp_path("base.bin");
  save_checkpoint(path, cfg, base.parameters());
  const auto c = load_checkpoint(path);
  auto model = LcircModel<double>::init(base, Rng(5));
  auto params = model.parameters();
  CHECK_THROWS_AS(assign_parameters(c, params), FormatError);
  CHECK_NOTHROW(assign_parameters(c, params, {"compressor.", "injector."}));
  auto wide = cfg;
  wide.d_model = 16;
  auto other = BaseLM<double>::init(wide, Rng(4)).parameters();
  CHECK_THROWS_AS(assign_parameters(c, other), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("corrupt files are rejected") {
  const auto path = temp_path("bad.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE1";
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist")), FormatError);
  const auto cfg = tiny_config();
  save_checkpoint(path, cfg, BaseLM<double>::init(cfg, Rng(6)).parameters());
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("compressed state snapshot and restore") {
  const auto cfg = tiny_config();
  const auto base = BaseLM<double>::init(cfg, Rng(7));
  const auto model = LcircModel<double>::init(base, Rng(8));
  Rng rng(9);
  const auto ids = random_ids(rng, 14);
  const auto state = model.compressor().compress_all(model.base().embed(ids), Segmentation::fixed(14, 4));
  const auto path = temp_path("state.bin");
  save_state(path, cfg, state);
  const auto back = load_state<double>(path, cfg);
  REQUIRE(back.step() == state.step());
  for (std::size_t i = 0; i < state.step(); ++i) CHECK(back.blocks[i].value() == state.blocks[i].value());
  CHECK(back.current.value() == state.current.value());
  auto other = cfg;
  other.n_queries = 4;
  CHECK_THROWS_AS(load_state<double>(path, other), FormatError);
  // Resuming from the snapshot continues the recurrence exactly.
  const auto more = random_ids(rng, 4);
  const auto e = model.base().embed(more);
  CHECK(model.compressor().step(back, e).current.value() == model.compressor().step(state, e).current.value());
  std::filesystem::remove(path);
}
