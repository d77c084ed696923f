#include "lcirc/config.hpp"

#include <fstream>
#include <set>

#include "lcirc/errors.hpp"
#include "lcirc/rng.hpp"

namespace lcirc {

namespace {

const std::set<std::string>& architecture_keys() {
  static const std::set<std::string> keys = {
      "vocab_size", "d_model", "n_layers", "n_heads", "max_positions", "mlp_mult", "ln_eps",
      "d_compress", "n_queries", "perceiver_depth", "max_segment", "gca_every"};
  return keys;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
  if (vocab_size < 1) fail("vocab_size must be positive");
  if (d_model < 1 || n_layers < 1 || n_heads < 1) fail("d_model, n_layers, n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_compress < 1 || d_compress % n_heads != 0) fail("d_compress must be a positive multiple of n_heads");
  if (max_positions < 8) fail("max_positions (M) must be at least 8");
  if (n_queries < 1) fail("n_queries (K) must be at least 1");
  if (perceiver_depth < 1) fail("perceiver_depth must be at least 1");
  if (max_segment < 2 || max_segment > max_positions) fail("max_segment (R) must lie in [2, M]");
  if (segment_policy != "uniform_half" && segment_policy != "fixed") {
    fail("segment_policy must be 'uniform_half' or 'fixed'");
  }
  if (gca_every < 1) fail("gca_every must be at least 1");
  if (bptt_mode != "truncated" && bptt_mode != "selective") fail("bptt_mode must be truncated|selective");
  if (bptt_window < 0 || n_select < 0) fail("bptt_window and n_select must be non-negative");
  if (mlp_mult < 1) fail("mlp_mult must be positive");
  if (!(ln_eps >= 0.0)) fail("ln_eps must be non-negative");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (warmup_steps < 0 || train_steps < 0) fail("step counts must be non-negative");
  if (batch_size < 1) fail("batch_size must be at least 1");
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"vocab_size", vocab_size},
                        {"d_model", d_model},
                        {"n_layers", n_layers},
                        {"n_heads", n_heads},
                        {"max_positions", max_positions},
                        {"mlp_mult", mlp_mult},
                        {"ln_eps", ln_eps},
                        {"init_std", init_std},
                        {"d_compress", d_compress},
                        {"n_queries", n_queries},
                        {"perceiver_depth", perceiver_depth},
                        {"segment_policy", segment_policy},
                        {"max_segment", max_segment},
                        {"gca_every", gca_every},
                        {"bptt_mode", bptt_mode},
                        {"bptt_window", bptt_window},
                        {"n_select", n_select},
                        {"lr", lr},
                        {"warmup_steps", warmup_steps},
                        {"train_steps", train_steps},
                        {"batch_size", batch_size},
                        {"grad_clip", grad_clip},
                        {"log_every", log_every},
                        {"checkpoint_every", checkpoint_every},
                        {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ModelConfig c;
  const auto known = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  read_field(j, "vocab_size", c.vocab_size);
  read_field(j, "d_model", c.d_model);
  read_field(j, "n_layers", c.n_layers);
  read_field(j, "n_heads", c.n_heads);
  read_field(j, "max_positions", c.max_positions);
  read_field(j, "mlp_mult", c.mlp_mult);
  read_field(j, "ln_eps", c.ln_eps);
  read_field(j, "init_std", c.init_std);
  read_field(j, "d_compress", c.d_compress);
  read_field(j, "n_queries", c.n_queries);
  read_field(j, "perceiver_depth", c.perceiver_depth);
  read_field(j, "segment_policy", c.segment_policy);
  read_field(j, "max_segment", c.max_segment);
  read_field(j, "gca_every", c.gca_every);
  read_field(j, "bptt_mode", c.bptt_mode);
  read_field(j, "bptt_window", c.bptt_window);
  read_field(j, "n_select", c.n_select);
  read_field(j, "lr", c.lr);
  read_field(j, "warmup_steps", c.warmup_steps);
  read_field(j, "train_steps", c.train_steps);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "grad_clip", c.grad_clip);
  read_field(j, "log_every", c.log_every);
  read_field(j, "checkpoint_every", c.checkpoint_every);
  read_field(j, "seed", c.seed);
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(to_json().dump()); }

std::uint64_t ModelConfig::architecture_hash() const {
  nlohmann::json arch;
  const auto all = to_json();
  for (const auto& key : architecture_keys()) arch[key] = all.at(key);
  return fnv1a64(arch.dump());
}

}  // namespace lcirc
