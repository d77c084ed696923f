#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace lcirc {

/// Architecture and training hyperparameters.
///
/// Serialized field-for-field into config files and checkpoint headers;
/// unknown keys in a config file are rejected.
struct ModelConfig {
  // Base LM
  int vocab_size = 259;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_positions = 256;  // M
  int mlp_mult = 4;
  double ln_eps = 1e-5;
  double init_std = 0.02;

  // Compressor
  int d_compress = 128;  // d_c
  int n_queries = 16;    // K
  int perceiver_depth = 2;
  std::string segment_policy = "uniform_half";  // training lengths uniform in [R/2, R]
  int max_segment = 128;                        // R; also the fixed evaluation segment length

  // Injector
  int gca_every = 1;  // one GCA block before every k-th layer

  // BPTT
  std::string bptt_mode = "truncated";  // truncated | selective
  int bptt_window = 8;                  // T
  int n_select = 8;

  // Optimization
  double lr = 1e-3;
  int warmup_steps = 100;
  int train_steps = 1000;
  int batch_size = 4;  // examples per optimizer step
  double grad_clip = 1.0;
  int log_every = 50;
  int checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys raise ConfigError.
  static ModelConfig from_json(const nlohmann::json& j);
  static ModelConfig load(const std::string& path);

  /// FNV-1a of the canonical JSON dump.
  std::uint64_t hash() const;
  /// Hash over architecture fields only (ignores optimization settings), used
  /// to check that a compressed-state file matches the model resuming it.
  std::uint64_t architecture_hash() const;

  int n_gca_blocks() const { return (n_layers + gca_every - 1) / gca_every; }
  int head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

/// Byte-level tokenizer: ids 0..255 are raw bytes, then three specials.
namespace tokens {
inline constexpr std::int32_t kBos = 256;
inline constexpr std::int32_t kEos = 257;
inline constexpr std::int32_t kPad = 258;
inline constexpr std::int32_t kVocab = 259;
}  // namespace tokens

}  // namespace lcirc
