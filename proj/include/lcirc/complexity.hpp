#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcirc/config.hpp"

namespace lcirc {

/// Analytic cost model. All counts are FLOPs with 1 MAC = 2 FLOPs; softmax,
/// normalization and elementwise work are not counted.
struct CostModel {
  std::string name;
  double p_base = 0;           // total base-model parameters
  std::int64_t n_layers = 0;   // L
  std::int64_t d_model = 0;    // d
  std::int64_t window = 0;     // M
  std::int64_t d_compress = 0; // d_c
  std::int64_t n_queries = 0;  // K
  std::int64_t depth = 0;      // Perceiver blocks
  std::int64_t mlp_mult = 4;
  std::int64_t r_eval = 0;     // fixed compression segment length
  std::int64_t query_len = 0;  // user-query tokens seen by the QD block

  /// Weight-matrix parameters of the compressor (biases and norms omitted).
  double p_comp() const;
  void validate() const;
  nlohmann::json to_json() const;
};

/// Paper-scale preset: 6.74e9 parameters, 32 layers of width 4096, M = 4096.
CostModel llama2_7b_preset();
/// The toy model described by `cfg`, with P_base counted from its tensors.
CostModel desk_preset(const ModelConfig& cfg = {});

/// Parameter count of the base LM built from `cfg`.
std::int64_t base_parameter_count(const ModelConfig& cfg);

/// 2 P_base N + 4 L d N^2.
double flops_full_attention(std::int64_t n, const CostModel& cm);

/// Compressor FLOPs for one recurrence step over `n` segment tokens; with
/// `qd` the query-conditioning block is included.
double compression_step_flops(std::int64_t n, const CostModel& cm, bool qd = false);

/// Compressor FLOPs for `tokens` tokens cut into fixed R_eval segments.
double compression_flops(std::int64_t tokens, const CostModel& cm, bool qd = false);

/// Average compression FLOPs per token over one full segment.
double compression_per_token(const CostModel& cm, bool qd = false);

/// Full attention over min(N, M) plus compression of the N - M overflow.
double flops_lcirc(std::int64_t n, const CostModel& cm, std::int64_t m, bool qd = false);
inline double flops_lcirc(std::int64_t n, const CostModel& cm, bool qd = false) {
  return flops_lcirc(n, cm, cm.window, qd);
}

struct CostRow {
  std::int64_t n = 0;
  double full_attention = 0;  // TFLOPs
  double lcirc = 0;
  double qd_lcirc = 0;
};

struct CostReport {
  CostModel model;
  std::vector<CostRow> rows;

  std::string csv() const;
  std::string text() const;
};

CostReport cost_report(const CostModel& cm, const std::vector<std::int64_t>& grid);

/// Coefficient of determination of the least-squares line through (x, y).
double affine_r2(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace lcirc
