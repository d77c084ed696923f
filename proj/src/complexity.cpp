#include "lcirc/complexity.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "lcirc/errors.hpp"

namespace lcirc {

namespace {

double as_d(std::int64_t v) { return static_cast<double>(v); }

constexpr double kTera = 1e12;

// MACs of a block whose K queries of width d_c attend to n memory rows of
// width `mem`, followed by the MLP: q and o projections, k and v projections,
// scores plus weighted values, two MLP matrices.
double cross_block_macs(std::int64_t n, std::int64_t mem, const CostModel& cm) {
  const double k = as_d(cm.n_queries), dc = as_d(cm.d_compress);
  return 2 * k * dc * dc + 2 * as_d(n) * as_d(mem) * dc + 2 * k * as_d(n) * dc + 2 * k * dc * dc * as_d(cm.mlp_mult);
}

}  // namespace

double CostModel::p_comp() const {
  const double dc = as_d(d_compress), d = as_d(d_model);
  return as_d(n_queries) * dc + as_d(depth) * (2 * dc * dc + 2 * d * dc + 2 * dc * dc * as_d(mlp_mult));
}

void CostModel::validate() const {
  if (!(p_base > 0) || n_layers <= 0 || d_model <= 0 || window <= 0 || d_compress <= 0 || n_queries <= 0 ||
      depth <= 0 || mlp_mult <= 0 || r_eval <= 0 || query_len < 0) {
    throw ConfigError("cost model '" + name + "' has non-positive fields");
  }
}

nlohmann::json CostModel::to_json() const {
  return {{"name", name},         {"p_base", p_base}, {"n_layers", n_layers},   {"d_model", d_model},
          {"window", window},     {"d_compress", d_compress}, {"n_queries", n_queries}, {"depth", depth},
          {"mlp_mult", mlp_mult}, {"r_eval", r_eval}, {"query_len", query_len}, {"p_comp", p_comp()}};
}

CostModel llama2_7b_preset() {
  CostModel cm;
  cm.name = "llama2-7b";
  cm.p_base = 6.74e9;
  cm.n_layers = 32;
  cm.d_model = 4096;
  cm.window = 4096;
  cm.d_compress = 4096;
  cm.n_queries = 64;
  cm.depth = 6;
  cm.mlp_mult = 4;
  cm.r_eval = 4096;
  cm.query_len = 512;
  return cm;
}

std::int64_t base_parameter_count(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model, v = cfg.vocab_size, h = d * cfg.mlp_mult;
  const std::int64_t layer = 2 * 2 * d + 4 * (d * d + d) + (d * h + h) + (h * d + d);
  return v * d + std::int64_t{cfg.max_positions} * d + cfg.n_layers * layer + 2 * d + (d * v + v);
}

CostModel desk_preset(const ModelConfig& cfg) {
  CostModel cm;
  cm.name = "desk";
  cm.p_base = as_d(base_parameter_count(cfg));
  cm.n_layers = cfg.n_layers;
  cm.d_model = cfg.d_model;
  cm.window = cfg.max_positions;
  cm.d_compress = cfg.d_compress;
  cm.n_queries = cfg.n_queries;
  cm.depth = cfg.perceiver_depth;
  cm.mlp_mult = cfg.mlp_mult;
  cm.r_eval = cfg.max_segment;
  cm.query_len = 16;
  return cm;
}

double flops_full_attention(std::int64_t n, const CostModel& cm) {
  if (n < 1) throw ContractError("flops_full_attention: N must be positive");
  const double nn = as_d(n);
  return 2 * cm.p_base * nn + 4 * as_d(cm.n_layers) * as_d(cm.d_model) * nn * nn;
}

double compression_step_flops(std::int64_t n, const CostModel& cm, bool qd) {
  double macs = as_d(cm.depth) * cross_block_macs(n, cm.d_model, cm);
  if (qd) macs += cross_block_macs(cm.query_len, cm.d_model, cm);
  return 2 * macs;
}

double compression_flops(std::int64_t tokens, const CostModel& cm, bool qd) {
  if (tokens <= 0) return 0.0;
  const auto full = tokens / cm.r_eval;
  const auto rest = tokens % cm.r_eval;
  double f = as_d(full) * compression_step_flops(cm.r_eval, cm, qd);
  if (rest > 0) f += compression_step_flops(rest, cm, qd);
  return f;
}

double compression_per_token(const CostModel& cm, bool qd) {
  return compression_step_flops(cm.r_eval, cm, qd) / as_d(cm.r_eval);
}

double flops_lcirc(std::int64_t n, const CostModel& cm, std::int64_t m, bool qd) {
  if (n < 1) throw ContractError("flops_lcirc: N must be positive");
  return flops_full_attention(std::min(n, m), cm) + compression_flops(std::max<std::int64_t>(0, n - m), cm, qd);
}

CostReport cost_report(const CostModel& cm, const std::vector<std::int64_t>& grid) {
  cm.validate();
  CostReport r;
  r.model = cm;
  for (auto n : grid) {
    r.rows.push_back({n, flops_full_attention(n, cm) / kTera, flops_lcirc(n, cm, false) / kTera,
                      flops_lcirc(n, cm, true) / kTera});
  }
  return r;
}

std::string CostReport::csv() const {
  std::ostringstream os;
  os << "n,full_attention_tflops,lcirc_tflops,qd_lcirc_tflops\n";
  os.precision(10);
  for (const auto& row : rows) os << row.n << ',' << row.full_attention << ',' << row.lcirc << ',' << row.qd_lcirc << '\n';
  return os.str();
}

std::string CostReport::text() const {
  std::ostringstream os;
  os << "# preset " << model.name << ": " << model.to_json().dump() << '\n';
  os << "# TFLOPs, 1 MAC = 2 FLOPs, softmax and normalization excluded\n";
  os << "# compression FLOPs per token: " << compression_per_token(model) << '\n';
  char line[128];
  std::snprintf(line, sizeof line, "%10s %16s %12s %12s\n", "N", "full_attention", "lcirc", "qd_lcirc");
  os << line;
  for (const auto& row : rows) {
    std::snprintf(line, sizeof line, "%10lld %16.6g %12.6g %12.6g\n", static_cast<long long>(row.n), row.full_attention,
                  row.lcirc, row.qd_lcirc);
    os << line;
  }
  return os.str();
}

double affine_r2(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("affine_r2: need at least two paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0) return 1.0;
  if (sxx == 0) throw ContractError("affine_r2: x values are all equal");
  const double slope = sxy / sxx;
  double sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (my + slope * (x[i] - mx));
    sse += e * e;
  }
  return 1.0 - sse / syy;
}

}  // namespace lcirc
