#include "lcirc/inference.hpp"

namespace lcirc {

Regime select_regime(std::int64_t n, std::int64_t p, std::int64_t m) {
  if (n + p <= m) return Regime::A;
  if (p <= m) return Regime::B;
  return Regime::C;
}

nlohmann::json to_json(const TraceEvent& e) {
  return {{"step", e.step},
          {"regime", std::string(1, static_cast<char>(e.regime))},
          {"window_occupancy", e.window_occupancy},
          {"h_blocks", e.h_blocks},
          {"evictions", e.evictions},
          {"macs", e.macs}};
}

std::int64_t expected_evictions(std::int64_t n, std::int64_t p, std::int64_t m) {
  if (select_regime(n, p, m) == Regime::A) return 0;
  const auto half = m / 2;
  const auto w0 = std::min(n, std::max(m - p, half));
  const auto overflow = w0 + p - m;
  return overflow <= 0 ? 0 : (overflow + half - 1) / half;
}

}  // namespace lcirc
