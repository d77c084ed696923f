#include "lcirc/tensor.hpp"

#include <sstream>

namespace lcirc {

namespace {
thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_macs = 0;
}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

bool grad_enabled() { return t_grad_enabled; }

namespace detail {
void set_grad_enabled(bool on) { t_grad_enabled = on; }
}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::uint64_t MacCounter::value() { return t_macs; }
void MacCounter::reset() { t_macs = 0; }
void MacCounter::add(std::uint64_t macs) { t_macs += macs; }

}  // namespace lcirc
