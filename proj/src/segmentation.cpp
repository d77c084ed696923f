#include "lcirc/compressor.hpp"

namespace lcirc {

void Segmentation::validate(std::int64_t total_len, std::int64_t max_len) const {
  if (bounds.empty() || bounds.front() != 0) throw SegmentationError("segmentation must start at 0");
  if (bounds.back() != total_len) {
    throw SegmentationError("segmentation covers " + std::to_string(bounds.back()) + " tokens, context has " +
                            std::to_string(total_len));
  }
  for (std::size_t i = 0; i < count(); ++i) {
    const auto len = length(i);
    if (len < 1) throw SegmentationError("segment " + std::to_string(i) + " is empty or reversed");
    if (max_len > 0 && len > max_len) {
      throw SegmentationError("segment " + std::to_string(i) + " has length " + std::to_string(len) +
                              " > " + std::to_string(max_len));
    }
  }
}

Segmentation Segmentation::fixed(std::int64_t total_len, std::int64_t len) {
  if (len < 1) throw SegmentationError("segment length must be positive");
  if (total_len < 0) throw SegmentationError("negative context length");
  Segmentation s;
  for (std::int64_t b = len; b < total_len; b += len) s.bounds.push_back(b);
  if (total_len > 0) s.bounds.push_back(total_len);
  return s;
}

}  // namespace lcirc
