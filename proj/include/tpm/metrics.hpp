#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "tpm/core.hpp"

namespace tpm {

inline constexpr double kProbClamp = 1e-12;

/// 2|P∩T| / (|P| + |T|) for one class; 1 when the class is absent from both.
inline double dice(const GridMask& pred, const GridMask& truth, int class_id = 1) {
  detail::require(pred.height() == truth.height() && pred.width() == truth.width(), ErrorCode::DimensionMismatch,
                  "dice: mask sizes differ");
  std::size_t p = 0, t = 0, both = 0;
  for (std::size_t r = 0; r < pred.pixels(); ++r) {
    bool in_p = pred[r] == class_id, in_t = truth[r] == class_id;
    p += in_p;
    t += in_t;
    both += in_p && in_t;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

/// Mean binary cross-entropy; any nonzero truth label counts as foreground.
inline double cross_entropy(const ScalarMap& prob, const GridMask& truth) {
  detail::require(prob.height() == truth.height() && prob.width() == truth.width(), ErrorCode::DimensionMismatch,
                  "cross_entropy: sizes differ");
  double sum = 0.0;
  for (std::size_t r = 0; r < prob.pixels(); ++r) {
    double p = std::clamp(prob[r], kProbClamp, 1.0 - kProbClamp);
    sum -= truth[r] != 0 ? std::log(p) : std::log1p(-p);
  }
  return sum / static_cast<double>(prob.pixels());
}

/// Collapses every foreground class to label 1.
inline GridMask binarize(const GridMask& mask) {
  std::vector<int> labels(mask.labels());
  for (int& l : labels) l = l != 0 ? 1 : 0;
  return {mask.height(), mask.width(), 1, std::move(labels)};
}

}  // namespace tpm
