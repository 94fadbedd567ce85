#pragma once

#include <cmath>
#include <vector>

#include "driftsens/errors.hpp"

namespace driftsens {

struct MCEstimate {
  double mean = 0.0;
  double std_error = 0.0;  // sample std / sqrt(n)
  long n_samples = 0;
};

/// Mean and standard error with a fixed sequential reduction order, so the
/// result is bit-stable for any worker count that produced `values`.
inline MCEstimate mc_estimate(const std::vector<double>& values) {
  if (values.empty()) throw EstimationError("mc_estimate: no samples");
  MCEstimate e;
  e.n_samples = static_cast<long>(values.size());
  double sum = 0.0;
  for (const double v : values) sum += v;
  e.mean = sum / static_cast<double>(e.n_samples);
  if (e.n_samples > 1) {
    double ss = 0.0;
    for (const double v : values) {
      const double d = v - e.mean;
      ss += d * d;
    }
    e.std_error = std::sqrt(ss / static_cast<double>(e.n_samples - 1) /
                            static_cast<double>(e.n_samples));
  }
  return e;
}

}  // namespace driftsens
