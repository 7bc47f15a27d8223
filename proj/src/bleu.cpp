#include "berttune/bleu.hpp"

#include <cmath>

namespace berttune {

double BleuStats::score() const {
  if (candidate_length == 0) return 0.0;
  double log_precision = 0.0;
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    const double m = static_cast<double>(matches[n]);
    const double t = static_cast<double>(totals[n]);
    const double p = matches[n] == 0 ? 1.0 / (t + 1.0) : m / t;
    log_precision += std::log(p) / static_cast<double>(kBleuOrder);
  }
  const double c = static_cast<double>(candidate_length);
  const double r = static_cast<double>(reference_length);
  const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * brevity * std::exp(log_precision);
}

}  // namespace berttune
