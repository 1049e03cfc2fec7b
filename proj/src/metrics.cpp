#include "cascade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cascade {

double binary_entropy(double p) {
  if (p < 0 || p > 1) throw std::invalid_argument("binary_entropy: p outside [0,1]");
  if (p == 0 || p == 1) return 0;
  return -p * std::log2(p) - (1 - p) * std::log2(1 - p);
}

double secret_bits_per_frame(double fer, double alpha, double i_ab, double i_e) {
  return std::max(0.0, (1 - fer) * (alpha * i_ab - i_e));
}

double performance_rate(double r_ir, double fer, double alpha, double i_ab_frac,
                        double i_e_frac) {
  return std::max(0.0, r_ir * (1 - fer) * (alpha * i_ab_frac - i_e_frac));
}

double efficiency_alpha(uint64_t n, uint64_t leaked_bits, double qber_true) {
  if (n == 0) return 0;
  double denom = static_cast<double>(n) * (1 - binary_entropy(qber_true));
  if (denom <= 0) return 0;
  return (static_cast<double>(n) - static_cast<double>(leaked_bits)) / denom;
}

}  // namespace cascade
