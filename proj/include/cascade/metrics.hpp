#pragma once

#include <cstdint>

namespace cascade {

// h2(p) = -p log2 p - (1-p) log2 (1-p), with h2(0) = h2(1) = 0.
double binary_entropy(double p);

// Secret bits extractable from one frame: (1 - fer) * (alpha * i_ab - i_e),
// floored at zero.
double secret_bits_per_frame(double fer, double alpha, double i_ab, double i_e);

// Secret key rate when reconciliation is the bottleneck:
// r_ir * (1 - fer) * (alpha * i_ab_frac - i_e_frac), floored at zero.
// The fractions are per input bit.
double performance_rate(double r_ir, double fer, double alpha, double i_ab_frac,
                        double i_e_frac);

// Reconciliation efficiency: the fraction of the mutual information that
// survives after charging the leaked bits, alpha = (n - leaked) /
// (n * (1 - h2(qber))). qber should be the measured error fraction of the
// pair, not the configured estimate.
double efficiency_alpha(uint64_t n, uint64_t leaked_bits, double qber_true);

// One reconciled frame as seen by the correcting party.
struct SessionMetrics {
  uint64_t n = 0;
  double qber_config = 0;  // estimate the schedule was built from
  double qber_true = 0;    // measured error fraction of the input pair

  uint64_t leaked_bits = 0;
  uint64_t flips = 0;

  // Round trips within the reconciliation phase (handshake and the final
  // digest exchange excluded): parity exchanges + binary-search depths +
  // look-back depths.
  uint64_t round_trips = 0;
  uint64_t rt_parity = 0;
  uint64_t rt_search = 0;
  uint64_t rt_lookback = 0;

  uint64_t messages_sent = 0;
  uint64_t messages_received = 0;
  uint64_t bytes_sent = 0;
  uint64_t bytes_received = 0;

  double wall_seconds = 0;     // reconciliation phase, handshake excluded
  double comm_seconds = 0;     // time blocked on the transport
  double compute_seconds = 0;  // wall - comm

  bool corrected = false;  // digest verified
  double alpha = 0;
  double throughput_bps = 0;  // n / wall_seconds

  uint64_t peak_memory_bytes = 0;  // data-structure accounting, not RSS
};

}  // namespace cascade
