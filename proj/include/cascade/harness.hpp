#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cascade/channel.hpp"
#include "cascade/metrics.hpp"
#include "cascade/protocol.hpp"

namespace cascade {

// One grid of measurement cells: every combination of frame size, qber and
// latency, at a fixed schedule variant and parallel-session count.
struct ExperimentConfig {
  std::vector<uint64_t> frame_sizes{1000000};
  std::vector<double> qbers{0.01};
  std::vector<double> latencies_ms{0.0};
  ScheduleVariant variant = ScheduleVariant::original;
  uint32_t sessions = 1;  // parallel sessions per cell
  uint32_t frames = 100;  // frames corrected per session
  uint64_t seed = 1;
  double first_round_constant = 0.73;
  std::string out_dir;  // empty: no files written
};

struct CellConfig {
  uint64_t n = 0;
  double qber = 0;
  double latency_ms = 0;
  uint32_t sessions = 1;
  uint32_t frames = 100;
  ScheduleVariant variant = ScheduleVariant::original;
};

enum class FrameOutcome : uint8_t { corrected, failed, aborted };

struct FrameRecord {
  uint32_t session_index = 0;
  uint32_t frame_index = 0;
  FrameOutcome outcome = FrameOutcome::aborted;
  SessionMetrics metrics;
};

struct CellResult {
  CellConfig cfg;
  PartitionSchedule schedule;
  std::vector<FrameRecord> rows;

  uint64_t corrected = 0, failed = 0, aborted = 0;
  double fer = 0;               // (failed + aborted) / total
  double mean_alpha = 0;        // over corrected frames
  double mean_qber_true = 0;
  double mean_leaked = 0;
  double mean_round_trips = 0;
  double mean_rt_lookback = 0;
  double eq5_structural = 0;    // r + sum_i ceil(log2 k_i)
  double mean_eq5_l = 0;        // mean round trips - structural
  double mean_wall_s = 0, mean_comm_s = 0, mean_compute_s = 0;
  double mean_throughput_bps = 0;       // per-session
  double aggregate_throughput_bps = 0;  // all sessions vs cell wall clock
  double cell_wall_s = 0;
  uint64_t peak_memory_bytes = 0;  // max over rows
};

struct ExperimentResult {
  ExperimentConfig cfg;
  std::vector<CellResult> cells;
};

// Runs one frame pair through a latency-injecting loopback, the reference
// party on a helper thread. Returns both parties' results; the correcting
// side's metrics are the ones reported everywhere.
struct LoopbackRunResult {
  ReconciliationResult correcting;
  ReconciliationResult reference;
};
LoopbackRunResult run_loopback_frame(const BitFrame& reference,
                                     const BitFrame& noisy, double qber_estimate,
                                     ScheduleVariant variant, double latency_ms,
                                     Seed128 session_seed, uint16_t session_id = 1,
                                     double first_round_constant = 0.73,
                                     SessionOptions correcting_opts = {});

// Same, with fully explicit session parameters (both parties get a copy).
LoopbackRunResult run_loopback_frame(const BitFrame& reference,
                                     const BitFrame& noisy, SessionParams params,
                                     double latency_ms,
                                     SessionOptions correcting_opts = {});

CellResult run_cell(const CellConfig& cell, uint64_t seed,
                    double first_round_constant = 0.73);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct TableRow {
  double qber = 0;
  double alpha = 0;
  double fer = 0;
  double mean_round_trips = 0;
  double mean_leaked = 0;
  uint32_t frames = 0;
};

// Efficiency sweep over qber {1, 3, 5, 10, 15}% at a fixed frame size.
std::vector<TableRow> table_one(uint32_t frames, uint64_t n,
                                ScheduleVariant variant = ScheduleVariant::original,
                                uint64_t seed = 1,
                                double first_round_constant = 0.73);

// results/<name>: frames.csv (one row per frame), cells.csv (one row per
// cell), results.json (everything). Column sets are fixed; see README.
void write_experiment_outputs(const ExperimentResult& result,
                              const std::filesystem::path& dir);
std::string experiment_json(const ExperimentResult& result);

// Plain key=value sweep description; '#' starts a comment. Lists are
// comma-separated. Keys: n, qber, latency_ms, sessions, frames, schedule,
// seed, first_round_constant, out_dir.
ExperimentConfig parse_sweep_config(const std::filesystem::path& path);

}  // namespace cascade
