#include "cascade/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cascade/kernels.hpp"

namespace cascade {

namespace {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

uint64_t chain(uint64_t h, uint64_t v) { return kernels::mix64(h ^ (v + kGolden)); }

// Deterministic per-frame seeds, independent of thread scheduling.
uint64_t frame_seed(const CellConfig& c, uint64_t base, uint32_t session,
                    uint32_t frame) {
  uint64_t h = base;
  h = chain(h, c.n);
  h = chain(h, static_cast<uint64_t>(c.qber * 1e6 + 0.5));
  h = chain(h, static_cast<uint64_t>(c.latency_ms * 1e3 + 0.5));
  h = chain(h, static_cast<uint64_t>(c.variant));
  h = chain(h, session);
  h = chain(h, frame);
  return h;
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0;
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

LoopbackRunResult run_loopback_frame(const BitFrame& reference,
                                     const BitFrame& noisy, double qber_estimate,
                                     ScheduleVariant variant, double latency_ms,
                                     Seed128 session_seed, uint16_t session_id,
                                     double first_round_constant,
                                     SessionOptions correcting_opts) {
  SessionParams params;
  params.session_id = session_id;
  params.qber_estimate = qber_estimate;
  params.variant = variant;
  params.seed = session_seed;
  params.first_round_constant = first_round_constant;
  return run_loopback_frame(reference, noisy, std::move(params), latency_ms,
                            std::move(correcting_opts));
}

LoopbackRunResult run_loopback_frame(const BitFrame& reference,
                                     const BitFrame& noisy, SessionParams params,
                                     double latency_ms,
                                     SessionOptions correcting_opts) {
  auto pair = make_loopback_pair(latency_ms);
  LoopbackRunResult out;
  std::exception_ptr reference_error;
  std::thread ref_thread([&] {
    try {
      Session ref(Role::reference, reference, *pair.a, params);
      out.reference = ref.run();
    } catch (...) {
      reference_error = std::current_exception();
      pair.a.reset();  // wake the peer if it is blocked on us
    }
  });

  try {
    Session cor(Role::correcting, noisy, *pair.b, params,
                std::move(correcting_opts));
    out.correcting = cor.run();
  } catch (...) {
    pair.b.reset();
    ref_thread.join();
    throw;
  }
  ref_thread.join();
  if (reference_error) std::rethrow_exception(reference_error);
  return out;
}

CellResult run_cell(const CellConfig& cell, uint64_t seed,
                    double first_round_constant) {
  CellResult res;
  res.cfg = cell;
  res.schedule =
      make_schedule(cell.qber, cell.n, cell.variant, first_round_constant);

  // With several sessions in flight the parallelism is between sessions;
  // keep the kernels serial so teams do not oversubscribe each other.
  if (cell.sessions > 1) kernels::set_max_threads(1);

  std::mutex mu;
  std::vector<std::thread> workers;
  auto t0 = std::chrono::steady_clock::now();
  for (uint32_t s = 0; s < cell.sessions; ++s) {
    workers.emplace_back([&, s] {
      for (uint32_t f = 0; f < cell.frames; ++f) {
        uint64_t h = frame_seed(cell, seed, s, f);
        ChannelConfig chan{cell.n, cell.qber, chain(h, 1)};
        Seed128 session_seed{chain(h, 2), chain(h, 3)};
        FrameRecord rec;
        rec.session_index = s;
        rec.frame_index = f;
        try {
          auto pairdata = generate_pair(chan);
          auto rr = run_loopback_frame(
              pairdata.reference, pairdata.noisy, cell.qber, cell.variant,
              cell.latency_ms, session_seed, static_cast<uint16_t>(s + 1),
              first_round_constant);
          rec.metrics = rr.correcting.metrics;
          rec.outcome = rr.correcting.verified ? FrameOutcome::corrected
                                               : FrameOutcome::failed;
        } catch (const std::exception&) {
          rec.outcome = FrameOutcome::aborted;
        }
        std::lock_guard lock(mu);
        res.rows.push_back(std::move(rec));
      }
    });
  }
  for (auto& w : workers) w.join();
  res.cell_wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (cell.sessions > 1) kernels::set_max_threads(0);

  std::sort(res.rows.begin(), res.rows.end(),
            [](const FrameRecord& a, const FrameRecord& b) {
              return a.session_index != b.session_index
                         ? a.session_index < b.session_index
                         : a.frame_index < b.frame_index;
            });

  res.eq5_structural = static_cast<double>(res.schedule.rounds());
  for (uint64_t k : res.schedule.sizes)
    res.eq5_structural += std::ceil(std::log2(static_cast<double>(k)));

  std::vector<double> alphas, qts, leaks, rts, lbs, walls, comms, computes, tputs;
  for (const auto& r : res.rows) {
    switch (r.outcome) {
      case FrameOutcome::corrected: res.corrected += 1; break;
      case FrameOutcome::failed: res.failed += 1; break;
      case FrameOutcome::aborted: res.aborted += 1; break;
    }
    if (r.outcome == FrameOutcome::aborted) continue;
    if (r.outcome == FrameOutcome::corrected) {
      alphas.push_back(r.metrics.alpha);
      qts.push_back(r.metrics.qber_true);
    }
    leaks.push_back(static_cast<double>(r.metrics.leaked_bits));
    rts.push_back(static_cast<double>(r.metrics.round_trips));
    lbs.push_back(static_cast<double>(r.metrics.rt_lookback));
    walls.push_back(r.metrics.wall_seconds);
    comms.push_back(r.metrics.comm_seconds);
    computes.push_back(r.metrics.compute_seconds);
    tputs.push_back(r.metrics.throughput_bps);
    res.peak_memory_bytes =
        std::max(res.peak_memory_bytes, r.metrics.peak_memory_bytes);
  }
  uint64_t total = res.rows.size();
  res.fer = total == 0 ? 0
                       : static_cast<double>(res.failed + res.aborted) /
                             static_cast<double>(total);
  res.mean_alpha = mean_of(alphas);
  res.mean_qber_true = mean_of(qts);
  res.mean_leaked = mean_of(leaks);
  res.mean_round_trips = mean_of(rts);
  res.mean_rt_lookback = mean_of(lbs);
  res.mean_eq5_l = res.mean_round_trips - res.eq5_structural;
  res.mean_wall_s = mean_of(walls);
  res.mean_comm_s = mean_of(comms);
  res.mean_compute_s = mean_of(computes);
  res.mean_throughput_bps = mean_of(tputs);
  res.aggregate_throughput_bps =
      res.cell_wall_s > 0 ? static_cast<double>(cell.n) * cell.sessions *
                                cell.frames / res.cell_wall_s
                          : 0;
  return res;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult out;
  out.cfg = cfg;
  for (uint64_t n : cfg.frame_sizes)
    for (double q : cfg.qbers)
      for (double lat : cfg.latencies_ms) {
        CellConfig cell{n, q, lat, cfg.sessions, cfg.frames, cfg.variant};
        out.cells.push_back(run_cell(cell, cfg.seed, cfg.first_round_constant));
      }
  if (!cfg.out_dir.empty()) write_experiment_outputs(out, cfg.out_dir);
  return out;
}

std::vector<TableRow> table_one(uint32_t frames, uint64_t n,
                                ScheduleVariant variant, uint64_t seed,
                                double first_round_constant) {
  std::vector<TableRow> rows;
  for (double q : {0.01, 0.03, 0.05, 0.10, 0.15}) {
    CellConfig cell{n, q, 0.0, 1, frames, variant};
    CellResult r = run_cell(cell, seed, first_round_constant);
    rows.push_back({q, r.mean_alpha, r.fer, r.mean_round_trips, r.mean_leaked,
                    frames});
  }
  return rows;
}

// --- output ----------------------------------------------------------------

namespace {

const char* outcome_name(FrameOutcome o) {
  switch (o) {
    case FrameOutcome::corrected: return "corrected";
    case FrameOutcome::failed: return "failed";
    case FrameOutcome::aborted: return "aborted";
  }
  return "?";
}

std::string cell_id(const CellConfig& c) {
  std::ostringstream os;
  os << "n" << c.n << "_q" << c.qber << "_l" << c.latency_ms << "_s"
     << c.sessions;
  return os.str();
}

void write_frames_csv(std::ostream& os, const ExperimentResult& result) {
  os << "cell,n,qber_config,schedule,latency_ms,sessions,session,frame,"
        "outcome,qber_true,leaked_bits,flips,round_trips,rt_parity,rt_search,"
        "rt_lookback,messages_sent,messages_received,bytes_sent,"
        "bytes_received,wall_s,comm_s,compute_s,alpha,throughput_bps,"
        "peak_memory_bytes\n";
  for (const auto& cell : result.cells) {
    for (const auto& r : cell.rows) {
      const auto& m = r.metrics;
      os << cell_id(cell.cfg) << ',' << cell.cfg.n << ',' << cell.cfg.qber << ','
         << variant_name(cell.cfg.variant) << ',' << cell.cfg.latency_ms << ','
         << cell.cfg.sessions << ',' << r.session_index << ',' << r.frame_index
         << ',' << outcome_name(r.outcome) << ',' << m.qber_true << ','
         << m.leaked_bits << ',' << m.flips << ',' << m.round_trips << ','
         << m.rt_parity << ',' << m.rt_search << ',' << m.rt_lookback << ','
         << m.messages_sent << ',' << m.messages_received << ',' << m.bytes_sent
         << ',' << m.bytes_received << ',' << m.wall_seconds << ','
         << m.comm_seconds << ',' << m.compute_seconds << ',' << m.alpha << ','
         << m.throughput_bps << ',' << m.peak_memory_bytes << '\n';
    }
  }
}

void write_cells_csv(std::ostream& os, const ExperimentResult& result) {
  os << "cell,n,qber,schedule,latency_ms,sessions,frames,corrected,failed,"
        "aborted,fer,mean_alpha,mean_qber_true,mean_leaked,mean_round_trips,"
        "mean_rt_lookback,eq5_structural,mean_eq5_l,mean_wall_s,mean_comm_s,"
        "mean_compute_s,mean_throughput_bps,aggregate_throughput_bps,"
        "cell_wall_s,peak_memory_bytes\n";
  for (const auto& c : result.cells) {
    os << cell_id(c.cfg) << ',' << c.cfg.n << ',' << c.cfg.qber << ','
       << variant_name(c.cfg.variant) << ',' << c.cfg.latency_ms << ','
       << c.cfg.sessions << ',' << c.cfg.frames << ',' << c.corrected << ','
       << c.failed << ',' << c.aborted << ',' << c.fer << ',' << c.mean_alpha
       << ',' << c.mean_qber_true << ',' << c.mean_leaked << ','
       << c.mean_round_trips << ',' << c.mean_rt_lookback << ','
       << c.eq5_structural << ',' << c.mean_eq5_l << ',' << c.mean_wall_s << ','
       << c.mean_comm_s << ',' << c.mean_compute_s << ','
       << c.mean_throughput_bps << ',' << c.aggregate_throughput_bps << ','
       << c.cell_wall_s << ',' << c.peak_memory_bytes << '\n';
  }
}

}  // namespace

std::string experiment_json(const ExperimentResult& result) {
  nlohmann::json root;
  root["config"] = {
      {"frame_sizes", result.cfg.frame_sizes},
      {"qbers", result.cfg.qbers},
      {"latencies_ms", result.cfg.latencies_ms},
      {"schedule", variant_name(result.cfg.variant)},
      {"sessions", result.cfg.sessions},
      {"frames", result.cfg.frames},
      {"seed", result.cfg.seed},
      {"first_round_constant", result.cfg.first_round_constant},
  };
  auto& cells = root["cells"];
  cells = nlohmann::json::array();
  for (const auto& c : result.cells) {
    nlohmann::json jc = {
        {"cell", cell_id(c.cfg)},
        {"n", c.cfg.n},
        {"qber", c.cfg.qber},
        {"latency_ms", c.cfg.latency_ms},
        {"sessions", c.cfg.sessions},
        {"frames", c.cfg.frames},
        {"schedule_sizes", c.schedule.sizes},
        {"corrected", c.corrected},
        {"failed", c.failed},
        {"aborted", c.aborted},
        {"fer", c.fer},
        {"mean_alpha", c.mean_alpha},
        {"mean_qber_true", c.mean_qber_true},
        {"mean_leaked", c.mean_leaked},
        {"mean_round_trips", c.mean_round_trips},
        {"mean_rt_lookback", c.mean_rt_lookback},
        {"eq5_structural", c.eq5_structural},
        {"mean_eq5_l", c.mean_eq5_l},
        {"mean_wall_s", c.mean_wall_s},
        {"mean_comm_s", c.mean_comm_s},
        {"mean_compute_s", c.mean_compute_s},
        {"mean_throughput_bps", c.mean_throughput_bps},
        {"aggregate_throughput_bps", c.aggregate_throughput_bps},
        {"cell_wall_s", c.cell_wall_s},
        {"peak_memory_bytes", c.peak_memory_bytes},
    };
    cells.push_back(std::move(jc));
  }
  return root.dump(2);
}

void write_experiment_outputs(const ExperimentResult& result,
                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "frames.csv");
    if (!f) throw std::runtime_error("cannot write frames.csv");
    write_frames_csv(f, result);
  }
  {
    std::ofstream f(dir / "cells.csv");
    if (!f) throw std::runtime_error("cannot write cells.csv");
    write_cells_csv(f, result);
  }
  {
    std::ofstream f(dir / "results.json");
    if (!f) throw std::runtime_error("cannot write results.json");
    f << experiment_json(result) << '\n';
  }
}

// --- sweep config ------------------------------------------------------------

namespace {

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t a = item.find_first_not_of(" \t");
    size_t b = item.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

}  // namespace

ExperimentConfig parse_sweep_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open sweep config " + path.string());
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error("sweep config line " + std::to_string(lineno) +
                                 ": expected key=value");
      continue;
    }
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "n") {
        cfg.frame_sizes.clear();
        for (const auto& v : split_list(value))
          cfg.frame_sizes.push_back(std::stoull(v));
      } else if (key == "qber") {
        cfg.qbers.clear();
        for (const auto& v : split_list(value)) cfg.qbers.push_back(std::stod(v));
      } else if (key == "latency_ms") {
        cfg.latencies_ms.clear();
        for (const auto& v : split_list(value))
          cfg.latencies_ms.push_back(std::stod(v));
      } else if (key == "sessions") {
        cfg.sessions = static_cast<uint32_t>(std::stoul(value));
      } else if (key == "frames") {
        cfg.frames = static_cast<uint32_t>(std::stoul(value));
      } else if (key == "schedule") {
        auto v = variant_from_name(value);
        if (!v) throw std::runtime_error("unknown schedule '" + value + "'");
        cfg.variant = *v;
      } else if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else if (key == "first_round_constant") {
        cfg.first_round_constant = std::stod(value);
      } else if (key == "out_dir") {
        cfg.out_dir = value;
      } else {
        throw std::runtime_error("unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("sweep config line " + std::to_string(lineno) +
                               ": bad value for " + key);
    }
  }
  if (cfg.frame_sizes.empty() || cfg.qbers.empty() || cfg.latencies_ms.empty() ||
      cfg.frames < 1)
    throw std::runtime_error("sweep config: empty list or zero frames");
  return cfg;
}

}  // namespace cascade
