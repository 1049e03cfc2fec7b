#include <cinttypes>
#include <cstdio>
#include <random>

#include <CLI11.hpp>

#include "cascade/channel.hpp"
#include "cascade/harness.hpp"
#include "cascade/kernels.hpp"
#include "cascade/metrics.hpp"
#include "cascade/protocol.hpp"
#include "cascade/wire.hpp"

using namespace cascade;

namespace {

void print_metrics(const SessionMetrics& m, bool verified) {
  std::printf("outcome        %s\n", verified ? "corrected" : "FAILED");
  std::printf("n              %" PRIu64 "\n", m.n);
  std::printf("qber (est)     %.6f\n", m.qber_config);
  std::printf("qber (true)    %.6f\n", m.qber_true);
  std::printf("leaked bits    %" PRIu64 "\n", m.leaked_bits);
  std::printf("flips          %" PRIu64 "\n", m.flips);
  std::printf("round trips    %" PRIu64 "  (parity %" PRIu64 ", search %" PRIu64
              ", look-back %" PRIu64 ")\n",
              m.round_trips, m.rt_parity, m.rt_search, m.rt_lookback);
  std::printf("messages       %" PRIu64 " sent, %" PRIu64 " received\n",
              m.messages_sent, m.messages_received);
  std::printf("wall           %.3f s  (compute %.3f, comm %.3f)\n",
              m.wall_seconds, m.compute_seconds, m.comm_seconds);
  std::printf("alpha          %.4f\n", m.alpha);
  std::printf("throughput     %.3f Mbit/s\n", m.throughput_bps / 1e6);
}

void print_cell(const CellResult& c) {
  std::printf(
      "n=%" PRIu64 " qber=%.4f latency=%.1fms sessions=%u frames=%u | "
      "alpha=%.4f fer=%.4f rt=%.1f l=%.1f leak=%.0f tput=%.3f Mbit/s "
      "(aggregate %.3f)\n",
      c.cfg.n, c.cfg.qber, c.cfg.latency_ms, c.cfg.sessions, c.cfg.frames,
      c.mean_alpha, c.fer, c.mean_round_trips, c.mean_eq5_l, c.mean_leaked,
      c.mean_throughput_bps / 1e6, c.aggregate_throughput_bps / 1e6);
}

uint16_t parse_host_port(const std::string& spec, std::string& host) {
  auto colon = spec.rfind(':');
  if (colon == std::string::npos)
    throw CLI::ValidationError("address", "expected host:port");
  host = spec.substr(0, colon);
  int port = std::stoi(spec.substr(colon + 1));
  if (port < 1 || port > 65535)
    throw CLI::ValidationError("address", "port out of range");
  return static_cast<uint16_t>(port);
}

int run_tcp_session(Role role, Transport& transport, const PairFile& pf,
                    double qber, ScheduleVariant variant, uint64_t seed) {
  SessionParams params;
  params.session_id = 1;
  params.qber_estimate = qber;
  params.variant = variant;
  params.seed = Seed128{kernels::mix64(seed ^ 0x73657373ull),
                        kernels::mix64(seed ^ 0x64657276ull)};
  BitFrame frame = role == Role::correcting ? pf.noisy : pf.reference;
  Session session(role, std::move(frame), transport, params);
  auto result = session.run();
  print_metrics(result.metrics, result.verified);
  return result.verified ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CASCADE information reconciliation over a binary symmetric "
               "channel: benchmarks, efficiency tables and a two-host mode"};
  app.require_subcommand(1);

  // bench ------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "run loopback sessions and report");
  uint64_t b_n = 1000000;
  double b_qber = 0.01, b_latency = 0.0;
  std::string b_schedule = "original";
  uint32_t b_sessions = 1, b_frames = 100;
  uint64_t b_seed = 1;
  double b_constant = 0.73;
  std::string b_out;
  bench->add_option("--n", b_n, "frame size in bits")->capture_default_str();
  bench->add_option("--qber", b_qber, "channel error rate")->capture_default_str();
  bench->add_option("--schedule", b_schedule, "original | high-eff")
      ->capture_default_str();
  bench->add_option("--latency-ms", b_latency, "injected one-way latency")
      ->capture_default_str();
  bench->add_option("--sessions", b_sessions, "parallel sessions")
      ->capture_default_str();
  bench->add_option("--frames", b_frames, "frames per session")
      ->capture_default_str();
  bench->add_option("--seed", b_seed, "deterministic run seed")
      ->capture_default_str();
  bench->add_option("--first-round-constant", b_constant,
                    "k1 = constant/qber for the original schedule")
      ->capture_default_str();
  bench->add_option("--out", b_out, "directory for frames.csv/cells.csv/json");

  // serve / connect ----------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "reference party, TCP");
  std::string s_listen = "0.0.0.0:7135", s_file;
  double s_constant = 0.73;
  serve->add_option("--listen", s_listen, "host:port to listen on")
      ->capture_default_str();
  serve->add_option("--frame-file", s_file, "pair file; serves the reference frame")
      ->required();
  serve->add_option("--first-round-constant", s_constant, "")->capture_default_str();

  auto* connect = app.add_subcommand("connect", "correcting party, TCP");
  std::string c_peer, c_file, c_schedule = "original";
  double c_qber = -1;
  uint64_t c_seed = 1;
  connect->add_option("--peer", c_peer, "host:port of the reference party")
      ->required();
  connect->add_option("--frame-file", c_file, "pair file; corrects the noisy frame")
      ->required();
  connect->add_option("--qber", c_qber,
                      "estimated error rate (default: from the pair file)");
  connect->add_option("--schedule", c_schedule, "original | high-eff")
      ->capture_default_str();
  connect->add_option("--seed", c_seed, "session seed")->capture_default_str();

  // table --------------------------------------------------------------------
  auto* table = app.add_subcommand("table", "efficiency per qber cell");
  uint32_t t_frames = 100;
  uint64_t t_n = 1000000, t_seed = 1;
  std::string t_schedule = "original";
  double t_constant = 0.73;
  table->add_option("--frames", t_frames, "frames per cell")->capture_default_str();
  table->add_option("--n", t_n, "frame size in bits")->capture_default_str();
  table->add_option("--schedule", t_schedule, "original | high-eff")
      ->capture_default_str();
  table->add_option("--seed", t_seed, "")->capture_default_str();
  table->add_option("--first-round-constant", t_constant, "")
      ->capture_default_str();

  // sweep ----------------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "run a config-driven grid");
  std::string sw_config;
  sweep->add_option("--config", sw_config, "key=value sweep file")->required();

  // perf ----------------------------------------------------------------------
  auto* perf = app.add_subcommand("perf", "secret key rate calculator");
  double p_rir = 0, p_fer = 0, p_alpha = 1, p_qber = 0, p_ie = 0;
  perf->add_option("--r-ir", p_rir, "reconciliation throughput, bits/s")
      ->required();
  perf->add_option("--fer", p_fer, "frame error rate")->capture_default_str();
  perf->add_option("--alpha", p_alpha, "reconciliation efficiency")
      ->capture_default_str();
  perf->add_option("--qber", p_qber, "channel error rate")->capture_default_str();
  perf->add_option("--i-e", p_ie, "eavesdropper information per input bit")
      ->capture_default_str();

  // genframes -------------------------------------------------------------------
  auto* gen = app.add_subcommand("genframes", "write a frame pair file");
  uint64_t g_n = 1000000, g_seed = 0;
  double g_qber = 0.01;
  std::string g_out;
  gen->add_option("--n", g_n, "frame size in bits")->capture_default_str();
  gen->add_option("--qber", g_qber, "flip probability")->capture_default_str();
  gen->add_option("--seed", g_seed, "generator seed (0 = random)")
      ->capture_default_str();
  gen->add_option("--out", g_out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bench) {
      auto variant = variant_from_name(b_schedule);
      if (!variant) throw std::runtime_error("unknown schedule " + b_schedule);
      ExperimentConfig cfg;
      cfg.frame_sizes = {b_n};
      cfg.qbers = {b_qber};
      cfg.latencies_ms = {b_latency};
      cfg.variant = *variant;
      cfg.sessions = b_sessions;
      cfg.frames = b_frames;
      cfg.seed = b_seed;
      cfg.first_round_constant = b_constant;
      cfg.out_dir = b_out;
      auto result = run_experiment(cfg);
      for (const auto& c : result.cells) print_cell(c);
      for (const auto& c : result.cells)
        if (c.aborted > 0) return 2;
      return 0;
    }
    if (*serve) {
      std::string host;
      uint16_t port = parse_host_port(s_listen, host);
      auto pf = read_pair_file(s_file);
      std::printf("listening on %s:%u, frame of %" PRIu64 " bits\n", host.c_str(),
                  port, pf.cfg.n);
      auto transport = TcpTransport::listen_accept(host, port);
      SessionParams params;
      params.first_round_constant = s_constant;
      Session session(Role::reference, pf.reference, *transport, params);
      auto result = session.run();
      print_metrics(result.metrics, result.verified);
      return result.verified ? 0 : 1;
    }
    if (*connect) {
      std::string host;
      uint16_t port = parse_host_port(c_peer, host);
      auto pf = read_pair_file(c_file);
      auto variant = variant_from_name(c_schedule);
      if (!variant) throw std::runtime_error("unknown schedule " + c_schedule);
      double qber = c_qber >= 0 ? c_qber : pf.cfg.qber;
      auto transport = TcpTransport::connect(host, port);
      return run_tcp_session(Role::correcting, *transport, pf, qber, *variant,
                             c_seed);
    }
    if (*table) {
      auto variant = variant_from_name(t_schedule);
      if (!variant) throw std::runtime_error("unknown schedule " + t_schedule);
      auto rows = table_one(t_frames, t_n, *variant, t_seed, t_constant);
      std::printf("%-8s %-10s %-8s %-12s %-10s\n", "qber", "alpha", "fer",
                  "round_trips", "leaked");
      for (const auto& r : rows)
        std::printf("%-8.2f %-10.4f %-8.4f %-12.1f %-10.0f\n", r.qber, r.alpha,
                    r.fer, r.mean_round_trips, r.mean_leaked);
      return 0;
    }
    if (*sweep) {
      auto cfg = parse_sweep_config(sw_config);
      auto result = run_experiment(cfg);
      for (const auto& c : result.cells) print_cell(c);
      if (!cfg.out_dir.empty())
        std::printf("results written to %s\n", cfg.out_dir.c_str());
      for (const auto& c : result.cells)
        if (c.aborted > 0) return 2;
      return 0;
    }
    if (*perf) {
      double i_ab = 1 - binary_entropy(p_qber);
      double rate = performance_rate(p_rir, p_fer, p_alpha, i_ab, p_ie);
      std::printf("I(A:B) per bit  %.9f\n", i_ab);
      std::printf("secret fraction %.9f\n",
                  secret_bits_per_frame(p_fer, p_alpha, i_ab, p_ie));
      std::printf("secret key rate %.3f bits/s\n", rate);
      return 0;
    }
    if (*gen) {
      if (g_seed == 0) g_seed = std::random_device{}();
      ChannelConfig cfg{g_n, g_qber, g_seed};
      auto pairdata = generate_pair(cfg);
      write_pair_file(g_out, cfg, pairdata.reference, pairdata.noisy);
      std::printf("wrote %s: n=%" PRIu64 " qber=%.4f seed=%" PRIu64
                  " (true errors: %zu)\n",
                  g_out.c_str(), g_n, g_qber, g_seed,
                  pairdata.error_positions.size());
      return 0;
    }
  } catch (const ProtocolError& e) {
    std::fprintf(stderr, "protocol corruption: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
