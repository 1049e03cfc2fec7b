#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cascade/channel.hpp"
#include "cascade/harness.hpp"

using namespace cascade;

TEST_CASE("run_cell aggregates a small cell") {
  CellConfig cell{1 << 12, 0.02, 0.0, 1, 6, ScheduleVariant::original};
  auto res = run_cell(cell, 42);
  CHECK(res.rows.size() == 6);
  CHECK(res.corrected + res.failed + res.aborted == 6);
  CHECK(res.aborted == 0);
  CHECK(res.fer <= 1.0 / 6.0 + 1e-12);
  CHECK(res.mean_alpha > 0.5);
  CHECK(res.mean_alpha < 1.1);
  CHECK(res.mean_round_trips > 4);
  CHECK(res.aggregate_throughput_bps > 0);
  CHECK(res.eq5_structural ==
        4 + std::ceil(std::log2(res.schedule.sizes[0])) +
            std::ceil(std::log2(res.schedule.sizes[1])) +
            std::ceil(std::log2(res.schedule.sizes[2])) +
            std::ceil(std::log2(res.schedule.sizes[3])));
  CHECK(res.peak_memory_bytes > 0);
}

TEST_CASE("per-frame seeds make cells reproducible") {
  CellConfig cell{1 << 10, 0.03, 0.0, 1, 4, ScheduleVariant::original};
  auto a = run_cell(cell, 7);
  auto b = run_cell(cell, 7);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].metrics.leaked_bits == b.rows[i].metrics.leaked_bits);
    CHECK(a.rows[i].metrics.round_trips == b.rows[i].metrics.round_trips);
    CHECK(a.rows[i].metrics.flips == b.rows[i].metrics.flips);
  }
  auto c = run_cell(cell, 8);
  bool any_differs = false;
  for (size_t i = 0; i < a.rows.size(); ++i)
    any_differs |= a.rows[i].metrics.flips != c.rows[i].metrics.flips;
  CHECK(any_differs);
}

TEST_CASE("memory accounting grows linearly with the frame size") {
  CellConfig small{1 << 16, 0.01, 0.0, 1, 2, ScheduleVariant::original};
  CellConfig big{1 << 18, 0.01, 0.0, 1, 2, ScheduleVariant::original};
  auto a = run_cell(small, 5);
  auto b = run_cell(big, 5);
  double ratio = static_cast<double>(b.peak_memory_bytes) /
                 static_cast<double>(a.peak_memory_bytes);
  CAPTURE(a.peak_memory_bytes);
  CAPTURE(b.peak_memory_bytes);
  CHECK(ratio > 2.0);  // 4x the bits
  CHECK(ratio < 8.0);
}

TEST_CASE("experiment outputs land in the results directory") {
  auto dir = std::filesystem::temp_directory_path() / "cascade_exp_test";
  std::filesystem::remove_all(dir);

  ExperimentConfig cfg;
  cfg.frame_sizes = {1 << 10};
  cfg.qbers = {0.02, 0.05};
  cfg.latencies_ms = {0.0};
  cfg.frames = 3;
  cfg.out_dir = dir.string();
  auto result = run_experiment(cfg);
  CHECK(result.cells.size() == 2);

  REQUIRE(std::filesystem::exists(dir / "frames.csv"));
  REQUIRE(std::filesystem::exists(dir / "cells.csv"));
  REQUIRE(std::filesystem::exists(dir / "results.json"));

  std::ifstream frames(dir / "frames.csv");
  std::string line;
  int lines = 0;
  while (std::getline(frames, line)) ++lines;
  CHECK(lines == 1 + 2 * 3);  // header + 2 cells x 3 frames

  std::ifstream json(dir / "results.json");
  std::stringstream ss;
  ss << json.rdbuf();
  CHECK(ss.str().find("\"mean_alpha\"") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep config parsing") {
  auto dir = std::filesystem::temp_directory_path() / "cascade_sweep_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "sweep.conf";
  {
    std::ofstream f(path);
    f << "# comment line\n";
    f << "n = 1024, 2048\n";
    f << "qber = 0.01,0.05\n";
    f << "latency_ms = 0, 1.5\n";
    f << "sessions = 2\n";
    f << "frames = 7\n";
    f << "schedule = high-eff\n";
    f << "seed = 99  # trailing comment\n";
    f << "first_round_constant = 0.8\n";
  }
  auto cfg = parse_sweep_config(path);
  CHECK(cfg.frame_sizes == std::vector<uint64_t>{1024, 2048});
  CHECK(cfg.qbers == std::vector<double>{0.01, 0.05});
  CHECK(cfg.latencies_ms == std::vector<double>{0, 1.5});
  CHECK(cfg.sessions == 2);
  CHECK(cfg.frames == 7);
  CHECK(cfg.variant == ScheduleVariant::high_efficiency);
  CHECK(cfg.seed == 99);
  CHECK(cfg.first_round_constant == 0.8);

  {
    std::ofstream f(path);
    f << "nonsense line\n";
  }
  CHECK_THROWS(parse_sweep_config(path));
  {
    std::ofstream f(path);
    f << "schedule = wat\n";
  }
  CHECK_THROWS(parse_sweep_config(path));
  std::filesystem::remove_all(dir);
}

namespace {

int run_cmd(const std::string& cmd) { return std::system(cmd.c_str()); }

}  // namespace

TEST_CASE("cli two-process tcp session corrects a frame pair") {
  const char* cli = std::getenv("CASCADE_CLI");
  if (cli == nullptr) {
    MESSAGE("CASCADE_CLI not set (run under ctest); skipping");
    return;
  }

  auto dir = std::filesystem::temp_directory_path() / "cascade_cli_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  auto pairfile = (dir / "pair.qbsc").string();
  auto servelog = (dir / "serve.log").string();

  std::string exe(cli);
  REQUIRE(run_cmd(exe + " genframes --n 20000 --qber 0.02 --seed 5 --out " +
                  pairfile) == 0);

  uint16_t port = static_cast<uint16_t>(23000 + (::getpid() % 17000));
  pid_t server = fork();
  REQUIRE(server >= 0);
  if (server == 0) {
    std::string cmd = exe + " serve --listen 127.0.0.1:" + std::to_string(port) +
                      " --frame-file " + pairfile + " > " + servelog + " 2>&1";
    _exit(std::system(cmd.c_str()) == 0 ? 0 : 1);
  }

  int rc = -1;
  for (int attempt = 0; attempt < 50; ++attempt) {
    rc = run_cmd(exe + " connect --peer 127.0.0.1:" + std::to_string(port) +
                 " --frame-file " + pairfile + " > " + (dir / "connect.log").string() +
                 " 2>&1");
    if (rc == 0) break;
    usleep(100000);
  }
  CHECK(rc == 0);

  int status = 0;
  REQUIRE(waitpid(server, &status, 0) == server);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);

  std::ifstream log(dir / "connect.log");
  std::stringstream ss;
  ss << log.rdbuf();
  CHECK(ss.str().find("corrected") != std::string::npos);
  std::filesystem::remove_all(dir);
}
