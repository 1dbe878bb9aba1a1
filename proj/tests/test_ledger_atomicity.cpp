// Kills a running CLI once its manifest exists and checks that no result.json
// was left behind; then checks the CLI exit codes.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <thread>

#include "chemolab/harness.hpp"

namespace fs = std::filesystem;
using chemo::harness::json;

namespace {

fs::path prepare(const std::string& name, const json& cfg) {
  const fs::path dir = fs::temp_directory_path() / ("chemolab_test_ledger_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << cfg.dump(2);
  return dir;
}

json long_config() {
  return json::parse(R"({
    "schema_version": 1,
    "domain": {"dim": 1, "lengths": [1.0], "cells": [256]},
    "coefficients": {"chi": 1.0, "mu": 1.0, "nu": 1.0, "a": 2.0, "b": 1.0},
    "initial": {"kind": "lognormal", "sigma": 0.5},
    "step": {"dt_max": 0.0001, "dt_init": 0.0001},
    "monitor": {"row_spacing": 1},
    "time": {"start": 0.0, "end": 1000.0}
  })");
}

pid_t spawn(const std::vector<std::string>& args) {
  const pid_t pid = fork();
  if (pid == 0) {
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const int devnull = ::open("/dev/null", O_WRONLY);
    if (devnull >= 0) {
      dup2(devnull, 1);
      dup2(devnull, 2);
    }
    execv(argv[0], argv.data());
    _exit(127);
  }
  return pid;
}

int run_cli(const std::vector<std::string>& args) {
  const pid_t pid = spawn(args);
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("killed run leaves a manifest and no result") {
  const fs::path dir = prepare("kill", long_config());
  const fs::path out = dir / "out";
  const pid_t pid = spawn({CHEMOLAB_CLI, "simulate", "--config", (dir / "config.json").string(), "--out", out.string()});
  REQUIRE(pid > 0);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(60);
  while (!fs::exists(out / "manifest.json") && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  REQUIRE(fs::exists(out / "manifest.json"));
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  CHECK(WIFSIGNALED(status));
  CHECK_FALSE(fs::exists(out / "result.json"));
  // The manifest itself is complete JSON.
  std::ifstream in(out / "manifest.json");
  CHECK(json::parse(in).is_object());
}

TEST_CASE("CLI exit codes") {
  json ok = long_config();
  ok["domain"]["cells"] = {16};
  ok["step"] = json::object();
  ok["time"]["end"] = 10.0;  // long enough for the tail bounds to settle
  const fs::path d1 = prepare("ok", ok);
  CHECK(run_cli({CHEMOLAB_CLI, "simulate", "--config", (d1 / "config.json").string(), "--out", (d1 / "o").string()}) == 0);
  CHECK(fs::exists(d1 / "o" / "result.json"));
  CHECK(run_cli({CHEMOLAB_CLI, "emit-plotdata", "envelope", "--out", (d1 / "o").string()}) == 0);
  CHECK(run_cli({CHEMOLAB_CLI, "emit-plotdata", "contour", "--out", (d1 / "o").string()}) == 2);
  CHECK(run_cli({CHEMOLAB_CLI, "check-thresholds", "--config", (d1 / "config.json").string(), "--out",
                 (d1 / "t").string(), "--seed", "3", "--parallelism", "2"}) == 0);

  json bad = ok;
  bad["domain"]["cells"] = {2};
  const fs::path d2 = prepare("bad", bad);
  CHECK(run_cli({CHEMOLAB_CLI, "simulate", "--config", (d2 / "config.json").string(), "--out", (d2 / "o").string()}) == 2);
  CHECK(run_cli({CHEMOLAB_CLI, "simulate", "--bogus"}) == 2);
  CHECK(run_cli({CHEMOLAB_CLI, "simulate", "--config", (d2 / "missing.json").string()}) == 2);

  json fails = ok;
  fails["step"] = {{"positivity_floor", 50.0}};
  const fs::path d3 = prepare("fails", fails);
  CHECK(run_cli({CHEMOLAB_CLI, "simulate", "--config", (d3 / "config.json").string(), "--out", (d3 / "o").string()}) == 3);

  json verdict = ok;
  verdict["coefficients"]["chi"] = 4.0;
  const fs::path d4 = prepare("verdict", verdict);
  CHECK(run_cli({CHEMOLAB_CLI, "check-thresholds", "--config", (d4 / "config.json").string(), "--out",
                 (d4 / "o").string()}) == 4);
}

TEST_CASE("CLI seed override changes the initial data") {
  json cfg = long_config();
  cfg["domain"]["cells"] = {16};
  cfg["step"] = json::object();
  cfg["time"]["end"] = 0.2;
  const fs::path d = prepare("seed", cfg);
  const std::string c = (d / "config.json").string();
  run_cli({CHEMOLAB_CLI, "simulate", "--config", c, "--out", (d / "a").string(), "--seed", "1"});
  run_cli({CHEMOLAB_CLI, "simulate", "--config", c, "--out", (d / "b").string(), "--seed", "1"});
  run_cli({CHEMOLAB_CLI, "simulate", "--config", c, "--out", (d / "c").string(), "--seed", "2"});
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(d / "a" / "diagnostics.csv") == slurp(d / "b" / "diagnostics.csv"));
  CHECK(slurp(d / "a" / "diagnostics.csv") != slurp(d / "c" / "diagnostics.csv"));
}
