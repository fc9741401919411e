#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "adpde/cli.hpp"
#include "adpde/error.hpp"
#include "adpde/io.hpp"
#include "doctest.h"

using namespace adpde;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "adpde_cli_test";

struct Run {
  int code;
  std::string err;
};

// Runs the installed binary through the shell with an optional thread cap.
Run shell(const std::string& args, const std::string& threads = "") {
  fs::create_directories(kRoot);
  const fs::path errf = kRoot / "stderr.txt";
  std::string cmd;
  if (!threads.empty()) cmd += "ADPF_THREADS=" + threads + " ";
  cmd += std::string(ADPDE_CLI_PATH) + " " + args + " >/dev/null 2>" + errf.string();
  const int st = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(st));
  return {WEXITSTATUS(st), read_file(errf)};
}

int inproc(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  return rc;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      files[fs::relative(e.path(), dir).string()] = read_file(e.path());
    }
  }
  return files;
}

fs::path fresh(const std::string& name) {
  const fs::path p = kRoot / name;
  fs::remove_all(p);
  return p;
}

std::string s(const fs::path& p) { return p.string(); }

}  // namespace

TEST_CASE("simulate is deterministic") {
  const fs::path a = fresh("sim_a"), b = fresh("sim_b");
  REQUIRE(inproc({"simulate", "--n", "3", "--seed", "9", "--frames", "4", "--out", s(a)}) == 0);
  REQUIRE(inproc({"simulate", "--n", "3", "--seed", "9", "--frames", "4", "--out", s(b)}) == 0);
  auto fa = snapshot(a), fb = snapshot(b);
  CHECK(fa.size() == 3 * 8 + 1);
  fa.erase("manifest.txt");
  fb.erase("manifest.txt");
  CHECK(fa == fb);
  const auto meta = read_kv(a / "sample_0001" / "meta.txt");
  CHECK(meta.at("seed") == "9");
  CHECK(meta.at("index") == "1");
  const auto man = read_kv(a / "manifest.txt");
  CHECK(man.at("seed") == "9");
  CHECK(man.at("version") == kToolVersion);
  CHECK(man.at("command") == "simulate");
}

TEST_CASE("forward reproduces the simulator's noiseless series") {
  const fs::path sim = fresh("fw_sim"), fw = fresh("fw_out");
  REQUIRE(inproc({"simulate", "--n", "1", "--seed", "4", "--frames", "6", "--stochastic=0",
                  "--out", s(sim)}) == 0);
  const fs::path sd = sim / "sample_0000";
  const TimeSeries ts = read_series(sd / "series.adpf");
  write_adpf(sd / "init.adpf", ts.frames.front());
  REQUIRE(inproc({"forward", "--params", s(sd / "params"), "--init", s(sd / "init.adpf"),
                  "--frames", "6", "--out", s(fw)}) == 0);
  CHECK(read_file(fw / "series.adpf") == read_file(sd / "series.adpf"));
  const fs::path report = kRoot / "fw_report.csv";
  REQUIRE(inproc({"metrics", "--pred-series", s(fw / "series.adpf"), "--truth-series",
                  s(sd / "series.adpf"), "--pred", s(sd / "params"), "--truth",
                  s(sd / "params"), "--report", s(report)}) == 0);
  const std::string csv = read_file(report);
  CHECK(csv.rfind("metric,target,value,note\n", 0) == 0);
  CHECK(csv.find("rae,C,0,\n") != std::string::npos);
  CHECK(csv.find("rae,V,0,\n") != std::string::npos);
  CHECK(csv.find("rae,D,0,\n") != std::string::npos);
  CHECK(fs::exists(report.string() + ".manifest.txt"));
}

TEST_CASE("export-plot csv equals the stored frames") {
  const fs::path sim = fresh("ex_sim"), ex = fresh("ex_out");
  REQUIRE(inproc({"simulate", "--n", "1", "--seed", "2", "--frames", "31", "--out", s(sim)}) == 0);
  const fs::path series = sim / "sample_0000" / "series.adpf";
  REQUIRE(inproc({"export-plot", "--series", s(series), "--frames", "0,10,20,30",
                  "--format", "both", "--out", s(ex)}) == 0);
  const TimeSeries ts = read_series(series);
  for (int f : {0, 10, 20, 30}) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%04d", f);
    CHECK(fs::exists(ex / (std::string(stem) + ".pgm")));
    std::istringstream in(read_file(ex / (std::string(stem) + ".csv")));
    std::string line, cell;
    std::size_t i = 0, mismatches = 0;
    while (std::getline(in, line)) {
      std::istringstream cells(line);
      while (std::getline(cells, cell, ',')) {
        mismatches += std::stod(cell) != ts.frames[f][i];
        ++i;
      }
    }
    CHECK(i == ts.grid.size());
    CHECK(mismatches == 0);
  }
  CHECK_FALSE(fs::exists(ex / "frame_0001.csv"));
}

TEST_CASE("invert writes its artifacts") {
  const fs::path sim = fresh("inv_sim"), inv = fresh("inv_out");
  REQUIRE(inproc({"simulate", "--n", "1", "--seed", "5", "--frames", "4", "--out", s(sim)}) == 0);
  const fs::path sd = sim / "sample_0000";
  REQUIRE(inproc({"invert", "--series", s(sd / "series.adpf"), "--truth", s(sd / "params"),
                  "--iters", "3", "--global-iters", "2", "--n-in", "4", "--n-out", "3",
                  "--grad-check=0", "--out", s(inv)}) == 0);
  for (const char* f : {"psi.adpf", "b.adpf", "lambda.adpf", "a.adpf", "sigma.adpf",
                        "meta.txt", "fit_log.csv", "fit_summary.txt", "manifest.txt"}) {
    CHECK(fs::exists(inv / f));
  }
  CHECK(read_file(inv / "fit_log.csv").rfind("iteration,loss,best_loss,grad_norm\n", 0) == 0);
  CHECK_NOTHROW(read_bundle(inv));
}

TEST_CASE("exit codes and error lines") {
  std::string err;
  CHECK(inproc({}, &err) == kExitConfig);
  CHECK(inproc({"bogus"}, &err) == kExitConfig);
  CHECK(err.rfind("error: config:", 0) == 0);
  CHECK(inproc({"simulate", "--out", s(kRoot / "x"), "--nope", "1"}, &err) == kExitConfig);
  CHECK(inproc({"simulate"}, &err) == kExitConfig);
  CHECK(inproc({"simulate", "--out", s(kRoot / "x"), "--n", "abc"}, &err) == kExitConfig);
  CHECK(inproc({"forward", "--params", s(kRoot / "missing"), "--init", "x", "--out",
                s(kRoot / "y")}, &err) == kExitConfig);
  CHECK(std::count(err.begin(), err.end(), '\n') == 1);

  // A fixed substep far above the stability bound is a numerical failure.
  const fs::path sim = fresh("ec_sim");
  REQUIRE(inproc({"simulate", "--n", "1", "--seed", "1", "--frames", "2", "--out", s(sim)}) == 0);
  const fs::path sd = sim / "sample_0000";
  write_adpf(sd / "init.adpf", read_series(sd / "series.adpf").frames.front());
  const Run r = shell("forward --params " + s(sd / "params") + " --init " +
                      s(sd / "init.adpf") + " --substep 5 --dt 5 --frames 2 --out " +
                      s(kRoot / "ec_fw"));
  CHECK(r.code == kExitNumerical);
  CHECK(r.err.rfind("error: numerical:", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  CHECK(shell("--version").code == 0);
  std::ostringstream out, e2;
  CHECK(run_cli({"forward", "--help"}, out, e2) == kExitOk);
  CHECK(out.str().find("--cfl-safety") != std::string::npos);
  CHECK(out.str().find("--anomaly-prob") == std::string::npos);
}

TEST_CASE("config files merge under explicit flags") {
  const fs::path cfg = kRoot / "cfg.txt";
  fs::create_directories(kRoot);
  write_file(cfg, "command=simulate\nseed=7\nn=2\nout=somewhere\n");
  const RunConfig rc = parse_run_config({"simulate", "--config", s(cfg), "--n", "5"});
  CHECK(rc.values.at("seed") == "7");
  CHECK(rc.values.at("n") == "5");
  CHECK(rc.values.at("out") == "somewhere");
  write_file(cfg, "command=forward\n");
  CHECK_THROWS_AS(parse_run_config({"simulate", "--config", s(cfg), "--out", "x"}), ConfigError);
  write_file(cfg, "colour=blue\n");
  CHECK_THROWS_AS(parse_run_config({"simulate", "--config", s(cfg), "--out", "x"}), ConfigError);
}

TEST_CASE("manifest reruns are byte-identical across thread caps") {
  const fs::path a = fresh("det_a"), b = fresh("det_b");
  REQUIRE(shell("simulate --n 4 --seed 21 --frames 5 --out " + s(a), "1").code == 0);
  REQUIRE(shell("simulate --config " + s(a / "manifest.txt") + " --out " + s(b), "4").code == 0);
  auto fa = snapshot(a), fb = snapshot(b);
  CHECK(fa.size() == fb.size());
  fa.erase("manifest.txt");
  fb.erase("manifest.txt");
  CHECK(fa == fb);

  const fs::path sd = a / "sample_0002";
  const fs::path i1 = fresh("det_i1"), i2 = fresh("det_i2");
  const std::string inv = "invert --series " + s(sd / "series.adpf") + " --truth " +
                          s(sd / "params") + " --iters 4 --global-iters 3 --n-in 5 --n-out 4";
  REQUIRE(shell(inv + " --out " + s(i1), "1").code == 0);
  REQUIRE(shell("invert --config " + s(i1 / "manifest.txt") + " --out " + s(i2), "3").code == 0);
  auto ga = snapshot(i1), gb = snapshot(i2);
  ga.erase("manifest.txt");
  gb.erase("manifest.txt");
  CHECK(ga == gb);
}
