// Drives the CLI end to end at micro scale: gen -> train -> eval -> report,
// plus exit-code and determinism contracts.

#include <cstdio>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "lobemil/runtime.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
  if (!ok) {
    std::cerr << "FAIL: " << what << "\n";
    ++failures;
  }
}

int run(const std::string& cmd) {
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  lobemil::init_runtime(argc, argv);
  if (argc < 2) {
    std::cerr << "usage: cli_integration <path-to-lobemil>\n";
    return 2;
  }
  std::string cli = argv[1];
  fs::path work = fs::temp_directory_path() / "lobemil_cli_test";
  fs::remove_all(work);
  fs::create_directories(work);
  std::string data = (work / "data").string();

  // gen: basic invocation, determinism, refusal and usage errors.
  expect(run(cli + " gen --root " + data +
             " --cases 10 --patients 5 --seed 3 --mask-frac 0.3 "
             "--severe-prob 0.35 > /dev/null") == 0,
         "gen succeeds");
  expect(fs::exists(fs::path(data) / "manifest.json"), "manifest written");
  expect(run(cli + " gen --root " + data + " --cases 10 2> /dev/null") == 3,
         "gen refuses a non-empty root without --force");
  expect(run(cli + " gen --root " + (work / "d2").string() +
             " --cases 0 2> /dev/null") == 2,
         "gen rejects --cases 0 as usage error");

  std::string data2 = (work / "data_again").string();
  expect(run(cli + " gen --root " + data2 +
             " --cases 10 --patients 5 --seed 3 --mask-frac 0.3 "
             "--severe-prob 0.35 > /dev/null") == 0,
         "second gen succeeds");
  expect(slurp(fs::path(data) / "manifest.json") ==
             slurp(fs::path(data2) / "manifest.json"),
         "same flags give byte-identical manifests");
  expect(slurp(fs::path(data) / "cases" / "case_000.vol") ==
             slurp(fs::path(data2) / "cases" / "case_000.vol"),
         "same flags give byte-identical volumes");

  // train on a micro profile.
  std::string out = (work / "train").string();
  std::string train_flags =
      " train --data " + data + " --out " + out +
      " --profile desk --epochs 2 --bag-size 6 --folds 5 --seed 11 "
      "--threads 2";
  expect(run(cli + train_flags + " > /dev/null") == 0, "train succeeds");
  expect(fs::exists(fs::path(out) / "config.json"), "config snapshot");
  expect(fs::exists(fs::path(out) / "folds.json"), "fold plan");
  for (int f = 0; f < 5; ++f) {
    expect(fs::exists(fs::path(out) / ("fold_" + std::to_string(f)) /
                      "checkpoint.bin"),
           "checkpoint for fold " + std::to_string(f));
    expect(fs::exists(fs::path(out) / ("fold_" + std::to_string(f)) /
                      "log.jsonl"),
           "log for fold " + std::to_string(f));
  }

  // train against a missing dataset: distinct exit code.
  expect(run(cli + " train --data " + (work / "missing").string() +
             " --out " + (work / "x").string() + " 2> /dev/null") == 3,
         "train on missing dataset exits 3");

  // eval and report.
  std::string evaldir = (work / "eval").string();
  expect(run(cli + " eval --data " + data + " --train-dir " + out +
             " --out " + evaldir + " --eval-draws 2 > /dev/null") == 0,
         "eval succeeds");
  expect(fs::exists(fs::path(evaldir) / "report.json"), "report.json");
  expect(fs::exists(fs::path(evaldir) / "report.csv"), "report.csv");
  expect(fs::exists(fs::path(evaldir) / "margins_fold_0.csv"),
         "margins csv");
  expect(run(cli + " eval --data " + data + " --train-dir " +
             (work / "nope").string() + " --out " + (work / "e2").string() +
             " 2> /dev/null") == 4,
         "eval without checkpoints exits 4");
  expect(run(cli + " report --in " + evaldir + " --out " +
             (work / "summary.csv").string() + " > /dev/null") == 0,
         "report succeeds");
  expect(fs::exists(work / "summary.csv"), "summary.csv");

  // sweep: a 1x2 grid at micro scale, sequential cells.
  std::string sweepdir = (work / "sweep").string();
  expect(run(cli + " sweep --data " + data + " --out " + sweepdir +
             " --profile desk --epochs 1 --bag-size 4 --folds 5 --seed 11" +
             " --lambda-grid 0.01 --lr-grid 0.1,0.01 --threads 2 "
             "> /dev/null") == 0,
         "sweep succeeds");
  expect(fs::exists(fs::path(sweepdir) / "grid.csv"), "sweep grid.csv");
  int cells = 0;
  for (const auto& e : fs::directory_iterator(sweepdir))
    if (e.is_directory() && e.path().filename().string().rfind("cell_", 0) ==
                                0)
      ++cells;
  expect(cells == 2, "sweep produced two cells");

  // gradcheck exits zero and prints a table.
  expect(run(cli + " gradcheck --points 2 > /dev/null") == 0,
         "gradcheck passes");

  if (failures == 0) {
    std::printf("cli_integration: all checks passed\n");
    fs::remove_all(work);
    return 0;
  }
  std::printf("cli_integration: %d failures (work dir kept: %s)\n", failures,
              work.string().c_str());
  return 1;
}
