#pragma once

#include <string>
#include <vector>

namespace lobemil {

struct Command {
  std::vector<std::string> argv;  // argv[0] is the executable path
};

// Runs commands with at most `max_parallel` children alive at once.
// Returns each command's exit status (non-zero for signals too).
std::vector<int> run_commands(const std::vector<Command>& commands,
                              int max_parallel);

// Worker parallelism cap: M2MIL_THREADS, else hardware concurrency.
int worker_threads();

// Absolute path of the running executable.
std::string self_exe_path();

}  // namespace lobemil
