#include "lobemil/subprocess.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <map>
#include <stdexcept>
#include <thread>

namespace lobemil {

int worker_threads() {
  if (const char* env = std::getenv("M2MIL_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

std::string self_exe_path() {
  char buf[4096];
  ssize_t n = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) throw std::runtime_error("cannot resolve /proc/self/exe");
  buf[n] = '\0';
  return std::string(buf);
}

std::vector<int> run_commands(const std::vector<Command>& commands,
                              int max_parallel) {
  std::vector<int> status(commands.size(), -1);
  std::map<pid_t, size_t> running;
  size_t next = 0;

  auto reap_one = [&running, &status]() {
    int wstatus = 0;
    pid_t pid = waitpid(-1, &wstatus, 0);
    if (pid <= 0) throw std::runtime_error("waitpid failed");
    auto it = running.find(pid);
    if (it == running.end()) return;
    status[it->second] =
        WIFEXITED(wstatus) ? WEXITSTATUS(wstatus) : 128 + WTERMSIG(wstatus);
    running.erase(it);
  };

  while (next < commands.size() || !running.empty()) {
    while (next < commands.size() && int(running.size()) < max_parallel) {
      const Command& cmd = commands[next];
      std::vector<char*> argv;
      for (const std::string& a : cmd.argv)
        argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      pid_t pid = fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        execv(argv[0], argv.data());
        _exit(127);
      }
      running.emplace(pid, next);
      ++next;
    }
    if (!running.empty()) reap_one();
  }
  return status;
}

}  // namespace lobemil
