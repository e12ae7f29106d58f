#include "lobemil/runtime.hpp"

#include <unistd.h>

#include <cstdio>
#include <cstdlib>

namespace lobemil {

void init_runtime(int argc, char** argv) {
  (void)argc;
  bool changed = false;
  if (!std::getenv("OPENBLAS_NUM_THREADS")) {
    setenv("OPENBLAS_NUM_THREADS", "1", 1);
    changed = true;
  }
  if (!std::getenv("OPENBLAS_CORETYPE")) {
    const char* core = nullptr;
    if (__builtin_cpu_supports("avx512f"))
      core = "SkylakeX";
    else if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
      core = "Haswell";
    if (core) {
      setenv("OPENBLAS_CORETYPE", core, 1);
      changed = true;
    }
  }
  if (changed && argv) {
    execv("/proc/self/exe", argv);
    // If the re-exec fails we continue with whatever kernel OpenBLAS chose.
    std::perror("init_runtime: execv");
  }
}

}  // namespace lobemil
