#pragma once

namespace lobemil {

// Call first thing in main(). OpenBLAS picks its kernel and thread count in
// a library constructor that runs before main, so when the environment
// needs fixing (one deterministic thread; a SIMD kernel matching the host
// when the library's cpuid detection falls back to a generic target, as
// happens in VMs that mask the CPU model) the process re-execs itself once
// with the corrected environment. Explicit OPENBLAS_* variables win and
// suppress the re-exec.
void init_runtime(int argc, char** argv);

}  // namespace lobemil
