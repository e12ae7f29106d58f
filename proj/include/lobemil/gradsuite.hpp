#pragma once

#include <string>
#include <vector>

#include "lobemil/gradcheck.hpp"

namespace lobemil {

struct GradSuiteRow {
  std::string name;
  int points = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Finite-difference checks over conv2d, batchnorm2d, the GCP layer, both
// losses and the full MIL head, each at `points` random generic
// configurations. Shared by the gradcheck CLI subcommand and the
// acceptance suite.
std::vector<GradSuiteRow> run_grad_suite(int points, double eps, double tol,
                                         uint64_t seed);

}  // namespace lobemil
