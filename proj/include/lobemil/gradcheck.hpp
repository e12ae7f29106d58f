#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lobemil/tensor.hpp"

namespace lobemil {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_location;
  bool finite = true;
  bool pass = false;
};

// Compares reverse-mode gradients of a scalar-valued function against
// central finite differences at `point`. When max_coords > 0 only a random
// subset of coordinates per input is probed (necessary for large inputs).
// Relative error uses max(|analytic|, |numeric|, 1e-6) as denominator.
GradCheckReport gradcheck(
    const std::function<Tensor(std::vector<Tensor>&)>& f,
    std::vector<Tensor> point, double eps = 1e-5, double tol = 1e-4,
    int64_t max_coords = -1, uint64_t probe_seed = 0);

}  // namespace lobemil
