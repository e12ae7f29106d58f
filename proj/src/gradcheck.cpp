#include "lobemil/gradcheck.hpp"

#include <cmath>

namespace lobemil {

GradCheckReport gradcheck(
    const std::function<Tensor(std::vector<Tensor>&)>& f,
    std::vector<Tensor> point, double eps, double tol, int64_t max_coords,
    uint64_t probe_seed) {
  GradCheckReport report;

  // Analytic pass.
  for (Tensor& t : point) t.zero_grad();
  Tensor loss = f(point);
  if (loss.numel() != 1)
    throw std::invalid_argument("gradcheck: function must be scalar-valued");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (Tensor& t : point) {
    if (t.requires_grad() && t.has_grad())
      analytic.push_back(t.grad());
    else
      analytic.emplace_back(size_t(t.numel()), 0.0);
  }

  Rng rng(derive_seed({probe_seed, 0x67726164ULL}));
  NoGradGuard no_grad;
  for (size_t ti = 0; ti < point.size(); ++ti) {
    Tensor& t = point[ti];
    if (!t.requires_grad()) continue;
    int64_t n = t.numel();
    std::vector<int64_t> coords;
    if (max_coords > 0 && n > max_coords) {
      // Sample distinct coordinates.
      std::vector<int64_t> all(size_t(n), 0);
      for (int64_t i = 0; i < n; ++i) all[size_t(i)] = i;
      rng.shuffle(all);
      coords.assign(all.begin(), all.begin() + max_coords);
    } else {
      coords.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) coords[size_t(i)] = i;
    }
    for (int64_t idx : coords) {
      double saved = t.data()[size_t(idx)];
      t.data()[size_t(idx)] = saved + eps;
      double f_plus = f(point).item();
      t.data()[size_t(idx)] = saved - eps;
      double f_minus = f(point).item();
      t.data()[size_t(idx)] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        report.finite = false;
        report.worst_location = "input " + std::to_string(ti) + " coord " +
                                std::to_string(idx) + ": non-finite probe";
        report.pass = false;
        return report;
      }
      double numeric = (f_plus - f_minus) / (2.0 * eps);
      double a = analytic[ti][size_t(idx)];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_location =
            "input " + std::to_string(ti) + " coord " + std::to_string(idx);
      }
    }
  }
  report.pass = report.finite && report.max_rel_err <= tol;
  return report;
}

}  // namespace lobemil
