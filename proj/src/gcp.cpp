#include "lobemil/gcp.hpp"

#include <cmath>
#include <stdexcept>

namespace lobemil {

ConceptBank make_concept_bank(int64_t p, int64_t d, Rng& rng) {
  if (p < 1 || d < 1)
    throw std::invalid_argument("concept bank needs p >= 1 and d >= 1");
  Tensor concepts = Tensor::zeros({p, d}, /*requires_grad=*/true);
  auto& data = concepts.data();
  // Random unit rows in the positive orthant: instance features arrive
  // through ReLU, so nonnegative concepts start with informative cosines
  // instead of near-orthogonal ones.
  for (int64_t m = 0; m < p; ++m)
    for (int64_t j = 0; j < d; ++j)
      data[size_t(m * d + j)] = std::fabs(rng.normal());
  ConceptBank bank{concepts};
  gcp_renormalize(bank);
  return bank;
}

Tensor gcp_forward(const Tensor& instances, const ConceptBank& bank) {
  if (instances.shape().size() != 2)
    throw std::invalid_argument("gcp_forward: instances must be [k,d], got " +
                                shape_str(instances.shape()));
  int64_t k = instances.dim(0);
  int64_t d = instances.dim(1);
  if (k < 1) throw std::invalid_argument("gcp_forward: empty bag");
  if (d != bank.dim())
    throw std::invalid_argument(
        "gcp_forward: instance dim " + std::to_string(d) +
        " does not match concept dim " + std::to_string(bank.dim()));
  int64_t p = bank.count();

  const auto& inst = instances.data();
  const auto& conc = bank.concepts.data();

  std::vector<double> inst_norm(size_t(k), 0.0);
  for (int64_t i = 0; i < k; ++i) {
    double s = 0.0;
    const double* row = inst.data() + i * d;
    for (int64_t j = 0; j < d; ++j) s += row[j] * row[j];
    inst_norm[size_t(i)] = std::sqrt(s);
  }
  std::vector<double> conc_norm(size_t(p), 0.0);
  for (int64_t m = 0; m < p; ++m) {
    double s = 0.0;
    const double* row = conc.data() + m * d;
    for (int64_t j = 0; j < d; ++j) s += row[j] * row[j];
    conc_norm[size_t(m)] = std::sqrt(s);
  }

  std::vector<double> out(size_t(p), 0.0);
  std::vector<int64_t> argmax(size_t(p), 0);
  std::vector<double> dots(size_t(p), 0.0);
  for (int64_t m = 0; m < p; ++m) {
    const double* wm = conc.data() + m * d;
    double best = 0.0, best_dot = 0.0;
    int64_t best_i = -1;
    for (int64_t i = 0; i < k; ++i) {
      const double* phi = inst.data() + i * d;
      double t = 0.0;
      for (int64_t j = 0; j < d; ++j) t += wm[j] * phi[j];
      double s = t / (conc_norm[size_t(m)] * inst_norm[size_t(i)] + kGcpEps);
      if (best_i < 0 || s > best) {
        best = s;
        best_dot = t;
        best_i = i;
      }
    }
    out[size_t(m)] = best;
    argmax[size_t(m)] = best_i;
    dots[size_t(m)] = best_dot;
  }

  Tensor concepts = bank.concepts;
  return Tensor::make(
      {p}, std::move(out), {instances, concepts},
      [instances, concepts, argmax, dots, inst_norm, conc_norm, d,
       p](TensorImpl& self) mutable {
        const auto& dy = *self.grad;
        const auto& inst = instances.data();
        const auto& conc = concepts.data();
        for (int64_t m = 0; m < p; ++m) {
          double g = dy[size_t(m)];
          if (g == 0.0) continue;
          int64_t i = argmax[size_t(m)];
          const double* wm = conc.data() + m * d;
          const double* phi = inst.data() + i * d;
          double a = conc_norm[size_t(m)];
          double b = inst_norm[size_t(i)];
          double den = a * b + kGcpEps;
          double t = dots[size_t(m)];
          if (concepts.requires_grad()) {
            // d s / d w = phi/den - t*(b/a) * w / den^2; the second term
            // vanishes for a zero concept row.
            double coef = a > 0.0 ? t * b / (a * den * den) : 0.0;
            auto& gw = concepts.mutable_grad();
            for (int64_t j = 0; j < d; ++j)
              gw[size_t(m * d + j)] += g * (phi[j] / den - coef * wm[j]);
          }
          if (instances.requires_grad()) {
            double coef = b > 0.0 ? t * a / (b * den * den) : 0.0;
            auto& gi = instances.mutable_grad();
            for (int64_t j = 0; j < d; ++j)
              gi[size_t(i * d + j)] += g * (wm[j] / den - coef * phi[j]);
          }
        }
      },
      "gcp");
}

std::vector<Tensor> gcp_forward_batch(const std::vector<Tensor>& bags,
                                      const ConceptBank& bank) {
  std::vector<Tensor> out;
  out.reserve(bags.size());
  for (const Tensor& b : bags) out.push_back(gcp_forward(b, bank));
  return out;
}

void gcp_renormalize(ConceptBank& bank) {
  int64_t p = bank.count(), d = bank.dim();
  auto& data = bank.concepts.data();
  for (int64_t m = 0; m < p; ++m) {
    double* row = data.data() + m * d;
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += row[j] * row[j];
    double norm = std::sqrt(s);
    if (norm < kGcpEps) {
      for (int64_t j = 0; j < d; ++j) row[j] = 0.0;
      row[0] = 1.0;
    } else {
      for (int64_t j = 0; j < d; ++j) row[j] /= norm;
    }
  }
}

}  // namespace lobemil
