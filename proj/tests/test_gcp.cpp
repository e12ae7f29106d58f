#include <doctest.h>

#include <cmath>

#include "lobemil/gcp.hpp"
#include "lobemil/gradcheck.hpp"
#include "lobemil/nn.hpp"

using namespace lobemil;

namespace {

Tensor rows(std::vector<std::vector<double>> data, bool rg = false) {
  int64_t k = int64_t(data.size());
  int64_t d = int64_t(data[0].size());
  std::vector<double> flat;
  for (const auto& r : data) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from_data({k, d}, std::move(flat), rg);
}

// Exhaustive pairwise-cosine max, written independently of gcp_forward.
std::vector<double> gcp_oracle(const Tensor& instances,
                               const Tensor& concepts) {
  int64_t k = instances.dim(0), d = instances.dim(1), p = concepts.dim(0);
  std::vector<double> out(size_t(p), 0.0);
  for (int64_t m = 0; m < p; ++m) {
    double best = 0.0;
    bool first = true;
    for (int64_t i = 0; i < k; ++i) {
      double dot = 0.0, nw = 0.0, ni = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        double w = concepts.data()[size_t(m * d + j)];
        double f = instances.data()[size_t(i * d + j)];
        dot += w * f;
        nw += w * w;
        ni += f * f;
      }
      double s = dot / (std::sqrt(nw) * std::sqrt(ni) + kGcpEps);
      if (first || s > best) {
        best = s;
        first = false;
      }
    }
    out[size_t(m)] = best;
  }
  return out;
}

}  // namespace

TEST_CASE("single instance equal to the single concept scores one") {
  Tensor inst = rows({{0.6, 0.8}});
  ConceptBank bank{rows({{0.6, 0.8}})};
  Tensor phi = gcp_forward(inst, bank);
  CHECK(phi.data()[0] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("concept orthogonal to every instance scores zero") {
  Tensor inst = rows({{1.0, 0.0}, {2.0, 0.0}});
  ConceptBank bank{rows({{0.0, 1.0}})};
  Tensor phi = gcp_forward(inst, bank);
  CHECK(phi.data()[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("hand-computed maxima match") {
  const double s2 = 1.0 / std::sqrt(2.0);
  Tensor inst = rows({{1, 0}, {0, 1}, {s2, s2}});
  ConceptBank bank{rows({{1, 0}, {0, 1}})};
  Tensor phi = gcp_forward(inst, bank);
  CHECK(phi.data()[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(phi.data()[1] == doctest::Approx(1.0).epsilon(1e-7));

  Tensor inst2 = rows({{1, 0}, {0.6, 0.8}});
  ConceptBank up{rows({{0, 1}})};
  Tensor phi2 = gcp_forward(inst2, up);
  CHECK(phi2.data()[0] == doctest::Approx(0.8).epsilon(1e-7));
}

TEST_CASE("gcp equals the brute-force oracle exactly on small draws") {
  Rng rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    int64_t k = 1 + rng.uniform_int(16);
    int64_t p = 1 + rng.uniform_int(16);
    int64_t d = 1 + rng.uniform_int(8);
    Tensor inst = Tensor::zeros({k, d});
    Tensor conc = Tensor::zeros({p, d});
    for (double& v : inst.data()) v = rng.normal();
    for (double& v : conc.data()) v = rng.normal();
    Tensor phi = gcp_forward(inst, ConceptBank{conc});
    std::vector<double> expect = gcp_oracle(inst, conc);
    CHECK(phi.data() == expect);
  }
}

TEST_CASE("permutation invariance is bit-exact") {
  Rng rng(32);
  Tensor inst = Tensor::zeros({6, 4});
  for (double& v : inst.data()) v = rng.normal();
  Tensor conc = Tensor::zeros({3, 4});
  for (double& v : conc.data()) v = rng.normal();
  ConceptBank bank{conc};
  Tensor phi = gcp_forward(inst, bank);

  std::vector<int64_t> perm{5, 3, 0, 4, 2, 1};
  Tensor shuffled = Tensor::zeros({6, 4});
  for (int64_t i = 0; i < 6; ++i)
    for (int64_t j = 0; j < 4; ++j)
      shuffled.data()[size_t(i * 4 + j)] =
          inst.data()[size_t(perm[size_t(i)] * 4 + j)];
  Tensor phi2 = gcp_forward(shuffled, bank);
  CHECK(phi.data() == phi2.data());
}

TEST_CASE("adding an instance never decreases any coordinate") {
  Rng rng(33);
  for (int rep = 0; rep < 50; ++rep) {
    int64_t k = 1 + rng.uniform_int(6);
    Tensor inst = Tensor::zeros({k, 3});
    for (double& v : inst.data()) v = rng.normal();
    Tensor conc = Tensor::zeros({4, 3});
    for (double& v : conc.data()) v = rng.normal();
    ConceptBank bank{conc};
    Tensor base = gcp_forward(inst, bank);

    Tensor bigger = Tensor::zeros({k + 1, 3});
    std::copy(inst.data().begin(), inst.data().end(), bigger.data().begin());
    for (int64_t j = 0; j < 3; ++j)
      bigger.data()[size_t(k * 3 + j)] = rng.normal();
    Tensor more = gcp_forward(bigger, bank);
    for (int64_t m = 0; m < 4; ++m)
      CHECK(more.data()[size_t(m)] >= base.data()[size_t(m)]);
  }
}

TEST_CASE("cosine range stays within [-1, 1]") {
  Rng rng(34);
  Tensor inst = Tensor::zeros({8, 5});
  Tensor conc = Tensor::zeros({8, 5});
  for (double& v : inst.data()) v = rng.normal(0.0, 10.0);
  for (double& v : conc.data()) v = rng.normal(0.0, 10.0);
  Tensor phi = gcp_forward(inst, ConceptBank{conc});
  for (double s : phi.data()) {
    CHECK(s <= 1.0);
    CHECK(s >= -1.0);
  }
}

TEST_CASE("empty bags and dimension mismatches are rejected") {
  ConceptBank bank{rows({{1, 0}})};
  CHECK_THROWS_AS(gcp_forward(rows({{1, 0, 0}}), bank),
                  std::invalid_argument);
  CHECK_THROWS_AS(gcp_forward(Tensor::zeros({1}), bank),
                  std::invalid_argument);
}

TEST_CASE("batched forward equals independent per-bag calls") {
  Rng rng(35);
  std::vector<Tensor> bags;
  for (int64_t k : {2, 5}) {
    Tensor t = Tensor::zeros({k, 4});
    for (double& v : t.data()) v = rng.normal();
    bags.push_back(t);
  }
  Tensor conc = Tensor::zeros({3, 4});
  for (double& v : conc.data()) v = rng.normal();
  ConceptBank bank{conc};
  std::vector<Tensor> batched = gcp_forward_batch(bags, bank);
  for (size_t i = 0; i < bags.size(); ++i)
    CHECK(batched[i].data() == gcp_forward(bags[i], bank).data());
}

TEST_CASE("renormalization maps rows to unit norm with a zero fallback") {
  ConceptBank bank{rows({{3.0, 4.0}, {1.0, 0.0}, {0.0, 0.0}}, true)};
  gcp_renormalize(bank);
  CHECK(bank.concepts.data()[0] == doctest::Approx(0.6));
  CHECK(bank.concepts.data()[1] == doctest::Approx(0.8));
  CHECK(bank.concepts.data()[2] == 1.0);  // unit row unchanged
  CHECK(bank.concepts.data()[3] == 0.0);
  CHECK(bank.concepts.data()[4] == 1.0);  // deterministic fallback
  CHECK(bank.concepts.data()[5] == 0.0);

  // Idempotence.
  std::vector<double> once = bank.concepts.data();
  gcp_renormalize(bank);
  CHECK(bank.concepts.data() == once);
}

TEST_CASE("gradients flow only through the argmax instance") {
  Tensor inst = rows({{1.0, 0.0}, {0.0, 1.0}}, true);
  ConceptBank bank{rows({{1.0, 0.0}}, true)};
  Tensor phi = gcp_forward(inst, bank);
  Tensor loss = sum(phi);
  loss.backward();
  const auto& g = inst.grad();
  // Row 0 is the argmax; row 1 must stay untouched.
  CHECK((g[0] != 0.0 || g[1] != 0.0));
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("argmax ties route the gradient to the lowest index") {
  // Both instances are identical, so the max is tied; the backward pass
  // must deterministically pick instance 0.
  Tensor inst = rows({{0.6, 0.8}, {0.6, 0.8}}, true);
  ConceptBank bank{rows({{1.0, 0.0}}, true)};
  Tensor phi = gcp_forward(inst, bank);
  sum(phi).backward();
  const auto& g = inst.grad();
  CHECK((g[0] != 0.0 || g[1] != 0.0));
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("gcp gradients match finite differences at generic points") {
  Rng rng(36);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor inst = Tensor::zeros({4, 3}, true);
    Tensor conc = Tensor::zeros({2, 3}, true);
    for (double& v : inst.data()) v = rng.normal();
    for (double& v : conc.data()) v = rng.normal();
    std::vector<Tensor> point{inst, conc};
    GradCheckReport r = gradcheck(
        [](std::vector<Tensor>& p) {
          ConceptBank bank{p[1]};
          Tensor phi = gcp_forward(p[0], bank);
          return sum(mul(phi, phi));
        },
        point);
    CHECK(r.pass);
  }
}

TEST_CASE("a zero instance row is handled without NaNs") {
  Tensor inst = rows({{0.0, 0.0}, {-1.0, 0.0}}, true);
  ConceptBank bank{rows({{1.0, 0.0}}, true)};
  Tensor phi = gcp_forward(inst, bank);
  // Zero row scores 0, beating the negative cosine of the other instance.
  CHECK(phi.data()[0] == 0.0);
  sum(phi).backward();
  for (double g : inst.grad()) CHECK(std::isfinite(g));
  for (double g : bank.concepts.grad()) CHECK(std::isfinite(g));
}
