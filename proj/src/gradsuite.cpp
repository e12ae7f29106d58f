#include "lobemil/gradsuite.hpp"

#include <memory>

#include "lobemil/gcp.hpp"
#include "lobemil/losses.hpp"
#include "lobemil/milhead.hpp"
#include "lobemil/nn.hpp"

namespace lobemil {

namespace {

Tensor gaussian(Shape shape, Rng& rng, double sigma = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (double& v : t.data()) v = rng.normal(0.0, sigma);
  return t;
}

// Random linear probe: checking sum(y * r) for a fixed random r verifies
// the vector-Jacobian product against finite differences without running
// into scalarizations the op is invariant under (batchnorm normalizes away
// mean(y^2), for example).
Tensor make_probe(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

Tensor probe(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

GradSuiteRow check_many(
    const std::string& name, int points, double eps, double tol,
    uint64_t seed,
    const std::function<GradCheckReport(uint64_t)>& one_point) {
  GradSuiteRow row;
  row.name = name;
  row.points = points;
  row.pass = true;
  for (int p = 0; p < points; ++p) {
    GradCheckReport r = one_point(derive_seed({seed, uint64_t(p)}));
    row.max_rel_err = std::max(row.max_rel_err, r.max_rel_err);
    row.pass = row.pass && r.pass;
  }
  return row;
}

}  // namespace

std::vector<GradSuiteRow> run_grad_suite(int points, double eps, double tol,
                                         uint64_t seed) {
  std::vector<GradSuiteRow> rows;

  rows.push_back(check_many(
      "conv2d(3x3,pad1)", points, eps, tol, derive_seed({seed, 1}),
      [&](uint64_t s) {
        Rng rng(s);
        std::vector<Tensor> point{gaussian({2, 2, 4, 4}, rng),
                                  gaussian({3, 2, 3, 3}, rng),
                                  gaussian({3}, rng)};
        Tensor r = make_probe({2, 3, 4, 4}, rng);
        return gradcheck(
            [r](std::vector<Tensor>& p) {
              return probe(conv2d(p[0], p[1], p[2], 1), r);
            },
            point, eps, tol);
      }));

  rows.push_back(check_many(
      "conv2d(1x1,pad0)", points, eps, tol, derive_seed({seed, 2}),
      [&](uint64_t s) {
        Rng rng(s);
        std::vector<Tensor> point{gaussian({2, 3, 4, 4}, rng),
                                  gaussian({2, 3, 1, 1}, rng),
                                  gaussian({2}, rng)};
        Tensor r = make_probe({2, 2, 4, 4}, rng);
        return gradcheck(
            [r](std::vector<Tensor>& p) {
              return probe(conv2d(p[0], p[1], p[2], 0), r);
            },
            point, eps, tol);
      }));

  rows.push_back(check_many(
      "batchnorm2d(train)", points, eps, tol, derive_seed({seed, 3}),
      [&](uint64_t s) {
        Rng rng(s);
        std::vector<Tensor> point{gaussian({3, 2, 4, 4}, rng),
                                  gaussian({2}, rng), gaussian({2}, rng)};
        auto state = std::make_shared<BatchNormState>();
        state->running_mean = Tensor::zeros({2});
        state->running_var = Tensor::full({2}, 1.0);
        Tensor r = make_probe({3, 2, 4, 4}, rng);
        return gradcheck(
            [state, r](std::vector<Tensor>& p) {
              return probe(
                  batchnorm2d(p[0], p[1], p[2], *state, /*training=*/true),
                  r);
            },
            point, eps, tol);
      }));

  rows.push_back(check_many(
      "gcp", points, eps, tol, derive_seed({seed, 4}),
      [&](uint64_t s) {
        Rng rng(s);
        int64_t k = 2 + rng.uniform_int(6);
        int64_t p = 1 + rng.uniform_int(6);
        int64_t d = 2 + rng.uniform_int(6);
        std::vector<Tensor> point{gaussian({k, d}, rng),
                                  gaussian({p, d}, rng)};
        Tensor r = make_probe({p}, rng);
        return gradcheck(
            [r](std::vector<Tensor>& pt) {
              ConceptBank bank{pt[1]};
              return probe(gcp_forward(pt[0], bank), r);
            },
            point, eps, tol);
      }));

  rows.push_back(check_many(
      "mil_loss", points, eps, tol, derive_seed({seed, 5}),
      [&](uint64_t s) {
        Rng rng(s);
        int label = int(rng.uniform_int(2));
        std::vector<Tensor> point{gaussian({2}, rng)};
        return gradcheck(
            [label](std::vector<Tensor>& p) {
              return mil_loss(p[0], label);
            },
            point, eps, tol);
      }));

  rows.push_back(check_many(
      "seg_loss", points, eps, tol, derive_seed({seed, 6}),
      [&](uint64_t s) {
        Rng rng(s);
        int64_t n = 2, c = 3, sz = 4;
        auto labels = std::make_shared<std::vector<uint8_t>>(size_t(sz * sz));
        for (auto& l : *labels) l = uint8_t(rng.uniform_int(c));
        std::vector<Tensor> point{gaussian({n, c, sz, sz}, rng)};
        return gradcheck(
            [labels](std::vector<Tensor>& p) {
              // Second patch has no mask and must receive zero gradient.
              std::vector<const uint8_t*> masks{labels->data(), nullptr};
              return seg_loss(p[0], masks);
            },
            point, eps, tol);
      }));

  rows.push_back(check_many(
      "mil_head", points, eps, tol, derive_seed({seed, 7}),
      [&](uint64_t s) {
        Rng rng(s);
        ParamStore params;
        HeadConfig cfg;
        auto head = std::make_shared<HeadParams>(init_head(params, cfg, rng));
        // Perturb concepts off their unit norms for a generic point.
        for (double& v : head->embed_bank.concepts.data())
          v += rng.normal(0.0, 0.05);
        for (double& v : head->image_bank.concepts.data())
          v += rng.normal(0.0, 0.05);
        int label = int(rng.uniform_int(2));
        std::vector<Tensor> point{gaussian({2, cfg.instance_dim, 2, 2}, rng),
                                  head->embed_bank.concepts,
                                  head->embed_map_w,
                                  head->image_bank.concepts,
                                  head->image_map_w,
                                  head->cls_w};
        return gradcheck(
            [head, label](std::vector<Tensor>& p) {
              Tensor embeddings = embed_bag(p[0], *head);
              BagPrediction pred = classify_bag(embeddings, *head);
              return mil_loss(pred.logits, label);
            },
            point, eps, tol, /*max_coords=*/40, derive_seed({s, 1}));
      }));

  return rows;
}

}  // namespace lobemil
