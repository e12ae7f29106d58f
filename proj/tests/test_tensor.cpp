#include <doctest.h>

#include <cmath>

#include "lobemil/gradcheck.hpp"
#include "lobemil/nn.hpp"

using namespace lobemil;

namespace {

Tensor randn(Shape shape, Rng& rng, bool rg = true) {
  Tensor t = Tensor::zeros(std::move(shape), rg);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// Reference convolution: six nested loops, no shortcuts.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w,
                                const Tensor& b, int64_t pad) {
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
  int64_t k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int64_t oh = h + 2 * pad - kh + 1, ow = ww + 2 * pad - kw + 1;
  std::vector<double> out(size_t(n * k * oh * ow), 0.0);
  for (int64_t img = 0; img < n; ++img)
    for (int64_t ko = 0; ko < k; ++ko)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = b.data()[size_t(ko)];
          for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t iy = oy + ky - pad, ix = ox + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                acc += w.data()[size_t(((ko * c + ci) * kh + ky) * kw + kx)] *
                       x.data()[size_t(((img * c + ci) * h + iy) * ww + ix)];
              }
          out[size_t(((img * k + ko) * oh + oy) * ow + ox)] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d zero input gives bias everywhere") {
  Rng rng(1);
  Tensor x = Tensor::zeros({1, 1, 3, 3});
  Tensor w = randn({2, 1, 3, 3}, rng, false);
  Tensor b = Tensor::from_data({2}, {0.25, -1.5});
  Tensor y = conv2d(x, w, b, 1);
  for (int64_t q = 0; q < 9; ++q) {
    CHECK(y.data()[size_t(q)] == 0.25);
    CHECK(y.data()[size_t(9 + q)] == -1.5);
  }
}

TEST_CASE("conv2d identity kernel preserves the input") {
  Rng rng(2);
  Tensor x = randn({1, 1, 5, 5}, rng, false);
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  w.data()[4] = 1.0;  // center tap
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1);
  for (size_t i = 0; i < x.data().size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("conv2d all-ones kernel on 2x2 input sums padded windows") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1);
  for (double v : y.data()) CHECK(v == doctest::Approx(10.0));
}

TEST_CASE("conv2d matches the nested-loop oracle on random shapes") {
  Rng rng(3);
  for (auto [n, c, k, h, w] :
       std::vector<std::array<int64_t, 5>>{{1, 1, 1, 2, 2},
                                           {2, 3, 4, 5, 6},
                                           {2, 4, 8, 8, 8}}) {
    Tensor x = randn({n, c, h, w}, rng, false);
    Tensor wt = randn({k, c, 3, 3}, rng, false);
    Tensor b = randn({k}, rng, false);
    Tensor y = conv2d(x, wt, b, 1);
    std::vector<double> expect = conv_oracle(x, wt, b, 1);
    REQUIRE(y.data().size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-9));
  }
}

TEST_CASE("conv2d rejects mismatched shapes with a diagnostic") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor w = Tensor::zeros({3, 5, 3, 3});
  Tensor b = Tensor::zeros({3});
  CHECK_THROWS_WITH_AS(conv2d(x, w, b, 1),
                       doctest::Contains("[1,2,4,4]"),
                       std::invalid_argument);
}

TEST_CASE("batchnorm2d constant channel collapses to beta in train mode") {
  Tensor x = Tensor::full({2, 1, 2, 2}, 3.7);
  Tensor gamma = Tensor::full({1}, 1.0);
  Tensor beta = Tensor::full({1}, -0.5);
  BatchNormState state{Tensor::zeros({1}), Tensor::full({1}, 1.0)};
  Tensor y = batchnorm2d(x, gamma, beta, state, true);
  for (double v : y.data()) CHECK(v == doctest::Approx(-0.5).epsilon(1e-6));
}

TEST_CASE("batchnorm2d matches a scalar oracle on a two-sample batch") {
  Tensor x = Tensor::from_data({2, 2, 1, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor gamma = Tensor::from_data({2}, {1.5, 0.5});
  Tensor beta = Tensor::from_data({2}, {0.1, -0.2});
  BatchNormState state{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
  Tensor y = batchnorm2d(x, gamma, beta, state, true);

  // Channel 0 sees {1,2,5,6}; channel 1 sees {3,4,7,8}.
  auto norm = [](double v, double mu, double var, double g, double b) {
    return g * (v - mu) / std::sqrt(var + 1e-5) + b;
  };
  double m0 = 3.5, v0 = 4.25, m1 = 5.5, v1 = 4.25;
  std::vector<double> expect{
      norm(1, m0, v0, 1.5, 0.1), norm(2, m0, v0, 1.5, 0.1),
      norm(3, m1, v1, 0.5, -0.2), norm(4, m1, v1, 0.5, -0.2),
      norm(5, m0, v0, 1.5, 0.1), norm(6, m0, v0, 1.5, 0.1),
      norm(7, m1, v1, 0.5, -0.2), norm(8, m1, v1, 0.5, -0.2)};
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-6));

  // Running stats: momentum 0.1, unbiased variance (n-1 = 3).
  CHECK(state.running_mean.data()[0] == doctest::Approx(0.1 * 3.5));
  CHECK(state.running_var.data()[0] ==
        doctest::Approx(0.9 * 1.0 + 0.1 * (4.25 * 4.0 / 3.0)));
}

TEST_CASE("batchnorm2d eval mode uses running stats") {
  Tensor x = Tensor::from_data({1, 1, 1, 2}, {2.0, 4.0});
  Tensor gamma = Tensor::full({1}, 1.0);
  Tensor beta = Tensor::zeros({1});
  BatchNormState state{Tensor::full({1}, 2.0), Tensor::full({1}, 4.0)};
  Tensor y = batchnorm2d(x, gamma, beta, state, false);
  CHECK(y.data()[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(y.data()[1] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));
}

TEST_CASE("relu, maxpool2, upsample2, softmax basics") {
  Tensor x = Tensor::from_data({4}, {-1.0, 2.0, 0.0, -3.0});
  Tensor y = relu(x);
  CHECK(y.data() == std::vector<double>{0.0, 2.0, 0.0, 0.0});

  Tensor p = maxpool2(Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(p.numel() == 1);
  CHECK(p.data()[0] == 4.0);
  CHECK_THROWS_AS(maxpool2(Tensor::zeros({1, 1, 3, 3})),
                  std::invalid_argument);

  Tensor u = upsample2(Tensor::from_data({1, 1, 1, 2}, {1, 2}));
  CHECK(u.shape() == Shape{1, 1, 2, 4});
  CHECK(u.data() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2});

  Tensor s = softmax(Tensor::from_data({2}, {0.0, 0.0}), 0);
  CHECK(s.data()[0] == doctest::Approx(0.5));
  CHECK(s.data()[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one and stay in (0,1)") {
  Rng rng(11);
  Tensor x = randn({4, 7}, rng, false);
  Tensor s = softmax(x, 1);
  for (int64_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (int64_t j = 0; j < 7; ++j) {
      double v = s.data()[size_t(i * 7 + j)];
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("backward on sum gives all-ones gradient") {
  Rng rng(5);
  Tensor x = randn({3, 4}, rng);
  Tensor loss = sum(x);
  loss.backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward on sum of squares doubles the input") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor loss = sum(mul(x, x));
  loss.backward();
  CHECK(x.grad() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("backward accumulates across repeated calls") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor loss = sum(x);
  loss.backward();
  loss.backward();
  CHECK(x.grad() == std::vector<double>{2.0, 2.0});
}

TEST_CASE("backward rejects non-scalar tensors") {
  Tensor x = Tensor::zeros({2}, true);
  Tensor y = relu(x);
  CHECK_THROWS_AS(y.backward(), std::invalid_argument);
}

TEST_CASE("gradcheck is exact for linear functions") {
  Rng rng(7);
  std::vector<Tensor> point{randn({5}, rng)};
  GradCheckReport r = gradcheck(
      [](std::vector<Tensor>& p) { return sum(p[0]); }, point);
  CHECK(r.pass);
  CHECK(r.max_rel_err <= 1e-9);
}

TEST_CASE("gradcheck catches a broken gradient") {
  Rng rng(8);
  std::vector<Tensor> point{randn({3}, rng)};
  // Forward computes sum(x^2) but the op lies about its gradient.
  auto broken = [](std::vector<Tensor>& p) {
    const Tensor& x = p[0];
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    return Tensor::make(
        {1}, {s}, {x},
        [x](TensorImpl& self) mutable {
          auto& g = x.mutable_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += (*self.grad)[0];
        },
        "broken");
  };
  GradCheckReport r = gradcheck(broken, point);
  CHECK(!r.pass);
}

TEST_CASE("composite graph passes finite differences") {
  Rng rng(9);
  std::vector<Tensor> point{randn({2, 2, 4, 4}, rng),
                            randn({3, 2, 3, 3}, rng), randn({3}, rng)};
  GradCheckReport r = gradcheck(
      [](std::vector<Tensor>& p) {
        Tensor y = relu(conv2d(p[0], p[1], p[2], 1));
        Tensor pooled = maxpool2(y);
        return mean(mul(pooled, pooled));
      },
      point);
  CHECK(r.pass);
}

TEST_CASE("forward and backward are bit-deterministic across replays") {
  Rng rng1(42), rng2(42);
  auto run = [](Rng& rng) {
    Tensor x = randn({2, 3, 8, 8}, rng);
    Tensor w = randn({4, 3, 3, 3}, rng);
    Tensor b = randn({4}, rng);
    Tensor loss = mean(mul(conv2d(x, w, b, 1), conv2d(x, w, b, 1)));
    loss.backward();
    std::vector<double> out = {loss.item()};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run(rng1) == run(rng2));
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  Tensor y = sum(mul(x, x));
  CHECK(!y.requires_grad());
}

TEST_CASE("ParamStore iterates sorted and rejects duplicates") {
  ParamStore store;
  store.create("b", Tensor::zeros({2}, true));
  store.create("a", Tensor::zeros({3}, true));
  CHECK_THROWS_AS(store.create("a", Tensor::zeros({1}, true)),
                  std::invalid_argument);
  std::vector<std::string> names;
  for (const auto& [name, t] : store.items()) names.push_back(name);
  CHECK(names == std::vector<std::string>{"a", "b"});
  CHECK(store.total_params() == 5);
}
