#include "lobemil/nn.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace lobemil {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

void check_finite_inputs(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw std::invalid_argument(std::string(op) +
                                  ": non-finite value in input");
  (void)op;
}

// Row-major dgemm: C[m,n] (+)= alpha * op(A) * op(B).
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb,
          double beta, double* c, int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k), alpha, a,
              int(lda), b, int(ldb), beta, c, int(ldc));
}

// Unpacks one [C,H,W] image into columns for a stride-1 convolution with
// padding `pad`. The destination is a [C*kh*kw, row_stride] matrix; this
// image's block starts at column `col_offset`. Centered taps copy whole row
// blocks at once; shifted taps copy per-row runs.
void im2col_image(const double* x, int64_t c, int64_t h, int64_t w,
                  int64_t kh, int64_t kw, int64_t pad, double* col,
                  int64_t row_stride, int64_t col_offset) {
  int64_t oh = h + 2 * pad - kh + 1;
  int64_t ow = w + 2 * pad - kw + 1;
  for (int64_t ci = 0; ci < c; ++ci) {
    const double* src = x + ci * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      int64_t dy = ki - pad;
      int64_t oy_lo = std::max<int64_t>(0, -dy);
      int64_t oy_hi = std::min<int64_t>(oh, h - dy);
      for (int64_t kj = 0; kj < kw; ++kj) {
        int64_t dx = kj - pad;
        double* dst =
            col + ((ci * kh + ki) * kw + kj) * row_stride + col_offset;
        if (oy_lo > 0)
          std::memset(dst, 0, size_t(oy_lo * ow) * sizeof(double));
        if (oy_hi < oh)
          std::memset(dst + oy_hi * ow, 0,
                      size_t((oh - oy_hi) * ow) * sizeof(double));
        if (oy_hi <= oy_lo) continue;
        if (dx == 0 && ow == w) {
          std::memcpy(dst + oy_lo * ow, src + (oy_lo + dy) * w,
                      size_t((oy_hi - oy_lo) * ow) * sizeof(double));
          continue;
        }
        int64_t ox_lo = std::max<int64_t>(0, -dx);
        int64_t ox_hi = std::min<int64_t>(ow, w - dx);
        for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
          double* d = dst + oy * ow;
          const double* s = src + (oy + dy) * w + dx;
          if (ox_lo > 0) std::memset(d, 0, size_t(ox_lo) * sizeof(double));
          if (ox_hi > ox_lo)
            std::memcpy(d + ox_lo, s + ox_lo,
                        size_t(ox_hi - ox_lo) * sizeof(double));
          if (ox_hi < ow)
            std::memset(d + ox_hi, 0, size_t(ow - ox_hi) * sizeof(double));
        }
      }
    }
  }
}

// Scatter-add of one image's column gradients back into the image gradient.
void col2im_image(const double* col, int64_t c, int64_t h, int64_t w,
                  int64_t kh, int64_t kw, int64_t pad, double* dx,
                  int64_t row_stride, int64_t col_offset) {
  int64_t oh = h + 2 * pad - kh + 1;
  int64_t ow = w + 2 * pad - kw + 1;
  for (int64_t ci = 0; ci < c; ++ci) {
    double* dst = dx + ci * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      int64_t dy = ki - pad;
      int64_t oy_lo = std::max<int64_t>(0, -dy);
      int64_t oy_hi = std::min<int64_t>(oh, h - dy);
      for (int64_t kj = 0; kj < kw; ++kj) {
        int64_t dx_off = kj - pad;
        const double* src =
            col + ((ci * kh + ki) * kw + kj) * row_stride + col_offset;
        if (oy_hi <= oy_lo) continue;
        if (dx_off == 0 && ow == w) {
          double* d = dst + (oy_lo + dy) * w;
          const double* s = src + oy_lo * ow;
          int64_t count = (oy_hi - oy_lo) * ow;
          for (int64_t q = 0; q < count; ++q) d[q] += s[q];
          continue;
        }
        int64_t ox_lo = std::max<int64_t>(0, -dx_off);
        int64_t ox_hi = std::min<int64_t>(ow, w - dx_off);
        for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
          double* d = dst + (oy + dy) * w + dx_off;
          const double* s = src + oy * ow;
          for (int64_t ox = ox_lo; ox < ox_hi; ++ox) d[ox] += s[ox];
        }
      }
    }
  }
}

// Images per GEMM: enough columns to amortize reading the weight matrix
// (critical for the 512->512 stage whose spatial extent is 1x1 at small
// patch sizes) while keeping the column scratch cache-resident.
int64_t conv_chunk_images(int64_t n, int64_t ohw) {
  return std::min(n, std::max<int64_t>(1, 2048 / ohw));
}

// Reused per-thread scratch keeps the hot conv path allocation-free.
std::vector<double>& conv_scratch(size_t which, size_t need) {
  thread_local std::vector<double> bufs[4];
  if (bufs[which].size() < need) bufs[which].resize(need);
  return bufs[which];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return Tensor::make(
      a.shape(), std::move(out), {a, b},
      [a, b](TensorImpl& self) mutable {
        a.impl()->accumulate(*self.grad);
        b.impl()->accumulate(*self.grad);
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return Tensor::make(
      a.shape(), std::move(out), {a, b},
      [a, b](TensorImpl& self) mutable {
        a.impl()->accumulate(*self.grad);
        if (b.requires_grad()) {
          auto& gb = b.mutable_grad();
          for (size_t i = 0; i < gb.size(); ++i) gb[i] -= (*self.grad)[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return Tensor::make(
      a.shape(), std::move(out), {a, b},
      [a, b](TensorImpl& self) mutable {
        if (a.requires_grad()) {
          auto& ga = a.mutable_grad();
          const auto& bd2 = b.data();
          for (size_t i = 0; i < ga.size(); ++i)
            ga[i] += (*self.grad)[i] * bd2[i];
        }
        if (b.requires_grad()) {
          auto& gb = b.mutable_grad();
          const auto& ad2 = a.data();
          for (size_t i = 0; i < gb.size(); ++i)
            gb[i] += (*self.grad)[i] * ad2[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  return Tensor::make(
      a.shape(), std::move(out), {a},
      [a, c](TensorImpl& self) mutable {
        if (a.requires_grad()) {
          auto& ga = a.mutable_grad();
          for (size_t i = 0; i < ga.size(); ++i) ga[i] += c * (*self.grad)[i];
        }
      },
      "scale");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make(
      {1}, {s}, {a},
      [a](TensorImpl& self) mutable {
        if (a.requires_grad()) {
          double g = (*self.grad)[0];
          auto& ga = a.mutable_grad();
          for (double& v : ga) v += g;
        }
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  double inv = 1.0 / double(a.numel());
  return Tensor::make(
      {1}, {s * inv}, {a},
      [a, inv](TensorImpl& self) mutable {
        if (a.requires_grad()) {
          double g = (*self.grad)[0] * inv;
          auto& ga = a.mutable_grad();
          for (double& v : ga) v += g;
        }
      },
      "mean");
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make(
      a.shape(), std::move(out), {a},
      [a](TensorImpl& self) mutable {
        if (a.requires_grad()) {
          auto& ga = a.mutable_grad();
          const auto& ad = a.data();
          for (size_t i = 0; i < ga.size(); ++i)
            if (ad[i] > 0.0) ga[i] += (*self.grad)[i];
        }
      },
      "relu");
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int64_t pad) {
  if (input.shape().size() != 4 || weight.shape().size() != 4)
    throw std::invalid_argument("conv2d: expected 4-d input and weight, got " +
                                shape_str(input.shape()) + " and " +
                                shape_str(weight.shape()));
  int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
          w = input.dim(3);
  int64_t k = weight.dim(0), wc = weight.dim(1), kh = weight.dim(2),
          kw = weight.dim(3);
  if (wc != c)
    throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) +
                                " incompatible with weight " +
                                shape_str(weight.shape()));
  if (bias.shape() != Shape{k})
    throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) +
                                " must be [" + std::to_string(k) + "]");
  int64_t oh = h + 2 * pad - kh + 1;
  int64_t ow = w + 2 * pad - kw + 1;
  if (oh < 1 || ow < 1)
    throw std::invalid_argument("conv2d: kernel larger than padded input");

  int64_t ckk = c * kh * kw;
  int64_t ohw = oh * ow;
  int64_t chunk = conv_chunk_images(n, ohw);
  std::vector<double> out(size_t(n * k * ohw));
  std::vector<double>& col = conv_scratch(0, size_t(ckk * chunk * ohw));
  std::vector<double>& ybuf = conv_scratch(1, size_t(k * chunk * ohw));
  const auto& bd = bias.data();
  for (int64_t i0 = 0; i0 < n; i0 += chunk) {
    int64_t imgs = std::min(chunk, n - i0);
    int64_t cols = imgs * ohw;
    for (int64_t j = 0; j < imgs; ++j)
      im2col_image(input.data().data() + (i0 + j) * c * h * w, c, h, w, kh,
                   kw, pad, col.data(), cols, j * ohw);
    // y[k, cols] = weight[k, ckk] * col; written per image with the bias.
    double* y = imgs == 1 ? out.data() + i0 * k * ohw : ybuf.data();
    gemm(false, false, k, cols, ckk, 1.0, weight.data().data(), ckk,
         col.data(), cols, 0.0, y, cols);
    if (imgs == 1) {
      for (int64_t kk = 0; kk < k; ++kk) {
        double b = bd[size_t(kk)];
        double* row = y + kk * ohw;
        for (int64_t q = 0; q < ohw; ++q) row[q] += b;
      }
    } else {
      for (int64_t j = 0; j < imgs; ++j)
        for (int64_t kk = 0; kk < k; ++kk) {
          const double* src = y + kk * cols + j * ohw;
          double* dst = out.data() + ((i0 + j) * k + kk) * ohw;
          double b = bd[size_t(kk)];
          for (int64_t q = 0; q < ohw; ++q) dst[q] = src[q] + b;
        }
    }
  }

  Shape out_shape{n, k, oh, ow};
  return Tensor::make(
      out_shape, std::move(out), {input, weight, bias},
      [input, weight, bias, n, c, h, w, k, kh, kw, pad,
       ohw](TensorImpl& self) mutable {
        int64_t ckk = c * kh * kw;
        int64_t chunk = conv_chunk_images(n, ohw);
        std::vector<double>& col = conv_scratch(0, size_t(ckk * chunk * ohw));
        std::vector<double>& dybuf =
            conv_scratch(2, size_t(k * chunk * ohw));
        std::vector<double>& dcol =
            conv_scratch(3, size_t(ckk * chunk * ohw));
        for (int64_t i0 = 0; i0 < n; i0 += chunk) {
          int64_t imgs = std::min(chunk, n - i0);
          int64_t cols = imgs * ohw;
          const double* dy;
          if (imgs == 1) {
            dy = self.grad->data() + i0 * k * ohw;
          } else {
            for (int64_t j = 0; j < imgs; ++j)
              for (int64_t kk = 0; kk < k; ++kk)
                std::memcpy(dybuf.data() + kk * cols + j * ohw,
                            self.grad->data() + ((i0 + j) * k + kk) * ohw,
                            size_t(ohw) * sizeof(double));
            dy = dybuf.data();
          }
          if (weight.requires_grad()) {
            for (int64_t j = 0; j < imgs; ++j)
              im2col_image(input.data().data() + (i0 + j) * c * h * w, c, h,
                           w, kh, kw, pad, col.data(), cols, j * ohw);
            // dW[k, ckk] += dy * col^T
            gemm(false, true, k, ckk, cols, 1.0, dy, cols, col.data(), cols,
                 1.0, weight.mutable_grad().data(), ckk);
          }
          if (bias.requires_grad()) {
            auto& gb = bias.mutable_grad();
            for (int64_t kk = 0; kk < k; ++kk) {
              double s = 0.0;
              const double* row = dy + kk * cols;
              for (int64_t q = 0; q < cols; ++q) s += row[q];
              gb[size_t(kk)] += s;
            }
          }
          if (input.requires_grad()) {
            // dcol[ckk, cols] = W^T * dy, then scatter back into dx.
            gemm(true, false, ckk, cols, k, 1.0, weight.data().data(), ckk,
                 dy, cols, 0.0, dcol.data(), cols);
            for (int64_t j = 0; j < imgs; ++j)
              col2im_image(dcol.data(), c, h, w, kh, kw, pad,
                           input.mutable_grad().data() + (i0 + j) * c * h * w,
                           cols, j * ohw);
          }
        }
      },
      "conv2d");
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, BatchNormState& state, bool training,
                   double momentum, double eps) {
  if (input.shape().size() != 4)
    throw std::invalid_argument("batchnorm2d: expected 4-d input, got " +
                                shape_str(input.shape()));
  int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
          w = input.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw std::invalid_argument(
        "batchnorm2d: gamma/beta " + shape_str(gamma.shape()) +
        " do not match channel count " + std::to_string(c));
  int64_t m = n * h * w;
  int64_t hw = h * w;

  std::vector<double> mean_c(size_t(c), 0.0), invstd_c(size_t(c), 0.0);
  if (training) {
    if (m < 2)
      throw std::invalid_argument(
          "batchnorm2d: training mode needs more than one value per channel");
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0, ss = 0.0;
      for (int64_t img = 0; img < n; ++img) {
        const double* p = input.data().data() + (img * c + ci) * hw;
        for (int64_t q = 0; q < hw; ++q) {
          s += p[q];
          ss += p[q] * p[q];
        }
      }
      double mu = s / double(m);
      double vs = std::max(0.0, ss - s * mu);  // sum of squared deviations
      double var = vs / double(m);  // biased, used for normalization
      mean_c[size_t(ci)] = mu;
      invstd_c[size_t(ci)] = 1.0 / std::sqrt(var + eps);
      double var_unbiased = vs / double(m - 1);
      auto& rm = state.running_mean.data();
      auto& rv = state.running_var.data();
      rm[size_t(ci)] = (1.0 - momentum) * rm[size_t(ci)] + momentum * mu;
      rv[size_t(ci)] =
          (1.0 - momentum) * rv[size_t(ci)] + momentum * var_unbiased;
    }
  } else {
    for (int64_t ci = 0; ci < c; ++ci) {
      mean_c[size_t(ci)] = state.running_mean.data()[size_t(ci)];
      invstd_c[size_t(ci)] =
          1.0 / std::sqrt(state.running_var.data()[size_t(ci)] + eps);
    }
  }

  std::vector<double> out(input.data().size());
  for (int64_t img = 0; img < n; ++img)
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* p = input.data().data() + (img * c + ci) * hw;
      double* o = out.data() + (img * c + ci) * hw;
      double g = gamma.data()[size_t(ci)], b = beta.data()[size_t(ci)];
      double mu = mean_c[size_t(ci)], is = invstd_c[size_t(ci)];
      for (int64_t q = 0; q < hw; ++q) o[q] = g * (p[q] - mu) * is + b;
    }

  return Tensor::make(
      input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, beta, mean_c, invstd_c, n, c, hw, m,
       training](TensorImpl& self) mutable {
        const auto& dy = *self.grad;
        for (int64_t ci = 0; ci < c; ++ci) {
          double mu = mean_c[size_t(ci)], is = invstd_c[size_t(ci)];
          double g = gamma.data()[size_t(ci)];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int64_t img = 0; img < n; ++img) {
            const double* x = input.data().data() + (img * c + ci) * hw;
            const double* d = dy.data() + (img * c + ci) * hw;
            for (int64_t q = 0; q < hw; ++q) {
              double xhat = (x[q] - mu) * is;
              sum_dy += d[q];
              sum_dy_xhat += d[q] * xhat;
            }
          }
          if (gamma.requires_grad())
            gamma.mutable_grad()[size_t(ci)] += sum_dy_xhat;
          if (beta.requires_grad()) beta.mutable_grad()[size_t(ci)] += sum_dy;
          if (input.requires_grad()) {
            auto& gx = input.mutable_grad();
            if (training) {
              double inv_m = 1.0 / double(m);
              for (int64_t img = 0; img < n; ++img) {
                const double* x = input.data().data() + (img * c + ci) * hw;
                const double* d = dy.data() + (img * c + ci) * hw;
                double* gxp = gx.data() + (img * c + ci) * hw;
                for (int64_t q = 0; q < hw; ++q) {
                  double xhat = (x[q] - mu) * is;
                  gxp[q] += g * is *
                            (d[q] - inv_m * (sum_dy + xhat * sum_dy_xhat));
                }
              }
            } else {
              for (int64_t img = 0; img < n; ++img) {
                const double* d = dy.data() + (img * c + ci) * hw;
                double* gxp = gx.data() + (img * c + ci) * hw;
                for (int64_t q = 0; q < hw; ++q) gxp[q] += g * is * d[q];
              }
            }
          }
        }
      },
      "batchnorm2d");
}

Tensor maxpool2(const Tensor& input) {
  if (input.shape().size() != 4)
    throw std::invalid_argument("maxpool2: expected 4-d input, got " +
                                shape_str(input.shape()));
  int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
          w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("maxpool2: spatial extents must be even, got " +
                                shape_str(input.shape()));
  int64_t oh = h / 2, ow = w / 2;
  std::vector<double> out(size_t(n * c * oh * ow));
  std::vector<int64_t> argmax(out.size());
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = input.data().data() + nc * h * w;
    double* dst = out.data() + nc * oh * ow;
    int64_t* am = argmax.data() + nc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        int64_t base = (2 * oy) * w + 2 * ox;
        int64_t best_idx = base;
        double best = src[base];
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            int64_t idx = base + dy * w + dx;
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        dst[oy * ow + ox] = best;
        am[oy * ow + ox] = nc * h * w + best_idx;
      }
  }
  return Tensor::make(
      {n, c, oh, ow}, std::move(out), {input},
      [input, argmax](TensorImpl& self) mutable {
        if (!input.requires_grad()) return;
        auto& gx = input.mutable_grad();
        const auto& dy = *self.grad;
        for (size_t i = 0; i < dy.size(); ++i)
          gx[size_t(argmax[i])] += dy[i];
      },
      "maxpool2");
}

Tensor upsample2(const Tensor& input) {
  if (input.shape().size() != 4)
    throw std::invalid_argument("upsample2: expected 4-d input, got " +
                                shape_str(input.shape()));
  int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
          w = input.dim(3);
  int64_t oh = 2 * h, ow = 2 * w;
  std::vector<double> out(size_t(n * c * oh * ow));
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = input.data().data() + nc * h * w;
    double* dst = out.data() + nc * oh * ow;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double v = src[y * w + x];
        dst[(2 * y) * ow + 2 * x] = v;
        dst[(2 * y) * ow + 2 * x + 1] = v;
        dst[(2 * y + 1) * ow + 2 * x] = v;
        dst[(2 * y + 1) * ow + 2 * x + 1] = v;
      }
  }
  return Tensor::make(
      {n, c, oh, ow}, std::move(out), {input},
      [input, n, c, h, w, oh, ow](TensorImpl& self) mutable {
        if (!input.requires_grad()) return;
        auto& gx = input.mutable_grad();
        const auto& dy = *self.grad;
        for (int64_t nc = 0; nc < n * c; ++nc) {
          double* g = gx.data() + nc * h * w;
          const double* d = dy.data() + nc * oh * ow;
          for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
              g[y * w + x] += d[(2 * y) * ow + 2 * x] +
                              d[(2 * y) * ow + 2 * x + 1] +
                              d[(2 * y + 1) * ow + 2 * x] +
                              d[(2 * y + 1) * ow + 2 * x + 1];
        }
      },
      "upsample2");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 4 || b.shape().size() != 4 ||
      a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2),
          w = a.dim(3);
  int64_t hw = h * w;
  std::vector<double> out(size_t(n * (ca + cb) * hw));
  for (int64_t img = 0; img < n; ++img) {
    std::memcpy(out.data() + img * (ca + cb) * hw,
                a.data().data() + img * ca * hw, size_t(ca * hw) * 8);
    std::memcpy(out.data() + (img * (ca + cb) + ca) * hw,
                b.data().data() + img * cb * hw, size_t(cb * hw) * 8);
  }
  return Tensor::make(
      {n, ca + cb, h, w}, std::move(out), {a, b},
      [a, b, n, ca, cb, hw](TensorImpl& self) mutable {
        const auto& dy = *self.grad;
        if (a.requires_grad()) {
          auto& ga = a.mutable_grad();
          for (int64_t img = 0; img < n; ++img) {
            const double* d = dy.data() + img * (ca + cb) * hw;
            double* g = ga.data() + img * ca * hw;
            for (int64_t q = 0; q < ca * hw; ++q) g[q] += d[q];
          }
        }
        if (b.requires_grad()) {
          auto& gb = b.mutable_grad();
          for (int64_t img = 0; img < n; ++img) {
            const double* d = dy.data() + (img * (ca + cb) + ca) * hw;
            double* g = gb.data() + img * cb * hw;
            for (int64_t q = 0; q < cb * hw; ++q) g[q] += d[q];
          }
        }
      },
      "concat_channels");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  bool vector_input = x.shape().size() == 1;
  if (!vector_input && x.shape().size() != 2)
    throw std::invalid_argument("linear: expected [N,F] or [F] input, got " +
                                shape_str(x.shape()));
  int64_t n = vector_input ? 1 : x.dim(0);
  int64_t f = vector_input ? x.dim(0) : x.dim(1);
  if (weight.shape().size() != 2 || weight.dim(1) != f)
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                " incompatible with weight " +
                                shape_str(weight.shape()));
  int64_t o = weight.dim(0);
  if (bias.shape() != Shape{o})
    throw std::invalid_argument("linear: bias " + shape_str(bias.shape()) +
                                " must be [" + std::to_string(o) + "]");
  std::vector<double> out(size_t(n * o));
  // y[n,o] = x[n,f] * W^T
  gemm(false, true, n, o, f, 1.0, x.data().data(), f, weight.data().data(), f,
       0.0, out.data(), o);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < o; ++j) out[size_t(i * o + j)] += bias.data()[size_t(j)];

  Shape out_shape = vector_input ? Shape{o} : Shape{n, o};
  return Tensor::make(
      out_shape, std::move(out), {x, weight, bias},
      [x, weight, bias, n, f, o](TensorImpl& self) mutable {
        const auto& dy = *self.grad;
        if (x.requires_grad())
          gemm(false, false, n, f, o, 1.0, dy.data(), o, weight.data().data(),
               f, 1.0, x.mutable_grad().data(), f);
        if (weight.requires_grad())
          gemm(true, false, o, f, n, 1.0, dy.data(), o, x.data().data(), f,
               1.0, weight.mutable_grad().data(), f);
        if (bias.requires_grad()) {
          auto& gb = bias.mutable_grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < o; ++j) gb[size_t(j)] += dy[size_t(i * o + j)];
        }
      },
      "linear");
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || size_t(axis) >= s.size())
    throw std::invalid_argument("softmax: axis out of range for " +
                                shape_str(s));
  check_finite_inputs(x, "softmax");
  int64_t axis_len = s[size_t(axis)];
  int64_t inner = 1, outer = 1;
  for (size_t i = size_t(axis) + 1; i < s.size(); ++i) inner *= s[i];
  for (size_t i = 0; i < size_t(axis); ++i) outer *= s[i];

  std::vector<double> out(x.data().size());
  const auto& xd = x.data();
  for (int64_t ou = 0; ou < outer; ++ou)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = ou * axis_len * inner + in;
      double mx = xd[size_t(base)];
      for (int64_t a = 1; a < axis_len; ++a)
        mx = std::max(mx, xd[size_t(base + a * inner)]);
      double z = 0.0;
      for (int64_t a = 0; a < axis_len; ++a) {
        double e = std::exp(xd[size_t(base + a * inner)] - mx);
        out[size_t(base + a * inner)] = e;
        z += e;
      }
      for (int64_t a = 0; a < axis_len; ++a) out[size_t(base + a * inner)] /= z;
    }

  return Tensor::make(
      s, std::move(out), {x},
      [x, axis_len, inner, outer](TensorImpl& self) mutable {
        if (!x.requires_grad()) return;
        const auto& y = self.data;
        const auto& dy = *self.grad;
        auto& gx = x.mutable_grad();
        for (int64_t ou = 0; ou < outer; ++ou)
          for (int64_t in = 0; in < inner; ++in) {
            int64_t base = ou * axis_len * inner + in;
            double dot = 0.0;
            for (int64_t a = 0; a < axis_len; ++a) {
              size_t i = size_t(base + a * inner);
              dot += dy[i] * y[i];
            }
            for (int64_t a = 0; a < axis_len; ++a) {
              size_t i = size_t(base + a * inner);
              gx[i] += (dy[i] - dot) * y[i];
            }
          }
      },
      "softmax");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(x.shape()) + " as " +
                                shape_str(shape));
  std::vector<double> out(x.data());
  return Tensor::make(
      std::move(shape), std::move(out), {x},
      [x](TensorImpl& self) mutable { x.impl()->accumulate(*self.grad); },
      "reshape");
}

Tensor select_outer(const Tensor& x, int64_t index) {
  if (x.shape().size() < 2)
    throw std::invalid_argument("select_outer: rank must be >= 2, got " +
                                shape_str(x.shape()));
  int64_t n = x.dim(0);
  if (index < 0 || index >= n)
    throw std::invalid_argument("select_outer: index out of range");
  int64_t stride = x.numel() / n;
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  std::vector<double> out(x.data().begin() + index * stride,
                          x.data().begin() + (index + 1) * stride);
  return Tensor::make(
      std::move(out_shape), std::move(out), {x},
      [x, index, stride](TensorImpl& self) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.mutable_grad();
        const auto& dy = *self.grad;
        for (int64_t q = 0; q < stride; ++q)
          gx[size_t(index * stride + q)] += dy[size_t(q)];
      },
      "select_outer");
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty())
    throw std::invalid_argument("stack_rows: empty row list");
  int64_t f = rows[0].numel();
  for (const Tensor& r : rows)
    if (r.shape().size() != 1 || r.numel() != f)
      throw std::invalid_argument("stack_rows: rows must share shape [" +
                                  std::to_string(f) + "]");
  int64_t n = int64_t(rows.size());
  std::vector<double> out(size_t(n * f));
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * f, rows[size_t(i)].data().data(),
                size_t(f) * 8);
  std::vector<Tensor> parents(rows.begin(), rows.end());
  return Tensor::make(
      {n, f}, std::move(out), std::move(parents),
      [f](TensorImpl& self) {
        const auto& dy = *self.grad;
        for (size_t i = 0; i < self.parents.size(); ++i) {
          Tensor& r = self.parents[i];
          if (!r.requires_grad()) continue;
          auto& g = r.mutable_grad();
          for (int64_t q = 0; q < f; ++q)
            g[size_t(q)] += dy[i * size_t(f) + size_t(q)];
        }
      },
      "stack_rows");
}

Tensor spatial_rows(const Tensor& features) {
  if (features.shape().size() != 3)
    throw std::invalid_argument("spatial_rows: expected [C,H,W], got " +
                                shape_str(features.shape()));
  int64_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  int64_t hw = h * w;
  std::vector<double> out(size_t(c * hw));
  const auto& xd = features.data();
  for (int64_t q = 0; q < hw; ++q)
    for (int64_t ci = 0; ci < c; ++ci)
      out[size_t(q * c + ci)] = xd[size_t(ci * hw + q)];
  return Tensor::make(
      {hw, c}, std::move(out), {features},
      [features, c, hw](TensorImpl& self) mutable {
        if (!features.requires_grad()) return;
        auto& gx = features.mutable_grad();
        const auto& dy = *self.grad;
        for (int64_t q = 0; q < hw; ++q)
          for (int64_t ci = 0; ci < c; ++ci)
            gx[size_t(ci * hw + q)] += dy[size_t(q * c + ci)];
      },
      "spatial_rows");
}

}  // namespace lobemil
