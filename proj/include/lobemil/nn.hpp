#pragma once

#include "lobemil/tensor.hpp"

namespace lobemil {

// Elementwise / reduction primitives.
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // same shape
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);                         // -> scalar
Tensor mean(const Tensor& a);                        // -> scalar
Tensor relu(const Tensor& a);

// Layers for the Table-style blocks. All convolutions are stride 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int64_t pad);

struct BatchNormState {
  Tensor running_mean;  // [C], requires_grad=false
  Tensor running_var;   // [C]
};

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, BatchNormState& state, bool training,
                   double momentum = 0.1, double eps = 1e-5);

Tensor maxpool2(const Tensor& input);    // 2x2 window, stride 2
Tensor upsample2(const Tensor& input);   // nearest neighbour, x2
Tensor concat_channels(const Tensor& a, const Tensor& b);

// x is [N,F] or [F]; weight [O,F], bias [O].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, int axis);

// Shape plumbing.
Tensor reshape(const Tensor& x, Shape shape);
Tensor select_outer(const Tensor& x, int64_t index);  // [N,...] -> [...]
Tensor stack_rows(const std::vector<Tensor>& rows);   // n x [F] -> [n,F]
// [C,H,W] -> [H*W, C]: spatial positions become instance feature rows.
Tensor spatial_rows(const Tensor& features);

}  // namespace lobemil
