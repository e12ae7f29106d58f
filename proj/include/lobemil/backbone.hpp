#pragma once

#include <array>

#include "lobemil/nn.hpp"
#include "lobemil/tensor.hpp"

namespace lobemil {

struct ConvParams {
  Tensor w;  // [K, C, kh, kw]
  Tensor b;  // [K]
};

struct NormParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]
  BatchNormState state;
};

struct ConvBn {
  ConvParams conv;
  NormParams norm;
};

// Inputs are single-channel patches. Encoding blocks 1-4 run two 64-kernel
// conv+BN+ReLU stages each, followed by 2x2 max pooling; block 5 widens
// 64 -> 512 -> 512. The decoder mirrors the four pooled levels: upsample,
// conv+BN+ReLU, concat with the same-level skip, then two conv+BN+ReLU
// stages, and a final 1x1 conv onto the segmentation classes. Channel
// widths are chosen to reproduce the per-block parameter counts.
struct BackboneConfig {
  int64_t in_channels = 1;
  int64_t base_channels = 64;
  int64_t top_channels = 512;
  int64_t seg_classes = 6;  // five lobes + background
};

struct EncoderParams {
  std::array<std::array<ConvBn, 2>, 4> blocks;  // blocks 1-4
  std::array<ConvBn, 2> block5;
};

struct DecoderParams {
  std::array<ConvBn, 4> up;                      // deepest first
  std::array<std::array<ConvBn, 2>, 4> post;
  ConvParams out;                                // 1x1 conv to seg classes
};

struct EncoderOutput {
  Tensor features;                // [n, 512, S/16, S/16]
  std::array<Tensor, 4> skips;    // pre-pool outputs of blocks 1-4
};

EncoderParams init_encoder(ParamStore& params, const BackboneConfig& cfg,
                           Rng& rng);
DecoderParams init_decoder(ParamStore& params, const BackboneConfig& cfg,
                           Rng& rng);

EncoderOutput encode(const Tensor& patches, EncoderParams& enc,
                     bool training);
Tensor decode(const EncoderOutput& enc, DecoderParams& dec, bool training);

// Shared initializer: fan-in scaled uniform weights and biases.
ConvParams make_conv(ParamStore& params, const std::string& name,
                     int64_t out_ch, int64_t in_ch, int64_t k, Rng& rng);
NormParams make_norm(ParamStore& params, const std::string& name,
                     int64_t channels);
ConvBn make_conv_bn(ParamStore& params, const std::string& name,
                    int64_t out_ch, int64_t in_ch, int64_t k, Rng& rng);

Tensor conv_bn_relu(const Tensor& x, ConvBn& layer, int64_t pad,
                    bool training);

}  // namespace lobemil
