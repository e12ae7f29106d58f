#include "lobemil/backbone.hpp"

#include <cmath>

namespace lobemil {

ConvParams make_conv(ParamStore& params, const std::string& name,
                     int64_t out_ch, int64_t in_ch, int64_t k, Rng& rng) {
  double bound = 1.0 / std::sqrt(double(in_ch * k * k));
  ConvParams p;
  p.w = params.create(name + ".w", Tensor::uniform({out_ch, in_ch, k, k},
                                                   bound, rng, true));
  p.b = params.create(name + ".b", Tensor::uniform({out_ch}, bound, rng, true));
  return p;
}

NormParams make_norm(ParamStore& params, const std::string& name,
                     int64_t channels) {
  NormParams p;
  p.gamma = params.create(name + ".gamma", Tensor::full({channels}, 1.0, true));
  p.beta = params.create(name + ".beta", Tensor::zeros({channels}, true));
  p.state.running_mean = Tensor::zeros({channels});
  p.state.running_var = Tensor::full({channels}, 1.0);
  return p;
}

ConvBn make_conv_bn(ParamStore& params, const std::string& name,
                    int64_t out_ch, int64_t in_ch, int64_t k, Rng& rng) {
  ConvBn layer;
  layer.conv = make_conv(params, name + ".conv", out_ch, in_ch, k, rng);
  layer.norm = make_norm(params, name + ".norm", out_ch);
  return layer;
}

Tensor conv_bn_relu(const Tensor& x, ConvBn& layer, int64_t pad,
                    bool training) {
  Tensor y = conv2d(x, layer.conv.w, layer.conv.b, pad);
  y = batchnorm2d(y, layer.norm.gamma, layer.norm.beta, layer.norm.state,
                  training);
  return relu(y);
}

EncoderParams init_encoder(ParamStore& params, const BackboneConfig& cfg,
                           Rng& rng) {
  EncoderParams enc;
  int64_t c = cfg.base_channels;
  for (int b = 0; b < 4; ++b) {
    int64_t in_ch = b == 0 ? cfg.in_channels : c;
    std::string prefix = "enc.b" + std::to_string(b + 1);
    enc.blocks[size_t(b)][0] =
        make_conv_bn(params, prefix + ".c0", c, in_ch, 3, rng);
    enc.blocks[size_t(b)][1] = make_conv_bn(params, prefix + ".c1", c, c, 3, rng);
  }
  enc.block5[0] =
      make_conv_bn(params, "enc.b5.c0", cfg.top_channels, c, 3, rng);
  enc.block5[1] = make_conv_bn(params, "enc.b5.c1", cfg.top_channels,
                               cfg.top_channels, 3, rng);
  return enc;
}

DecoderParams init_decoder(ParamStore& params, const BackboneConfig& cfg,
                           Rng& rng) {
  DecoderParams dec;
  int64_t c = cfg.base_channels;
  for (int b = 0; b < 4; ++b) {
    // Table numbering runs d5 (deepest) down to d2.
    std::string prefix = "dec.d" + std::to_string(5 - b);
    int64_t in_ch = b == 0 ? cfg.top_channels : c;
    dec.up[size_t(b)] = make_conv_bn(params, prefix + ".up", c, in_ch, 3, rng);
    dec.post[size_t(b)][0] =
        make_conv_bn(params, prefix + ".c0", c, 2 * c, 3, rng);
    dec.post[size_t(b)][1] =
        make_conv_bn(params, prefix + ".c1", c, c, 3, rng);
  }
  dec.out = make_conv(params, "dec.out", cfg.seg_classes, c, 1, rng);
  return dec;
}

EncoderOutput encode(const Tensor& patches, EncoderParams& enc,
                     bool training) {
  if (patches.shape().size() != 4)
    throw std::invalid_argument("encode: expected [n,1,S,S], got " +
                                shape_str(patches.shape()));
  if (patches.dim(2) % 16 != 0 || patches.dim(3) % 16 != 0)
    throw std::invalid_argument(
        "encode: patch extents must be divisible by 16, got " +
        shape_str(patches.shape()));
  EncoderOutput out;
  Tensor x = patches;
  for (int b = 0; b < 4; ++b) {
    x = conv_bn_relu(x, enc.blocks[size_t(b)][0], 1, training);
    x = conv_bn_relu(x, enc.blocks[size_t(b)][1], 1, training);
    out.skips[size_t(b)] = x;
    x = maxpool2(x);
  }
  x = conv_bn_relu(x, enc.block5[0], 1, training);
  x = conv_bn_relu(x, enc.block5[1], 1, training);
  out.features = x;
  return out;
}

Tensor decode(const EncoderOutput& enc, DecoderParams& dec, bool training) {
  for (const Tensor& s : enc.skips)
    if (!s.defined())
      throw std::invalid_argument("decode: encoder output is missing skips");
  Tensor x = enc.features;
  for (int b = 0; b < 4; ++b) {
    x = upsample2(x);
    x = conv_bn_relu(x, dec.up[size_t(b)], 1, training);
    x = concat_channels(x, enc.skips[size_t(3 - b)]);
    x = conv_bn_relu(x, dec.post[size_t(b)][0], 1, training);
    x = conv_bn_relu(x, dec.post[size_t(b)][1], 1, training);
  }
  return conv2d(x, dec.out.w, dec.out.b, 0);
}

}  // namespace lobemil
