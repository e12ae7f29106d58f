#pragma once

#include "lobemil/gcp.hpp"
#include "lobemil/nn.hpp"

namespace lobemil {

// Hierarchical MIL head: the 8x8 spatial positions of each patch's encoder
// output form the inner bag (256 concepts over 512-d instances), patch
// embeddings form the outer bag (128 concepts over 256-d), and a 2-way
// classifier reads the pooled volume feature. Each GCP is followed by a
// 1x1 map realized as linear + ReLU.
struct HeadConfig {
  int64_t instance_dim = 512;
  int64_t embed_concepts = 256;
  int64_t image_concepts = 128;
  int64_t classes = 2;
};

struct HeadParams {
  ConceptBank embed_bank;  // [256, 512]
  Tensor embed_map_w;      // [256, 256]
  Tensor embed_map_b;
  ConceptBank image_bank;  // [128, 256]
  Tensor image_map_w;      // [128, 128]
  Tensor image_map_b;
  Tensor cls_w;            // [2, 128]
  Tensor cls_b;
};

HeadParams init_head(ParamStore& params, const HeadConfig& cfg, Rng& rng);

// features: [C, h, w] encoder output of one patch -> [embed_concepts].
Tensor embed_patch(const Tensor& features, HeadParams& head);

// features: [n, C, h, w] -> [n, embed_concepts].
Tensor embed_bag(const Tensor& features, HeadParams& head);

struct BagPrediction {
  Tensor logits;        // [2]
  double prob_severe;   // softmax probability of class 1
};

// patch_embeddings: [n, embed_concepts], n >= 1.
BagPrediction classify_bag(const Tensor& patch_embeddings, HeadParams& head);

void renormalize_head_banks(HeadParams& head);

}  // namespace lobemil
