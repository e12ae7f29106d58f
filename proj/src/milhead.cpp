#include "lobemil/milhead.hpp"

#include <cmath>

namespace lobemil {

// Init gain for the 1x1 maps and the classifier. The classification head
// trains through the small multi-task trade-off weight, so its activations
// and logits must sit at unit scale from the first step.
constexpr double kHeadInitGain = 3.0;

HeadParams init_head(ParamStore& params, const HeadConfig& cfg, Rng& rng) {
  HeadParams head;
  head.embed_bank = ConceptBank{params.create(
      "head.emb.concepts",
      make_concept_bank(cfg.embed_concepts, cfg.instance_dim, rng).concepts)};
  double b1 = kHeadInitGain / std::sqrt(double(cfg.embed_concepts));
  head.embed_map_w = params.create(
      "head.emb.map.w",
      Tensor::uniform({cfg.embed_concepts, cfg.embed_concepts}, b1, rng, true));
  head.embed_map_b = params.create(
      "head.emb.map.b", Tensor::uniform({cfg.embed_concepts}, b1, rng, true));

  head.image_bank = ConceptBank{params.create(
      "head.img.concepts",
      make_concept_bank(cfg.image_concepts, cfg.embed_concepts, rng)
          .concepts)};
  double b2 = kHeadInitGain / std::sqrt(double(cfg.image_concepts));
  head.image_map_w = params.create(
      "head.img.map.w",
      Tensor::uniform({cfg.image_concepts, cfg.image_concepts}, b2, rng, true));
  head.image_map_b = params.create(
      "head.img.map.b", Tensor::uniform({cfg.image_concepts}, b2, rng, true));

  head.cls_w = params.create(
      "head.cls.w",
      Tensor::uniform({cfg.classes, cfg.image_concepts}, b2, rng, true));
  head.cls_b =
      params.create("head.cls.b", Tensor::uniform({cfg.classes}, b2, rng, true));
  return head;
}

Tensor embed_patch(const Tensor& features, HeadParams& head) {
  if (features.shape().size() != 3 ||
      features.dim(0) != head.embed_bank.dim())
    throw std::invalid_argument(
        "embed_patch: expected [" + std::to_string(head.embed_bank.dim()) +
        ",h,w] features, got " + shape_str(features.shape()));
  Tensor instances = spatial_rows(features);
  Tensor pooled = gcp_forward(instances, head.embed_bank);
  return relu(linear(pooled, head.embed_map_w, head.embed_map_b));
}

Tensor embed_bag(const Tensor& features, HeadParams& head) {
  if (features.shape().size() != 4)
    throw std::invalid_argument("embed_bag: expected [n,C,h,w], got " +
                                shape_str(features.shape()));
  std::vector<Tensor> rows;
  rows.reserve(size_t(features.dim(0)));
  for (int64_t i = 0; i < features.dim(0); ++i)
    rows.push_back(embed_patch(select_outer(features, i), head));
  return stack_rows(rows);
}

BagPrediction classify_bag(const Tensor& patch_embeddings, HeadParams& head) {
  if (patch_embeddings.shape().size() != 2 || patch_embeddings.dim(0) < 1)
    throw std::invalid_argument(
        "classify_bag: expected [n>=1, d] embeddings, got " +
        shape_str(patch_embeddings.shape()));
  Tensor pooled = gcp_forward(patch_embeddings, head.image_bank);
  Tensor mapped = relu(linear(pooled, head.image_map_w, head.image_map_b));
  Tensor logits = linear(mapped, head.cls_w, head.cls_b);
  const auto& z = logits.data();
  double m = std::max(z[0], z[1]);
  double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  return BagPrediction{logits, e1 / (e0 + e1)};
}

void renormalize_head_banks(HeadParams& head) {
  gcp_renormalize(head.embed_bank);
  gcp_renormalize(head.image_bank);
}

}  // namespace lobemil
