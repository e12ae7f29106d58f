#pragma once

#include <map>
#include <string>

#include "lobemil/backbone.hpp"
#include "lobemil/milhead.hpp"

namespace lobemil {

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
};

// The multi-task network: shared patch encoder, lobe-segmentation decoder
// and the hierarchical MIL severity head.
struct Model {
  ModelConfig cfg;
  ParamStore params;
  EncoderParams enc;
  DecoderParams dec;
  HeadParams head;

  static Model init(const ModelConfig& cfg, uint64_t seed);

  EncoderOutput encode(const Tensor& patches, bool training) {
    return lobemil::encode(patches, enc, training);
  }
  Tensor decode(const EncoderOutput& e, bool training) {
    return lobemil::decode(e, dec, training);
  }
  Tensor embed(const Tensor& features) {
    return embed_bag(features, head);
  }
  BagPrediction classify(const Tensor& embeddings) {
    return classify_bag(embeddings, head);
  }

  void renormalize_banks() { renormalize_head_banks(head); }

  // Trainable parameters per named architecture block.
  std::map<std::string, int64_t> block_param_counts() const;

  // Checkpoints carry trainable parameters and batch-norm running stats.
  void save_checkpoint_file(const std::string& path);
  void load_checkpoint_file(const std::string& path);
};

}  // namespace lobemil
