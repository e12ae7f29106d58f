#include "lobemil/model.hpp"

#include <stdexcept>

#include "lobemil/checkpoint.hpp"

namespace lobemil {

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  Model m;
  m.cfg = cfg;
  Rng rng(derive_seed({seed, 0x6d6f64656cULL}));
  m.enc = init_encoder(m.params, cfg.backbone, rng);
  m.dec = init_decoder(m.params, cfg.backbone, rng);
  m.head = init_head(m.params, cfg.head, rng);
  return m;
}

std::map<std::string, int64_t> Model::block_param_counts() const {
  std::map<std::string, int64_t> out;
  const char* blocks[] = {"enc.b1",  "enc.b2",  "enc.b3",  "enc.b4",
                          "enc.b5",  "head.emb", "head.img", "head.cls",
                          "dec.d5",  "dec.d4",  "dec.d3",  "dec.d2",
                          "dec.out"};
  for (const char* b : blocks) out[b] = params.count_with_prefix(b);
  return out;
}

namespace {

// Batch-norm running stats, keyed alongside the trainable parameters.
void collect_norm_state(EncoderParams& enc, DecoderParams& dec,
                        std::map<std::string, BatchNormState*>& out) {
  auto add = [&out](const std::string& name, ConvBn& layer) {
    out[name] = &layer.norm.state;
  };
  for (int b = 0; b < 4; ++b) {
    std::string prefix = "enc.b" + std::to_string(b + 1);
    add(prefix + ".c0.norm", enc.blocks[size_t(b)][0]);
    add(prefix + ".c1.norm", enc.blocks[size_t(b)][1]);
  }
  add("enc.b5.c0.norm", enc.block5[0]);
  add("enc.b5.c1.norm", enc.block5[1]);
  for (int b = 0; b < 4; ++b) {
    std::string prefix = "dec.d" + std::to_string(5 - b);
    add(prefix + ".up.norm", dec.up[size_t(b)]);
    add(prefix + ".c0.norm", dec.post[size_t(b)][0]);
    add(prefix + ".c1.norm", dec.post[size_t(b)][1]);
  }
}

}  // namespace

void Model::save_checkpoint_file(const std::string& path) {
  std::map<std::string, Tensor> entries;
  for (const auto& [name, t] : params.items()) entries.emplace(name, t);
  std::map<std::string, BatchNormState*> norms;
  collect_norm_state(enc, dec, norms);
  for (const auto& [name, state] : norms) {
    entries.emplace(name + ".running_mean", state->running_mean);
    entries.emplace(name + ".running_var", state->running_var);
  }
  save_checkpoint(path, entries);
}

void Model::load_checkpoint_file(const std::string& path) {
  std::map<std::string, Tensor> entries = load_checkpoint(path);
  auto fetch = [&entries, &path](const std::string& name) -> Tensor& {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("checkpoint " + path + " is missing tensor " +
                               name);
    return it->second;
  };
  for (auto& [name, t] : params.items()) {
    Tensor& src = fetch(name);
    if (src.shape() != t.shape())
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               shape_str(src.shape()) + ", expected " +
                               shape_str(t.shape()));
    t.data() = src.data();
  }
  std::map<std::string, BatchNormState*> norms;
  collect_norm_state(enc, dec, norms);
  for (const auto& [name, state] : norms) {
    state->running_mean.data() = fetch(name + ".running_mean").data();
    state->running_var.data() = fetch(name + ".running_var").data();
  }
}

}  // namespace lobemil
