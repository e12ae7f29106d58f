#pragma once

#include "lobemil/tensor.hpp"

namespace lobemil {

// Global contrast pooling. A bag of instance feature rows is summarized by
// its maximum cosine similarity to each of p learnable concept rows; the
// gradient flows only through the argmax instance of each concept (lowest
// index wins ties).
inline constexpr double kGcpEps = 1e-8;

struct ConceptBank {
  Tensor concepts;  // [p, d], rows kept at unit Euclidean norm
  int64_t count() const { return concepts.dim(0); }
  int64_t dim() const { return concepts.dim(1); }
};

// Rows start as random unit vectors.
ConceptBank make_concept_bank(int64_t p, int64_t d, Rng& rng);

// instances: [k, d], k >= 1. Returns the bag feature [p].
Tensor gcp_forward(const Tensor& instances, const ConceptBank& bank);

// Convenience wrapper over independent per-bag calls.
std::vector<Tensor> gcp_forward_batch(const std::vector<Tensor>& bags,
                                      const ConceptBank& bank);

// Divides every concept row by its Euclidean norm. Near-zero rows fall back
// to the first basis vector so the result is always well defined.
void gcp_renormalize(ConceptBank& bank);

}  // namespace lobemil
