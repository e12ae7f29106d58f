#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lobemil/phantom.hpp"
#include "lobemil/tensor.hpp"

namespace lobemil {

// Pulmonary window: clamp pseudo-HU to [-1200, 0] and map affinely onto
// [0, 255]. Already-normalized volumes pass through unchanged.
Volume window_and_normalize(const Volume& v);

struct CropBox {
  int64_t z0 = 0, z1 = 0, y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // half-open
  int64_t depth() const { return z1 - z0; }
  int64_t height() const { return y1 - y0; }
  int64_t width() const { return x1 - x0; }
};

class EmptyForegroundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binarizes the raw volume at the body threshold (windowed-positive, i.e.
// pseudo-HU > -1200), keeps the largest 6-connected component, and crops to
// its bounding box expanded axially to at least 256x256 where the volume
// allows. Throws EmptyForegroundError when nothing exceeds the threshold.
std::pair<Volume, CropBox> body_crop(const Volume& raw);

Volume crop_volume(const Volume& v, const CropBox& box);
LobeMask crop_mask(const LobeMask& m, const CropBox& box);

// Bag of 2D patches sampled from one case. Only the bag-level severity
// label is supervised; per-patch lobe masks ride along when the case has a
// delineation.
struct Bag {
  std::string case_id;
  Tensor patches;                    // [n, 1, S, S], values in [0,255]
  bool has_masks = false;
  std::vector<uint8_t> mask_crops;   // [n, S, S] when has_masks
  int severe_label = 0;              // 0 non-severe, 1 severe
  std::vector<int64_t> slice_index;  // source slice per patch
};

Bag build_bag(const Volume& windowed, const LobeMask* mask, int severe_label,
              int64_t n, int64_t patch_size, Rng& rng,
              const std::string& case_id = "");

// One training entry; duplicated severe cases share the case index but get
// fresh sampling salt so their bags differ.
struct TrainItem {
  int case_index = 0;
  int duplicate = 0;
  bool severe = false;
  bool has_mask = false;
};

// Repeats severe entries until they are at least as many as non-severe
// entries. Training split only.
std::vector<TrainItem> balance_by_duplication(std::vector<TrainItem> items);

}  // namespace lobemil
