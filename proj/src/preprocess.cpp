#include "lobemil/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace lobemil {

Volume window_and_normalize(const Volume& v) {
  if (v.units == Volume::Units::kNormalized) return v;
  Volume out = v;
  out.units = Volume::Units::kNormalized;
  constexpr float lo = -1200.0f, hi = 0.0f;
  constexpr float scale = 255.0f / 1200.0f;
  for (float& x : out.voxels) {
    float c = std::min(std::max(x, lo), hi);
    x = (c - lo) * scale;
  }
  return out;
}

std::pair<Volume, CropBox> body_crop(const Volume& raw) {
  if (raw.units != Volume::Units::kPseudoHu)
    throw std::invalid_argument("body_crop expects a raw pseudo-HU volume");
  const Extents& e = raw.extents;
  const float threshold = -1200.0f;

  // Largest 6-connected component of the above-threshold mask.
  std::vector<int32_t> comp(size_t(e.voxels()), -1);
  int32_t n_comp = 0;
  int64_t best_size = 0;
  int32_t best_comp = -1;
  std::vector<int64_t> queue;
  for (int64_t start = 0; start < e.voxels(); ++start) {
    if (comp[size_t(start)] != -1 || raw.voxels[size_t(start)] <= threshold)
      continue;
    int32_t id = n_comp++;
    int64_t count = 0;
    queue.clear();
    queue.push_back(start);
    comp[size_t(start)] = id;
    while (!queue.empty()) {
      int64_t idx = queue.back();
      queue.pop_back();
      ++count;
      int64_t z = idx / (e.h * e.w);
      int64_t y = (idx / e.w) % e.h;
      int64_t x = idx % e.w;
      const int64_t dz[6] = {-1, 1, 0, 0, 0, 0};
      const int64_t dy[6] = {0, 0, -1, 1, 0, 0};
      const int64_t dx[6] = {0, 0, 0, 0, -1, 1};
      for (int k = 0; k < 6; ++k) {
        int64_t nz = z + dz[k], ny = y + dy[k], nx = x + dx[k];
        if (nz < 0 || nz >= e.d || ny < 0 || ny >= e.h || nx < 0 || nx >= e.w)
          continue;
        int64_t nidx = (nz * e.h + ny) * e.w + nx;
        if (comp[size_t(nidx)] == -1 &&
            raw.voxels[size_t(nidx)] > threshold) {
          comp[size_t(nidx)] = id;
          queue.push_back(nidx);
        }
      }
    }
    if (count > best_size) {
      best_size = count;
      best_comp = id;
    }
  }
  if (best_comp < 0)
    throw EmptyForegroundError("body_crop: no voxel above body threshold");

  CropBox box{e.d, 0, e.h, 0, e.w, 0};
  for (int64_t z = 0; z < e.d; ++z)
    for (int64_t y = 0; y < e.h; ++y)
      for (int64_t x = 0; x < e.w; ++x)
        if (comp[size_t((z * e.h + y) * e.w + x)] == best_comp) {
          box.z0 = std::min(box.z0, z);
          box.z1 = std::max(box.z1, z + 1);
          box.y0 = std::min(box.y0, y);
          box.y1 = std::max(box.y1, y + 1);
          box.x0 = std::min(box.x0, x);
          box.x1 = std::max(box.x1, x + 1);
        }

  // Expand the axial plane to at least 256x256 where the volume allows.
  auto expand = [](int64_t lo, int64_t hi, int64_t extent, int64_t want) {
    int64_t target = std::min(want, extent);
    while (hi - lo < target) {
      if (lo > 0) --lo;
      if (hi - lo < target && hi < extent) ++hi;
    }
    return std::pair<int64_t, int64_t>{lo, hi};
  };
  std::tie(box.y0, box.y1) = expand(box.y0, box.y1, e.h, 256);
  std::tie(box.x0, box.x1) = expand(box.x0, box.x1, e.w, 256);

  return {crop_volume(raw, box), box};
}

Volume crop_volume(const Volume& v, const CropBox& box) {
  Volume out;
  out.extents = {box.depth(), box.height(), box.width()};
  out.spacing_mm = v.spacing_mm;
  out.units = v.units;
  out.voxels.resize(size_t(out.extents.voxels()));
  for (int64_t z = 0; z < box.depth(); ++z)
    for (int64_t y = 0; y < box.height(); ++y) {
      const float* src = v.voxels.data() +
                         ((box.z0 + z) * v.extents.h + box.y0 + y) *
                             v.extents.w +
                         box.x0;
      float* dst = out.voxels.data() +
                   (z * out.extents.h + y) * out.extents.w;
      std::copy(src, src + box.width(), dst);
    }
  return out;
}

LobeMask crop_mask(const LobeMask& m, const CropBox& box) {
  LobeMask out;
  out.extents = {box.depth(), box.height(), box.width()};
  out.labels.resize(size_t(out.extents.voxels()));
  for (int64_t z = 0; z < box.depth(); ++z)
    for (int64_t y = 0; y < box.height(); ++y) {
      const uint8_t* src = m.labels.data() +
                           ((box.z0 + z) * m.extents.h + box.y0 + y) *
                               m.extents.w +
                           box.x0;
      uint8_t* dst = out.labels.data() +
                     (z * out.extents.h + y) * out.extents.w;
      std::copy(src, src + box.width(), dst);
    }
  return out;
}

Bag build_bag(const Volume& windowed, const LobeMask* mask, int severe_label,
              int64_t n, int64_t patch_size, Rng& rng,
              const std::string& case_id) {
  const Extents& e = windowed.extents;
  if (n < 1) throw std::invalid_argument("build_bag: bag size must be >= 1");
  if (patch_size > e.h || patch_size > e.w)
    throw std::invalid_argument(
        "build_bag: patch size " + std::to_string(patch_size) +
        " exceeds axial extents " + std::to_string(e.h) + "x" +
        std::to_string(e.w));
  if (mask && mask->extents != e)
    throw std::invalid_argument("build_bag: mask extents differ from volume");

  Bag bag;
  bag.case_id = case_id;
  bag.severe_label = severe_label;
  bag.has_masks = mask != nullptr;
  int64_t s = patch_size;
  std::vector<double> patches(size_t(n * s * s));
  if (bag.has_masks) bag.mask_crops.resize(size_t(n * s * s));
  bag.slice_index.resize(size_t(n));

  for (int64_t i = 0; i < n; ++i) {
    int64_t z = rng.uniform_int(e.d);
    int64_t y0 = rng.uniform_int(e.h - s + 1);
    int64_t x0 = rng.uniform_int(e.w - s + 1);
    bag.slice_index[size_t(i)] = z;
    for (int64_t y = 0; y < s; ++y) {
      const float* src =
          windowed.voxels.data() + (z * e.h + y0 + y) * e.w + x0;
      double* dst = patches.data() + (i * s + y) * s;
      for (int64_t x = 0; x < s; ++x) dst[x] = double(src[x]);
      if (bag.has_masks) {
        const uint8_t* msrc =
            mask->labels.data() + (z * e.h + y0 + y) * e.w + x0;
        uint8_t* mdst = bag.mask_crops.data() + size_t((i * s + y) * s);
        std::copy(msrc, msrc + s, mdst);
      }
    }
  }
  bag.patches = Tensor::from_data({n, 1, s, s}, std::move(patches));
  return bag;
}

std::vector<TrainItem> balance_by_duplication(std::vector<TrainItem> items) {
  int64_t severe = 0, nonsevere = 0;
  for (const TrainItem& it : items) (it.severe ? severe : nonsevere)++;
  if (severe == 0) {
    if (nonsevere > 0)
      std::cerr << "warning: no severe cases in training split; "
                   "skipping duplication balancing\n";
    return items;
  }
  if (severe >= nonsevere) return items;
  int64_t copies = (nonsevere + severe - 1) / severe;  // originals included
  std::vector<TrainItem> out;
  out.reserve(items.size() + size_t(severe * (copies - 1)));
  for (const TrainItem& it : items) out.push_back(it);
  for (int64_t dup = 1; dup < copies; ++dup)
    for (const TrainItem& it : items)
      if (it.severe) {
        TrainItem copy = it;
        copy.duplicate = int(dup);
        out.push_back(copy);
      }
  return out;
}

}  // namespace lobemil
