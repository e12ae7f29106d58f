#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lobemil/rng.hpp"

namespace lobemil {

struct Extents {
  int64_t d = 0, h = 0, w = 0;
  int64_t voxels() const { return d * h * w; }
  bool operator==(const Extents&) const = default;
};

// 3D scalar image in pseudo-HU. `units` records whether the voxels are raw
// pseudo-HU or already windowed to [0,255]; re-windowing a windowed volume
// is a no-op.
struct Volume {
  Extents extents;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::vector<float> voxels;
  enum class Units { kPseudoHu, kNormalized };
  Units units = Units::kPseudoHu;

  float at(int64_t z, int64_t y, int64_t x) const {
    return voxels[size_t((z * extents.h + y) * extents.w + x)];
  }
};

// Voxel-wise lobe labels: 0 background/body, 1..5 lobes.
struct LobeMask {
  Extents extents;
  std::vector<uint8_t> labels;

  uint8_t at(int64_t z, int64_t y, int64_t x) const {
    return labels[size_t((z * extents.h + y) * extents.w + x)];
  }
};

inline constexpr int kLobeCount = 5;

struct CaseRecord {
  std::string id;
  std::string volume_file;                 // relative to dataset root
  std::optional<std::string> mask_file;
  bool severe = false;
  std::string patient_id;
  uint64_t seed = 0;
  double infected_fraction = 0.0;
};

struct PhantomConfig {
  // Per-case extent ranges (inclusive).
  int64_t depth_min = 40, depth_max = 56;
  int64_t height_min = 88, height_max = 104;
  int64_t width_min = 88, width_max = 104;
  double spacing_inplane_min = 0.6, spacing_inplane_max = 1.0;
  double spacing_axial_min = 1.0, spacing_axial_max = 8.0;

  double tau = 0.15;          // severe iff infected lung fraction >= tau
  double severe_prob = 0.2;   // draw of severe-intent cases

  // Infected-fraction targets live well on either side of tau so labels are
  // recoverable from geometry with a margin.
  double nonsevere_fraction_max = 0.06;
  double severe_fraction_min = 0.30, severe_fraction_max = 0.48;
  int max_blobs = 200;

  // Pseudo-HU levels. Background stays exactly at -1200 so the body
  // threshold is unambiguous; each lobe gets its own level near -800 so a
  // patch-local segmenter can tell lobes apart.
  double background_hu = -1200.0;
  double body_hu = 0.0;
  double body_noise_sd = 20.0;
  std::array<double, kLobeCount> lobe_hu{-880.0, -840.0, -800.0, -760.0,
                                         -720.0};
  double lung_noise_sd = 12.0;
  double infection_hu = -300.0;
  double infection_noise_sd = 10.0;

  void validate() const;  // throws on degenerate geometry
};

struct GeneratedCase {
  Volume volume;
  LobeMask mask;
  bool severe = false;
  double infected_fraction = 0.0;
};

// Fully determined by (seed, config).
GeneratedCase generate_case(uint64_t seed, const PhantomConfig& config);

// ---- dataset on disk -----------------------------------------------------
// <root>/manifest.json, <root>/cases/<id>.vol, <root>/cases/<id>.mask

enum class DatasetErrorKind {
  kMissingFile,
  kCorruptHeader,
  kTruncatedPayload,
  kExtentMismatch,
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

void write_volume(const std::string& path, const Volume& v);
Volume read_volume(const std::string& path);
void write_mask(const std::string& path, const LobeMask& m);
LobeMask read_mask(const std::string& path);

struct Manifest {
  uint64_t seed = 0;
  double tau = 0.15;
  std::vector<CaseRecord> cases;  // stable order
};

void write_manifest(const std::string& root, const Manifest& m);
Manifest read_manifest(const std::string& root);

struct DatasetGenOptions {
  int n_cases = 120;
  int n_patients = 40;
  double mask_fraction = 0.15;
  uint64_t seed = 7;
  PhantomConfig phantom;
};

// Generates and writes a full dataset; returns the manifest.
Manifest generate_dataset(const std::string& root,
                          const DatasetGenOptions& options);

}  // namespace lobemil
