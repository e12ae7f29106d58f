#include "lobemil/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lobemil {

namespace fs = std::filesystem;
using json = nlohmann::json;

void PhantomConfig::validate() const {
  if (depth_min < 32 || height_min < 64 || width_min < 64)
    throw std::invalid_argument(
        "phantom config: extents must be at least 32x64x64");
  if (depth_max < depth_min || height_max < height_min ||
      width_max < width_min)
    throw std::invalid_argument("phantom config: empty extent range");
  if (tau <= 0.0 || tau >= 1.0)
    throw std::invalid_argument("phantom config: tau must be in (0,1)");
  if (nonsevere_fraction_max >= tau || severe_fraction_min < tau)
    throw std::invalid_argument(
        "phantom config: infected-fraction targets straddle tau");
  if (max_blobs < 0)
    throw std::invalid_argument("phantom config: max_blobs must be >= 0");
}

namespace {

struct Ellipsoid {
  double cz, cy, cx;   // center, voxel coords
  double az, ay, ax;   // semi-axes
  bool contains(double z, double y, double x) const {
    double u = (z - cz) / az, v = (y - cy) / ay, t = (x - cx) / ax;
    return u * u + v * v + t * t <= 1.0;
  }
};

// Right lung carries three lobes, left carries two, split by fixed planes
// in lung-local coordinates.
uint8_t lobe_of(const Ellipsoid& lung, bool left, double z, double y,
                double x) {
  double u = (z - lung.cz) / lung.az;
  double v = (y - lung.cy) / lung.ay;
  double s = v + 0.5 * u;
  if (left) return s < 0.0 ? 1 : 2;
  if (s < -0.35) return 3;
  if (s < 0.45) return 4;
  return 5;
}

}  // namespace

GeneratedCase generate_case(uint64_t seed, const PhantomConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed({seed, 0x70686eULL}));

  Extents ext;
  ext.d = cfg.depth_min + rng.uniform_int(cfg.depth_max - cfg.depth_min + 1);
  ext.h =
      cfg.height_min + rng.uniform_int(cfg.height_max - cfg.height_min + 1);
  ext.w = cfg.width_min + rng.uniform_int(cfg.width_max - cfg.width_min + 1);

  Volume vol;
  vol.extents = ext;
  double sp = rng.uniform(cfg.spacing_inplane_min, cfg.spacing_inplane_max);
  vol.spacing_mm = {rng.uniform(cfg.spacing_axial_min, cfg.spacing_axial_max),
                    sp, sp};
  vol.voxels.assign(size_t(ext.voxels()), float(cfg.background_hu));

  LobeMask mask;
  mask.extents = ext;
  mask.labels.assign(size_t(ext.voxels()), 0);

  Ellipsoid body{0.5 * double(ext.d), 0.5 * double(ext.h), 0.5 * double(ext.w),
                 0.48 * double(ext.d), 0.44 * double(ext.h),
                 0.46 * double(ext.w)};
  double jz = rng.uniform(0.95, 1.05), jy = rng.uniform(0.95, 1.05),
         jx = rng.uniform(0.95, 1.05);
  Ellipsoid left{0.50 * double(ext.d), 0.52 * double(ext.h),
                 0.30 * double(ext.w), 0.40 * double(ext.d) * jz,
                 0.36 * double(ext.h) * jy, 0.17 * double(ext.w) * jx};
  Ellipsoid right = left;
  right.cx = 0.70 * double(ext.w);

  if (left.az < 4 || left.ay < 8 || left.ax < 4)
    throw std::invalid_argument("phantom config: lungs do not fit extents");

  // Paint body, lungs and lobe labels.
  std::array<std::vector<int64_t>, kLobeCount> lobe_voxels;
  int64_t lung_total = 0;
  for (int64_t z = 0; z < ext.d; ++z)
    for (int64_t y = 0; y < ext.h; ++y)
      for (int64_t x = 0; x < ext.w; ++x) {
        size_t idx = size_t((z * ext.h + y) * ext.w + x);
        double zc = double(z) + 0.5, yc = double(y) + 0.5,
               xc = double(x) + 0.5;
        if (!body.contains(zc, yc, xc)) continue;
        bool in_left = left.contains(zc, yc, xc);
        bool in_right = !in_left && right.contains(zc, yc, xc);
        if (!in_left && !in_right) {
          vol.voxels[idx] =
              float(cfg.body_hu + rng.normal(0.0, cfg.body_noise_sd));
          continue;
        }
        uint8_t lobe =
            lobe_of(in_left ? left : right, in_left, zc, yc, xc);
        mask.labels[idx] = lobe;
        vol.voxels[idx] = float(cfg.lobe_hu[size_t(lobe - 1)] +
                                rng.normal(0.0, cfg.lung_noise_sd));
        lobe_voxels[size_t(lobe - 1)].push_back(int64_t(idx));
        ++lung_total;
      }

  for (int lobe = 0; lobe < kLobeCount; ++lobe)
    if (lobe_voxels[size_t(lobe)].empty())
      throw std::runtime_error("phantom geometry produced an empty lobe");

  // Infection blobs, concentrated in one or two target lobes.
  bool severe_intent = rng.uniform() < cfg.severe_prob;
  double target_fraction =
      severe_intent
          ? rng.uniform(cfg.severe_fraction_min, cfg.severe_fraction_max)
          : rng.uniform(0.0, cfg.nonsevere_fraction_max);
  // Severe infections involve both lungs; mild ones stay in one or two
  // lobes. Blob centers live in the target lobes, spill is unrestricted.
  std::vector<int> targets;
  if (severe_intent) {
    targets.push_back(int(rng.uniform_int(2)));       // left: lobes 1-2
    targets.push_back(2 + int(rng.uniform_int(3)));   // right: lobes 3-5
    targets.push_back(int(rng.uniform_int(kLobeCount)));
  } else {
    targets.push_back(int(rng.uniform_int(kLobeCount)));
    if (rng.uniform() < 0.5) {
      int second = int(rng.uniform_int(kLobeCount));
      if (second != targets[0]) targets.push_back(second);
    }
  }

  std::vector<uint8_t> infected(size_t(ext.voxels()), 0);
  int64_t infected_count = 0;
  if (target_fraction > 0.005) {
    for (int blob = 0; blob < cfg.max_blobs; ++blob) {
      double fraction = double(infected_count) / double(lung_total);
      if (fraction >= target_fraction) break;
      const auto& pool =
          lobe_voxels[size_t(targets[size_t(rng.uniform_int(
              int64_t(targets.size())))])];
      int64_t center = pool[size_t(rng.uniform_int(int64_t(pool.size())))];
      int64_t czi = center / (ext.h * ext.w);
      int64_t cyi = (center / ext.w) % ext.h;
      int64_t cxi = center % ext.w;
      double rz = severe_intent ? rng.uniform(4.0, 8.0) : rng.uniform(1.5, 3.0);
      double ry =
          severe_intent ? rng.uniform(8.0, 15.0) : rng.uniform(2.0, 4.0);
      double rx =
          severe_intent ? rng.uniform(8.0, 15.0) : rng.uniform(2.0, 4.0);
      int64_t z0 = std::max<int64_t>(0, czi - int64_t(rz) - 1);
      int64_t z1 = std::min(ext.d - 1, czi + int64_t(rz) + 1);
      int64_t y0 = std::max<int64_t>(0, cyi - int64_t(ry) - 1);
      int64_t y1 = std::min(ext.h - 1, cyi + int64_t(ry) + 1);
      int64_t x0 = std::max<int64_t>(0, cxi - int64_t(rx) - 1);
      int64_t x1 = std::min(ext.w - 1, cxi + int64_t(rx) + 1);
      for (int64_t z = z0; z <= z1; ++z)
        for (int64_t y = y0; y <= y1; ++y)
          for (int64_t x = x0; x <= x1; ++x) {
            double du = (double(z) - double(czi)) / rz;
            double dv = (double(y) - double(cyi)) / ry;
            double dt = (double(x) - double(cxi)) / rx;
            if (du * du + dv * dv + dt * dt > 1.0) continue;
            size_t idx = size_t((z * ext.h + y) * ext.w + x);
            if (mask.labels[idx] == 0 || infected[idx]) continue;
            // Keep non-severe cases clear of the tau threshold.
            if (!severe_intent &&
                double(infected_count + 1) / double(lung_total) >
                    0.6 * cfg.tau)
              goto blobs_done;
            infected[idx] = 1;
            ++infected_count;
            vol.voxels[idx] = float(cfg.infection_hu +
                                    rng.normal(0.0, cfg.infection_noise_sd));
          }
    }
  }
blobs_done:;

  GeneratedCase out;
  out.infected_fraction = double(infected_count) / double(lung_total);
  out.severe = out.infected_fraction >= cfg.tau;
  out.volume = std::move(vol);
  out.mask = std::move(mask);
  return out;
}

// ---- file formats ----------------------------------------------------------

namespace {

constexpr uint64_t kMaxHeader = 1u << 20;

void write_blob(const std::string& path, const json& header,
                const void* payload, size_t payload_bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  std::string head = header.dump();
  uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), std::streamsize(head.size()));
  out.write(static_cast<const char*>(payload),
            std::streamsize(payload_bytes));
  if (!out) throw std::runtime_error("short write to " + path);
}

json read_blob_header(std::ifstream& in, const std::string& path) {
  uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  if (!in || head_len == 0 || head_len > kMaxHeader)
    throw DatasetError(DatasetErrorKind::kCorruptHeader,
                       "corrupt header in " + path);
  std::string head(head_len, '\0');
  in.read(head.data(), std::streamsize(head_len));
  if (!in)
    throw DatasetError(DatasetErrorKind::kCorruptHeader,
                       "corrupt header in " + path);
  json header = json::parse(head, nullptr, false);
  if (header.is_discarded() || !header.is_object())
    throw DatasetError(DatasetErrorKind::kCorruptHeader,
                       "corrupt header in " + path);
  return header;
}

Extents extents_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3)
    throw DatasetError(DatasetErrorKind::kCorruptHeader,
                       "bad extents in " + path);
  Extents e{j[0].get<int64_t>(), j[1].get<int64_t>(), j[2].get<int64_t>()};
  if (e.d <= 0 || e.h <= 0 || e.w <= 0)
    throw DatasetError(DatasetErrorKind::kExtentMismatch,
                       "non-positive extents in " + path);
  return e;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DatasetError(DatasetErrorKind::kMissingFile,
                       "missing file " + path);
  return in;
}

}  // namespace

void write_volume(const std::string& path, const Volume& v) {
  json header = {
      {"extents", {v.extents.d, v.extents.h, v.extents.w}},
      {"spacing_mm", v.spacing_mm},
      {"dtype", "f32"},
      {"units", v.units == Volume::Units::kPseudoHu ? "pseudo_hu"
                                                    : "normalized"},
  };
  write_blob(path, header, v.voxels.data(), v.voxels.size() * sizeof(float));
}

Volume read_volume(const std::string& path) {
  std::ifstream in = open_input(path);
  json header = read_blob_header(in, path);
  Volume v;
  v.extents = extents_from_json(header.at("extents"), path);
  if (header.at("dtype").get<std::string>() != "f32")
    throw DatasetError(DatasetErrorKind::kCorruptHeader,
                       "unsupported dtype in " + path);
  auto sp = header.at("spacing_mm");
  v.spacing_mm = {sp[0].get<double>(), sp[1].get<double>(),
                  sp[2].get<double>()};
  v.units = header.at("units").get<std::string>() == "pseudo_hu"
                ? Volume::Units::kPseudoHu
                : Volume::Units::kNormalized;
  v.voxels.resize(size_t(v.extents.voxels()));
  in.read(reinterpret_cast<char*>(v.voxels.data()),
          std::streamsize(v.voxels.size() * sizeof(float)));
  if (!in)
    throw DatasetError(DatasetErrorKind::kTruncatedPayload,
                       "truncated payload in " + path);
  char extra;
  if (in.read(&extra, 1))
    throw DatasetError(DatasetErrorKind::kExtentMismatch,
                       "payload larger than declared extents in " + path);
  return v;
}

void write_mask(const std::string& path, const LobeMask& m) {
  json header = {
      {"extents", {m.extents.d, m.extents.h, m.extents.w}},
      {"dtype", "u8"},
  };
  write_blob(path, header, m.labels.data(), m.labels.size());
}

LobeMask read_mask(const std::string& path) {
  std::ifstream in = open_input(path);
  json header = read_blob_header(in, path);
  LobeMask m;
  m.extents = extents_from_json(header.at("extents"), path);
  if (header.at("dtype").get<std::string>() != "u8")
    throw DatasetError(DatasetErrorKind::kCorruptHeader,
                       "unsupported dtype in " + path);
  m.labels.resize(size_t(m.extents.voxels()));
  in.read(reinterpret_cast<char*>(m.labels.data()),
          std::streamsize(m.labels.size()));
  if (!in)
    throw DatasetError(DatasetErrorKind::kTruncatedPayload,
                       "truncated payload in " + path);
  char extra;
  if (in.read(&extra, 1))
    throw DatasetError(DatasetErrorKind::kExtentMismatch,
                       "payload larger than declared extents in " + path);
  return m;
}

void write_manifest(const std::string& root, const Manifest& m) {
  json cases = json::array();
  for (const CaseRecord& c : m.cases) {
    json jc = {
        {"id", c.id},
        {"volume", c.volume_file},
        {"severity", c.severe ? "severe" : "non-severe"},
        {"patient", c.patient_id},
        {"seed", c.seed},
        {"infected_fraction", c.infected_fraction},
    };
    if (c.mask_file)
      jc["mask"] = *c.mask_file;
    else
      jc["mask"] = nullptr;
    cases.push_back(jc);
  }
  json doc = {{"seed", m.seed}, {"tau", m.tau}, {"cases", cases}};
  std::ofstream out(fs::path(root) / "manifest.json",
                    std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest under " + root);
  out << doc.dump(2) << "\n";
}

Manifest read_manifest(const std::string& root) {
  fs::path p = fs::path(root) / "manifest.json";
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw DatasetError(DatasetErrorKind::kMissingFile,
                       "missing manifest " + p.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded())
    throw DatasetError(DatasetErrorKind::kCorruptHeader,
                       "corrupt manifest " + p.string());
  Manifest m;
  m.seed = doc.at("seed").get<uint64_t>();
  m.tau = doc.at("tau").get<double>();
  for (const json& jc : doc.at("cases")) {
    CaseRecord c;
    c.id = jc.at("id").get<std::string>();
    c.volume_file = jc.at("volume").get<std::string>();
    if (!jc.at("mask").is_null())
      c.mask_file = jc.at("mask").get<std::string>();
    c.severe = jc.at("severity").get<std::string>() == "severe";
    c.patient_id = jc.at("patient").get<std::string>();
    c.seed = jc.at("seed").get<uint64_t>();
    c.infected_fraction = jc.at("infected_fraction").get<double>();
    m.cases.push_back(std::move(c));
  }
  return m;
}

Manifest generate_dataset(const std::string& root,
                          const DatasetGenOptions& opt) {
  if (opt.n_cases < 1)
    throw std::invalid_argument("dataset generation needs at least one case");
  if (opt.n_patients < 1 || opt.n_patients > opt.n_cases)
    throw std::invalid_argument("patient count must be in [1, cases]");
  opt.phantom.validate();

  fs::create_directories(fs::path(root) / "cases");

  // Mask-bearing subset: deterministic shuffle, exact count.
  std::vector<int> order(size_t(opt.n_cases));
  for (int i = 0; i < opt.n_cases; ++i) order[size_t(i)] = i;
  Rng mask_rng(derive_seed({opt.seed, 0x6d61736bULL}));
  mask_rng.shuffle(order);
  int n_masked = int(std::llround(opt.mask_fraction * opt.n_cases));
  std::vector<bool> masked(size_t(opt.n_cases), false);
  for (int i = 0; i < n_masked; ++i) masked[size_t(order[size_t(i)])] = true;

  Manifest m;
  m.seed = opt.seed;
  m.tau = opt.phantom.tau;
  for (int i = 0; i < opt.n_cases; ++i) {
    CaseRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%03d", i);
    rec.id = buf;
    std::snprintf(buf, sizeof(buf), "patient_%03d", i % opt.n_patients);
    rec.patient_id = buf;
    rec.seed = derive_seed({opt.seed, 0x63617365ULL, uint64_t(i)});

    GeneratedCase gen = generate_case(rec.seed, opt.phantom);
    rec.severe = gen.severe;
    rec.infected_fraction = gen.infected_fraction;
    rec.volume_file = "cases/" + rec.id + ".vol";
    write_volume((fs::path(root) / rec.volume_file).string(), gen.volume);
    if (masked[size_t(i)]) {
      rec.mask_file = "cases/" + rec.id + ".mask";
      write_mask((fs::path(root) / *rec.mask_file).string(), gen.mask);
    }
    m.cases.push_back(std::move(rec));
  }
  write_manifest(root, m);
  return m;
}

}  // namespace lobemil
