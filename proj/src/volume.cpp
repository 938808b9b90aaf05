#include "dcl/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dcl/rng.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw volume I/O assumes a little-endian host");

namespace dcl {

namespace {

using nlohmann::json;

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path) {
  std::filesystem::path p = raw_path;
  p.replace_extension(".json");
  return p;
}

json read_sidecar(const std::filesystem::path& raw_path,
                  const std::string& expected_kind,
                  const std::string& expected_dtype, Dims& dims_out) {
  const auto side = sidecar_path(raw_path);
  std::ifstream in(side);
  if (!in) {
    throw std::runtime_error("missing sidecar file: " + side.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad sidecar " + side.string() + ": " + e.what());
  }
  if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3) {
    throw std::runtime_error("sidecar " + side.string() +
                             ": \"dims\" must be a [D,H,W] array");
  }
  if (j.value("kind", "") != expected_kind) {
    throw std::runtime_error("sidecar " + side.string() + ": expected kind \"" +
                             expected_kind + "\"");
  }
  if (j.value("dtype", "") != expected_dtype) {
    throw std::runtime_error("sidecar " + side.string() +
                             ": expected dtype \"" + expected_dtype + "\"");
  }
  dims_out.d = j["dims"][0].get<int>();
  dims_out.h = j["dims"][1].get<int>();
  dims_out.w = j["dims"][2].get<int>();
  if (dims_out.d < 1 || dims_out.h < 1 || dims_out.w < 1) {
    throw std::runtime_error("sidecar " + side.string() + ": non-positive dims");
  }
  return j;
}

void write_sidecar(const std::filesystem::path& raw_path, Dims dims,
                   const std::string& kind, const std::string& dtype) {
  json j;
  j["dims"] = {dims.d, dims.h, dims.w};
  j["dtype"] = dtype;
  j["kind"] = kind;
  const auto side = sidecar_path(raw_path);
  std::ofstream out(side);
  if (!out) {
    throw std::runtime_error("cannot write sidecar: " + side.string());
  }
  out << j.dump(2) << "\n";
}

std::vector<char> read_payload(const std::filesystem::path& raw_path,
                               std::size_t expected_bytes) {
  std::ifstream in(raw_path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("missing raw file: " + raw_path.string());
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() != expected_bytes) {
    throw std::runtime_error("payload size mismatch: " + raw_path.string() +
                             " holds " + std::to_string(bytes.size()) +
                             " bytes, sidecar dims imply " +
                             std::to_string(expected_bytes));
  }
  return bytes;
}

void write_payload(const std::filesystem::path& raw_path, const void* data,
                   std::size_t bytes) {
  std::ofstream out(raw_path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write raw file: " + raw_path.string());
  }
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) {
    throw std::runtime_error("short write: " + raw_path.string());
  }
}

}  // namespace

std::size_t Mask::set_count() const {
  std::size_t n = 0;
  for (std::uint8_t v : values) n += (v != 0);
  return n;
}

Volume load_volume(const std::filesystem::path& raw_path) {
  Dims dims;
  read_sidecar(raw_path, "volume", "f32le", dims);
  const auto bytes = read_payload(raw_path, dims.count() * sizeof(float));
  Volume v(dims);
  std::memcpy(v.values.data(), bytes.data(), bytes.size());
  for (float x : v.values) {
    if (!std::isfinite(x)) {
      throw std::runtime_error("non-finite value in " + raw_path.string());
    }
  }
  return v;
}

void save_volume(const Volume& volume, const std::filesystem::path& raw_path) {
  if (volume.values.size() != volume.dims.count()) {
    throw std::invalid_argument("volume value count does not match dims");
  }
  write_payload(raw_path, volume.values.data(),
                volume.values.size() * sizeof(float));
  write_sidecar(raw_path, volume.dims, "volume", "f32le");
}

Mask load_mask(const std::filesystem::path& raw_path) {
  Dims dims;
  read_sidecar(raw_path, "mask", "u8", dims);
  const auto bytes = read_payload(raw_path, dims.count());
  Mask m(dims);
  std::memcpy(m.values.data(), bytes.data(), bytes.size());
  for (std::uint8_t v : m.values) {
    if (v > 1) {
      throw std::runtime_error("mask value outside {0,1} in " +
                               raw_path.string());
    }
  }
  return m;
}

void save_mask(const Mask& mask, const std::filesystem::path& raw_path) {
  if (mask.values.size() != mask.dims.count()) {
    throw std::invalid_argument("mask value count does not match dims");
  }
  for (std::uint8_t v : mask.values) {
    if (v > 1) {
      throw std::invalid_argument("mask value outside {0,1}");
    }
  }
  write_payload(raw_path, mask.values.data(), mask.values.size());
  write_sidecar(raw_path, mask.dims, "mask", "u8");
}

double masked_mean(const Volume& volume, const Mask& mask) {
  if (!(volume.dims == mask.dims)) {
    throw std::invalid_argument("masked_mean: volume/mask dims differ");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    if (mask.values[i]) {
      sum += volume.values[i];
      ++n;
    }
  }
  if (n == 0) {
    throw std::invalid_argument("masked_mean: empty mask");
  }
  return sum / static_cast<double>(n);
}

namespace {

constexpr int kMaxPhantomClasses = 6;

// Ellipsoid semi-axis scale giving ~40% fill of the bounding box
// ((4/3)*pi*(a/2)^3 with a = 0.914 of each dim).
constexpr double kEllipsoidScale = 0.914;

Mask make_ellipsoid_mask(Dims dims) {
  Mask m(dims);
  const double cz = 0.5 * (dims.d - 1);
  const double cy = 0.5 * (dims.h - 1);
  const double cx = 0.5 * (dims.w - 1);
  const double rz = kEllipsoidScale * 0.5 * dims.d;
  const double ry = kEllipsoidScale * 0.5 * dims.h;
  const double rx = kEllipsoidScale * 0.5 * dims.w;
  for (int z = 0; z < dims.d; ++z) {
    for (int y = 0; y < dims.h; ++y) {
      for (int x = 0; x < dims.w; ++x) {
        const double az = (z - cz) / rz;
        const double ay = (y - cy) / ry;
        const double ax = (x - cx) / rx;
        m.set(z, y, x, az * az + ay * ay + ax * ax <= 1.0);
      }
    }
  }
  return m;
}

void mask_z_extent(const Mask& m, int& z_lo, int& z_hi) {
  z_lo = m.dims.d;
  z_hi = -1;
  for (int z = 0; z < m.dims.d; ++z) {
    for (int y = 0; y < m.dims.h && z_hi < z; ++y) {
      for (int x = 0; x < m.dims.w; ++x) {
        if (m.at(z, y, x)) {
          z_lo = std::min(z_lo, z);
          z_hi = z;
          break;
        }
      }
    }
  }
}

// Voxels inside the mask with any outside voxel within Euclidean distance 2.
std::vector<std::size_t> rim_voxels(const Mask& m, double rim_dist) {
  std::vector<std::size_t> out;
  const int r = static_cast<int>(rim_dist);
  for (int z = 0; z < m.dims.d; ++z) {
    for (int y = 0; y < m.dims.h; ++y) {
      for (int x = 0; x < m.dims.w; ++x) {
        if (!m.at(z, y, x)) continue;
        bool near_boundary = false;
        for (int dz = -r; dz <= r && !near_boundary; ++dz) {
          for (int dy = -r; dy <= r && !near_boundary; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
              if (dz * dz + dy * dy + dx * dx > rim_dist * rim_dist) continue;
              const int nz = z + dz, ny = y + dy, nx = x + dx;
              const bool outside = nz < 0 || ny < 0 || nx < 0 ||
                                   nz >= m.dims.d || ny >= m.dims.h ||
                                   nx >= m.dims.w || !m.at(nz, ny, nx);
              if (outside) {
                near_boundary = true;
                break;
              }
            }
          }
        }
        if (near_boundary) out.push_back(m.index(z, y, x));
      }
    }
  }
  return out;
}

struct BlobPlan {
  int count;
  double r_lo, r_hi;
  enum Region { kAnywhere, kTopThird, kBottomThird } region;
};

void stamp_blobs(Volume& v, const Mask& m, const BlobPlan& plan, Rng& rng) {
  int z_lo, z_hi;
  mask_z_extent(m, z_lo, z_hi);
  const int extent = z_hi - z_lo + 1;
  int zmin = z_lo, zmax = z_hi;
  if (plan.region == BlobPlan::kTopThird) {
    zmax = z_lo + extent / 3;
  } else if (plan.region == BlobPlan::kBottomThird) {
    zmin = z_hi - extent / 3;
  }
  std::vector<std::size_t> candidates;
  for (int z = zmin; z <= zmax; ++z) {
    for (int y = 0; y < m.dims.h; ++y) {
      for (int x = 0; x < m.dims.w; ++x) {
        if (m.at(z, y, x)) candidates.push_back(m.index(z, y, x));
      }
    }
  }
  if (candidates.empty()) return;
  for (int b = 0; b < plan.count; ++b) {
    const std::size_t center = candidates[rng.bounded(candidates.size())];
    const int cz = static_cast<int>(center / (m.dims.h * m.dims.w));
    const int cy = static_cast<int>((center / m.dims.w) % m.dims.h);
    const int cx = static_cast<int>(center % m.dims.w);
    const double r = rng.uniform(plan.r_lo, plan.r_hi);
    const int ir = static_cast<int>(std::ceil(r));
    for (int dz = -ir; dz <= ir; ++dz) {
      for (int dy = -ir; dy <= ir; ++dy) {
        for (int dx = -ir; dx <= ir; ++dx) {
          if (dz * dz + dy * dy + dx * dx > r * r) continue;
          const int z = cz + dz, y = cy + dy, x = cx + dx;
          if (z < 0 || y < 0 || x < 0 || z >= m.dims.d || y >= m.dims.h ||
              x >= m.dims.w || !m.at(z, y, x)) {
            continue;
          }
          v.at(z, y, x) = static_cast<float>(0.22 + 0.05 * rng.uniform(-1., 1.));
        }
      }
    }
  }
}

}  // namespace

Subject generate_phantom(int class_id, Dims dims, std::uint64_t seed) {
  if (class_id < 0 || class_id >= kMaxPhantomClasses) {
    throw std::invalid_argument("generate_phantom: class_id " +
                                std::to_string(class_id) + " outside [0, " +
                                std::to_string(kMaxPhantomClasses) + ")");
  }
  if (dims.d < 8 || dims.h < 8 || dims.w < 8) {
    throw std::invalid_argument("generate_phantom: dims must be >= 8");
  }
  std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(class_id) + 1);
  s = mix_seed(s, static_cast<std::uint64_t>(dims.d));
  s = mix_seed(s, static_cast<std::uint64_t>(dims.h));
  s = mix_seed(s, static_cast<std::uint64_t>(dims.w));
  Rng rng(s);

  Subject subj;
  subj.true_class = class_id;
  subj.mask = make_ellipsoid_mask(dims);
  subj.volume = Volume(dims);

  // background / tissue base with uniform noise texture
  for (std::size_t i = 0; i < subj.volume.values.size(); ++i) {
    const double base = subj.mask.values[i] ? 0.60 : 0.20;
    subj.volume.values[i] =
        static_cast<float>(base + 0.05 * rng.uniform(-1., 1.));
  }

  const std::size_t voxels = dims.count();
  const int scaled = static_cast<int>(voxels / 400);  // ~10 at 16^3
  switch (class_id) {
    case 0:
      break;  // uniform texture only
    case 1:
      stamp_blobs(subj.volume, subj.mask,
                  {std::max(6, scaled), 1.2, 2.2, BlobPlan::kTopThird}, rng);
      break;
    case 2: {
      for (std::size_t idx : rim_voxels(subj.mask, 2.0)) {
        subj.volume.values[idx] =
            static_cast<float>(0.22 + 0.05 * rng.uniform(-1., 1.));
      }
      break;
    }
    case 3:
      stamp_blobs(subj.volume, subj.mask,
                  {std::max(4, scaled / 2), 2.5, 3.5, BlobPlan::kAnywhere},
                  rng);
      break;
    case 4:
      stamp_blobs(subj.volume, subj.mask,
                  {std::max(15, scaled * 3), 0.8, 1.4, BlobPlan::kAnywhere},
                  rng);
      break;
    case 5:
      stamp_blobs(subj.volume, subj.mask,
                  {std::max(6, scaled), 1.2, 2.2, BlobPlan::kBottomThird}, rng);
      break;
    default:
      break;
  }

  for (float& x : subj.volume.values) x = std::clamp(x, 0.f, 1.f);
  return subj;
}

Dataset generate_dataset(int k_true, int n_per_class, Dims dims,
                         std::uint64_t seed) {
  if (k_true < 2) {
    throw std::invalid_argument("generate_dataset: k_true must be >= 2");
  }
  if (k_true > kMaxPhantomClasses) {
    throw std::invalid_argument("generate_dataset: at most " +
                                std::to_string(kMaxPhantomClasses) +
                                " phantom classes available");
  }
  if (n_per_class < 1) {
    throw std::invalid_argument("generate_dataset: n_per_class must be >= 1");
  }
  Dataset ds;
  ds.k_true = k_true;
  for (int c = 0; c < k_true; ++c) {
    for (int j = 0; j < n_per_class; ++j) {
      const std::uint64_t subj_seed =
          mix_seed(seed, static_cast<std::uint64_t>(c) * n_per_class + j);
      ds.subjects.push_back(generate_phantom(c, dims, subj_seed));
    }
  }
  // deterministic Fisher-Yates shuffle
  Rng rng(mix_seed(seed, 0x5348uLL));
  for (std::size_t i = ds.subjects.size(); i > 1; --i) {
    std::swap(ds.subjects[i - 1], ds.subjects[rng.bounded(i)]);
  }
  char buf[16];
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "s%03zu", i);
    ds.subjects[i].id = buf;
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest = json::array();
  for (const Subject& s : dataset.subjects) {
    const std::string vol_name = s.id + ".f32raw";
    const std::string mask_name = s.id + "_mask.u8raw";
    save_volume(s.volume, dir / vol_name);
    save_mask(s.mask, dir / mask_name);
    manifest.push_back({{"id", s.id},
                        {"volume_path", vol_name},
                        {"mask_path", mask_name},
                        {"true_class", s.true_class}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) {
    throw std::runtime_error("cannot write manifest in " + dir.string());
  }
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::filesystem::path path = manifest_path;
  if (std::filesystem::is_directory(path)) path /= "manifest.json";
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("missing manifest: " + path.string());
  }
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad manifest " + path.string() + ": " + e.what());
  }
  if (!manifest.is_array()) {
    throw std::runtime_error("manifest must be a JSON list: " + path.string());
  }
  const auto base = path.parent_path();
  Dataset ds;
  int max_class = -1;
  for (const auto& entry : manifest) {
    Subject s;
    s.id = entry.at("id").get<std::string>();
    s.volume = load_volume(base / entry.at("volume_path").get<std::string>());
    s.mask = load_mask(base / entry.at("mask_path").get<std::string>());
    s.true_class = entry.value("true_class", -1);
    if (!(s.volume.dims == s.mask.dims)) {
      throw std::runtime_error("subject " + s.id + ": volume/mask dims differ");
    }
    max_class = std::max(max_class, s.true_class);
    ds.subjects.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    for (std::size_t j = i + 1; j < ds.subjects.size(); ++j) {
      if (ds.subjects[i].id == ds.subjects[j].id) {
        throw std::runtime_error("duplicate subject id: " + ds.subjects[i].id);
      }
    }
  }
  ds.k_true = max_class + 1;
  return ds;
}

}  // namespace dcl
