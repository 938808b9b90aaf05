#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dcl {

struct Dims {
  int d = 0, h = 0, w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(d) * h * w;
  }
  bool operator==(const Dims&) const = default;
};

// Dense 3D scalar field, value order x-fastest (index = (z*H + y)*W + x).
struct Volume {
  Dims dims;
  std::vector<float> values;

  Volume() = default;
  Volume(Dims dm, float fill = 0.f) : dims(dm), values(dm.count(), fill) {}

  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * dims.h + y) * dims.w + x;
  }
  float at(int z, int y, int x) const { return values[index(z, y, x)]; }
  float& at(int z, int y, int x) { return values[index(z, y, x)]; }
};

// Per-voxel boolean region of interest, one byte per voxel, values {0,1}.
struct Mask {
  Dims dims;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(Dims dm, std::uint8_t fill = 0) : dims(dm), values(dm.count(), fill) {}

  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * dims.h + y) * dims.w + x;
  }
  bool at(int z, int y, int x) const { return values[index(z, y, x)] != 0; }
  void set(int z, int y, int x, bool v) { values[index(z, y, x)] = v ? 1 : 0; }
  std::size_t set_count() const;
};

struct Subject {
  std::string id;
  Volume volume;
  Mask mask;
  int true_class = -1;  // -1 when unknown; used only by evaluation
};

struct Dataset {
  std::vector<Subject> subjects;
  int k_true = 0;
};

// Raw file I/O. A <name>.f32raw / <name>.u8raw payload always travels with a
// <name>.json sidecar ({"dims":[D,H,W],"dtype":...,"kind":...}).
Volume load_volume(const std::filesystem::path& raw_path);
void save_volume(const Volume& volume, const std::filesystem::path& raw_path);
Mask load_mask(const std::filesystem::path& raw_path);
void save_mask(const Mask& mask, const std::filesystem::path& raw_path);

double masked_mean(const Volume& volume, const Mask& mask);

// Synthetic phantom: centered ellipsoid "lung" (~40% of the box) with a
// class-dependent intensity pattern inside. Deterministic per
// (class_id, dims, seed).
Subject generate_phantom(int class_id, Dims dims, std::uint64_t seed);

Dataset generate_dataset(int k_true, int n_per_class, Dims dims,
                         std::uint64_t seed);

// Manifest is a JSON list of {id, volume_path, mask_path, true_class};
// paths are relative to the manifest's directory.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace dcl
