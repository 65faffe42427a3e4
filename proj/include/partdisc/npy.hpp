#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "partdisc/feature_map.hpp"

namespace partdisc {

// A float32 array read from or written to an NPY file.
struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

// Reads an NPY (v1.x / v2.x) file holding little-endian float32 data in C
// order. Throws DataError on a missing file, a malformed header, Fortran
// order, or any dtype other than '<f4'.
NpyArray read_npy(const std::filesystem::path& path);

// Writes an NPY v1.0 file with dtype '<f4'.
void write_npy(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
               const std::vector<float>& data);

// Rank-3 (h, w, c) wrappers; load rejects any other rank.
FeatureMap load_feature_map(const std::filesystem::path& path);
void save_feature_map(const std::filesystem::path& path, const FeatureMap& fm);

// Raw little-endian float32 blob, no header.
void write_raw_f32(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_raw_f32(const std::filesystem::path& path);

}  // namespace partdisc
