#pragma once

// On-disk formats.
//
// Raw tensor file (little-endian):
//   bytes 0-3   magic "RFTN"
//   byte  4     dtype code: 1 = float32, 2 = float64
//   byte  5     rank r
//   bytes 6-7   zero
//   r x u64     dimensions
//   payload     prod(dims) elements
//
// poses.csv: header view_id,tx,ty,tz,r11,...,r33 with the rotation row-major
// and every real printed with 17 significant digits.
// pairs.csv: header query_id,ref_id.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relformer/data/scene.hpp"

namespace relformer::data {

enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

template <typename T>
struct RawTensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;
};

template <typename T>
void WriteTensorFile(const std::string& path, const std::vector<std::size_t>& shape, std::span<const T> data);

// Throws IoError for a missing file, bad magic, wrong dtype or truncation.
template <typename T>
RawTensor<T> ReadTensorFile(const std::string& path);

void SaveImage(const std::string& path, const Image& image);
Image LoadImage(const std::string& path);

// Row i is view id i.
void WritePosesCsv(const std::string& path, const std::vector<Pose>& poses);
std::vector<Pose> ReadPosesCsv(const std::string& path);

using IdPair = std::pair<std::size_t, std::size_t>;  // (query_id, ref_id)
void WritePairsCsv(const std::string& path, const std::vector<IdPair>& pairs);
std::vector<IdPair> ReadPairsCsv(const std::string& path);

// Creates the directory (and parents); throws IoError with the path.
void EnsureDirectory(const std::string& path);
void WriteTextFile(const std::string& path, const std::string& text);
std::string ReadTextFile(const std::string& path);

}  // namespace relformer::data
