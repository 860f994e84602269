#include "relformer/data/storage.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace relformer::data {

namespace {

constexpr char kMagic[4] = {'R', 'F', 'T', 'N'};

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

template <typename T>
constexpr DType DTypeOf() {
  if constexpr (std::is_same_v<T, float>) {
    return DType::kFloat32;
  } else {
    static_assert(std::is_same_v<T, double>);
    return DType::kFloat64;
  }
}

std::ofstream OpenOut(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  return fields;
}

double ParseReal(const std::string& s, const std::string& path) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw IoError(path + ": bad number '" + s + "'");
  return v;
}

std::size_t ParseId(const std::string& s, const std::string& path) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) throw IoError(path + ": bad id '" + s + "'");
  return std::stoull(s);
}

}  // namespace

template <typename T>
void WriteTensorFile(const std::string& path, const std::vector<std::size_t>& shape, std::span<const T> data) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != data.size()) throw InvalidInput("write_tensor: shape does not match the payload for " + path);
  if (shape.size() > 255) throw InvalidInput("write_tensor: rank too large");
  auto out = OpenOut(path, true);
  const std::uint8_t header[4] = {static_cast<std::uint8_t>(DTypeOf<T>()), static_cast<std::uint8_t>(shape.size()), 0, 0};
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(header), 4);
  for (std::size_t d : shape) {
    const auto v = static_cast<std::uint64_t>(d);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) throw IoError("write failed: " + path);
}

template <typename T>
RawTensor<T> ReadTensorFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  std::uint8_t header[4];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path + ": not a tensor file");
  if (header[0] != static_cast<std::uint8_t>(DTypeOf<T>())) {
    throw IoError(path + ": dtype code " + std::to_string(header[0]) + " does not match the requested type");
  }
  RawTensor<T> t;
  std::size_t n = 1;
  for (std::uint8_t i = 0; i < header[1]; ++i) {
    std::uint64_t d = 0;
    in.read(reinterpret_cast<char*>(&d), sizeof d);
    t.shape.push_back(static_cast<std::size_t>(d));
    n *= static_cast<std::size_t>(d);
  }
  t.data.resize(n);
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw IoError(path + ": truncated payload");
  in.peek();
  if (!in.eof()) throw IoError(path + ": trailing bytes after payload");
  return t;
}

template void WriteTensorFile<float>(const std::string&, const std::vector<std::size_t>&, std::span<const float>);
template void WriteTensorFile<double>(const std::string&, const std::vector<std::size_t>&, std::span<const double>);
template RawTensor<float> ReadTensorFile<float>(const std::string&);
template RawTensor<double> ReadTensorFile<double>(const std::string&);

void SaveImage(const std::string& path, const Image& image) {
  WriteTensorFile<float>(path, {image.height, image.width, 3}, image.pixels);
}

Image LoadImage(const std::string& path) {
  auto t = ReadTensorFile<float>(path);
  if (t.shape.size() != 3 || t.shape[2] != 3) throw IoError(path + ": expected an H x W x 3 image");
  return {t.shape[0], t.shape[1], std::move(t.data)};
}

void WritePosesCsv(const std::string& path, const std::vector<Pose>& poses) {
  std::string text = "view_id,tx,ty,tz,r11,r12,r13,r21,r22,r23,r31,r32,r33\n";
  char buf[64];
  for (std::size_t id = 0; id < poses.size(); ++id) {
    text += std::to_string(id);
    auto put = [&](double v) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      text += buf;
    };
    for (int i = 0; i < 3; ++i) put(poses[id].x[i]);
    const auto& m = poses[id].R.matrix();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) put(m(r, c));
    }
    text += '\n';
  }
  WriteTextFile(path, text);
}

std::vector<Pose> ReadPosesCsv(const std::string& path) {
  std::stringstream in(ReadTextFile(path));
  std::string line;
  if (!std::getline(in, line) || line != "view_id,tx,ty,tz,r11,r12,r13,r21,r22,r23,r31,r32,r33") {
    throw IoError(path + ": unexpected header");
  }
  std::vector<Pose> poses;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = SplitCsv(line);
    if (f.size() != 13) throw IoError(path + ": expected 13 fields, got " + std::to_string(f.size()));
    if (ParseId(f[0], path) != poses.size()) throw IoError(path + ": view ids must be 0, 1, 2, ...");
    Pose p;
    for (int i = 0; i < 3; ++i) p.x[i] = ParseReal(f[1 + static_cast<std::size_t>(i)], path);
    geometry::Mat3 m;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m(r, c) = ParseReal(f[4 + static_cast<std::size_t>(3 * r + c)], path);
    }
    try {
      p.R = geometry::Rotation(m);
    } catch (const std::exception& e) {
      throw IoError(path + ": view " + f[0] + ": " + e.what());
    }
    poses.push_back(p);
  }
  return poses;
}

void WritePairsCsv(const std::string& path, const std::vector<IdPair>& pairs) {
  std::string text = "query_id,ref_id\n";
  for (const auto& [q, r] : pairs) text += std::to_string(q) + "," + std::to_string(r) + "\n";
  WriteTextFile(path, text);
}

std::vector<IdPair> ReadPairsCsv(const std::string& path) {
  std::stringstream in(ReadTextFile(path));
  std::string line;
  if (!std::getline(in, line) || line != "query_id,ref_id") throw IoError(path + ": unexpected header");
  std::vector<IdPair> pairs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = SplitCsv(line);
    if (f.size() != 2) throw IoError(path + ": expected 2 fields");
    pairs.emplace_back(ParseId(f[0], path), ParseId(f[1], path));
  }
  return pairs;
}

void EnsureDirectory(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec || !std::filesystem::is_directory(path)) throw IoError("cannot create directory " + path + ": " + ec.message());
}

void WriteTextFile(const std::string& path, const std::string& text) {
  auto out = OpenOut(path, true);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string ReadTextFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace relformer::data
