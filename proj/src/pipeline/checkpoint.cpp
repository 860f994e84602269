#include "relformer/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "relformer/json_util.hpp"

namespace relformer::pipeline {

namespace {

constexpr char kMagic[4] = {'R', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

void WriteFloats(std::ofstream& out, const std::vector<float>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> ReadFloats(std::ifstream& in, std::size_t n, const std::string& path) {
  std::vector<float> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw IoError(path + ": truncated payload");
  return v;
}

}  // namespace

void SaveCheckpoint(const std::string& path, const Checkpoint& c) {
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t i = 0; i < c.names.size(); ++i) table.push_back({{"name", c.names[i]}, {"shape", c.shapes[i]}});
  const nlohmann::json header = {
      {"model", model::ToJson(c.model)},
      {"config_hash", json::HexHash(c.config_hash)},
      {"dataset_hash", json::HexHash(c.dataset_hash)},
      {"seed", c.seed},
      {"step", c.step},
      {"epoch", c.epoch},
      {"augment", c.augment},
      {"rescale", c.rescale},
      {"adam",
       {{"lr", c.adam.lr},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"eps", c.adam.eps},
        {"weight_decay", c.adam.weight_decay},
        {"step", c.adam_step}}},
      {"rng", c.rng_state},
      {"params", table},
  };
  const std::string text = header.dump();
  // Write to a sibling file first so an interrupted save never clobbers a
  // good checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    const std::uint64_t len = text.size();
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& v : c.values) WriteFloats(out, v);
    for (const auto& v : c.m) WriteFloats(out, v);
    for (const auto& v : c.v) WriteFloats(out, v);
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot rename " + tmp + " to " + path);
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path + ": not a checkpoint");
  if (version != kVersion) throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  if (len > (1u << 30)) throw IoError(path + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path + ": truncated header");

  Checkpoint c;
  try {
    const auto h = nlohmann::json::parse(text);
    c.model = model::ModelConfigFromJson(h.at("model"));
    c.config_hash = std::stoull(h.at("config_hash").get<std::string>(), nullptr, 16);
    c.dataset_hash = std::stoull(h.at("dataset_hash").get<std::string>(), nullptr, 16);
    c.seed = h.at("seed").get<std::uint64_t>();
    c.step = h.at("step").get<std::uint64_t>();
    c.epoch = h.at("epoch").get<std::uint64_t>();
    c.augment = h.at("augment").get<bool>();
    c.rescale = h.at("rescale").get<double>();
    const auto& a = h.at("adam");
    c.adam = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>(),
              a.at("weight_decay").get<double>()};
    c.adam_step = a.at("step").get<std::uint64_t>();
    c.rng_state = h.at("rng").get<std::string>();
    for (const auto& p : h.at("params")) {
      c.names.push_back(p.at("name").get<std::string>());
      c.shapes.push_back(p.at("shape").get<diff::Shape>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(path + ": bad header: " + e.what());
  }
  if (model::ConfigHash(c.model) != c.config_hash) {
    throw ConfigError(path + ": config hash " + json::HexHash(c.config_hash) + " does not match the stored model config (" +
                      json::HexHash(model::ConfigHash(c.model)) + ")");
  }
  for (auto* dst : {&c.values, &c.m, &c.v}) {
    for (const auto& shape : c.shapes) dst->push_back(ReadFloats(in, diff::NumElements(shape), path));
  }
  in.peek();
  if (!in.eof()) throw IoError(path + ": trailing bytes after payload");
  return c;
}

void CaptureParameters(const diff::ParameterList<float>& params, const diff::AdamState<float>& adam, Checkpoint& c) {
  c.names.clear();
  c.shapes.clear();
  c.values.clear();
  for (const auto& [name, t] : params) {
    c.names.push_back(name);
    c.shapes.push_back(t.shape());
    c.values.emplace_back(t.data().begin(), t.data().end());
  }
  c.m = adam.m;
  c.v = adam.v;
  c.adam = adam.config;
  c.adam_step = adam.step;
}

void RestoreParameters(const Checkpoint& c, diff::ParameterList<float>& params, diff::AdamState<float>* adam) {
  if (params.size() != c.names.size()) {
    throw ConfigError("checkpoint has " + std::to_string(c.names.size()) + " parameters, the model has " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.name(i) != c.names[i] || params[i].shape() != c.shapes[i]) {
      throw ConfigError("checkpoint parameter " + c.names[i] + " " + diff::ShapeString(c.shapes[i]) + " does not match " +
                        params.name(i) + " " + diff::ShapeString(params[i].shape()));
    }
    auto dst = params[i].mutable_data();
    std::copy(c.values[i].begin(), c.values[i].end(), dst.begin());
  }
  if (adam) {
    adam->config = c.adam;
    adam->step = c.adam_step;
    adam->m = c.m;
    adam->v = c.v;
  }
}

diff::ParameterList<float> TrainedModel::Parameters() const {
  auto p = model.Parameters();
  p.Append("loss.", loss.Parameters());
  return p;
}

TrainedModel LoadTrainedModel(const std::string& path) {
  TrainedModel t{LoadCheckpoint(path), {}, {}};
  t.model = model::RelformerModel<float>(t.meta.model, 0);
  t.loss = objective::LossParams<float>(t.meta.model.init_s_dx, t.meta.model.init_s_rot);
  auto params = t.Parameters();
  RestoreParameters(t.meta, params, nullptr);
  return t;
}

}  // namespace relformer::pipeline
